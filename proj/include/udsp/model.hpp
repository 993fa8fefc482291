#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "udsp/graph.hpp"
#include "udsp/io.hpp"
#include "udsp/optim.hpp"
#include "udsp/rng.hpp"
#include "udsp/tensor.hpp"

namespace udsp {

// BASE: semantics only. BI: syntax only (biaffine parser, no decoder).
// CB/CA: syntax linearized before/after the semantic target sequence.
// EN: biaffine loss on the encoder states. IN: EN plus the predicted parse
// fused back into the encoder states before decoding.
enum class Mode { kBase, kBi, kCb, kCa, kEn, kIn };

Mode parse_mode(const std::string& name);
const char* to_string(Mode mode);
inline bool mode_uses_decoder(Mode m) { return m != Mode::kBi; }
inline bool mode_uses_biaffine(Mode m) { return m == Mode::kBi || m == Mode::kEn || m == Mode::kIn; }
inline bool mode_is_concat(Mode m) { return m == Mode::kCb || m == Mode::kCa; }

struct LossWeights {
  double node = 1.0;
  double edge = 1.0;
  double label = 1.0;
  double syntax = 1.0;
  double attr_value = 1.0;
  double attr_mask = 1.0;
};

struct ModelConfig {
  int layers = 2;
  int heads = 2;
  int d_model = 16;
  int d_ff = 32;
  int d_head = 16;  // head/dependent MLP width of the biaffine scorers
  int d_type = 8;   // relation-type MLP width
  int d_attr = 16;  // attribute MLP width
  int max_positions = 512;
  double dropout = 0.0;
  double init_scale = 4.0;
  int warmup = 1000;
  double lr = 1.0;
  Mode mode = Mode::kEn;
  int frozen_encoder_layers = 0;
  int max_decode_factor = 2;  // max decoded nodes = factor * T + extra
  int max_decode_extra = 12;
  LossWeights weights;
  bool semantics_only = false;
  // training loop
  int batch_size = 8;
  int epochs = 100;
  int patience = 20;
  int min_count = 1;
  int restarts = 10;

  void validate() const;
  std::size_t max_decode_length(std::size_t sentence_length) const {
    return static_cast<std::size_t>(max_decode_factor) * sentence_length + static_cast<std::size_t>(max_decode_extra);
  }
};

nlohmann::json config_to_json(const ModelConfig& config);
// Missing fields keep their defaults; unknown fields are rejected.
ModelConfig config_from_json(const nlohmann::json& j);

// Categorical features of one decoder input step (the previous node).
struct DecoderInput {
  int token = SymbolTable::kBos;
  int coindex = 0;  // position of the first occurrence of the node's coindex
  int head_token = SymbolTable::kPad;
  int head_coindex = 0;
  int edge_label = SymbolTable::kPad;
};

enum class Segment { kSemantic, kSyntax, kSeparator };

// One node of the decoder target sequence.
struct TargetNode {
  std::string label;
  int label_id = SymbolTable::kUnk;
  int source = 0;  // 1-based token the node is read from, 0 for none
  int coindex = 0;
  int head = 0;  // position of the head node, 0 for ROOT
  std::string edge_label;
  int edge_label_id = SymbolTable::kUnk;
  NodeKind kind = NodeKind::kSemantic;
  Segment segment = Segment::kSemantic;
  bool is_copy = false;  // a later occurrence of a re-entrant node
  std::string node_id;   // source graph node, "" when none
  AttributeMap node_attrs;
  AttributeMap edge_attrs;
};

// Decoder supervision for one sentence. nodes[p-1] is the node at position
// p; decoding ends with an EOS step after the last node.
struct TargetSequence {
  std::vector<TargetNode> nodes;
  std::vector<DecoderInput> inputs;  // nodes.size() + 1 steps, BOS first

  std::size_t steps() const { return nodes.size() + 1; }
};

struct Example {
  std::string id;
  std::vector<int> tokens;
  std::vector<int> upos;
  std::vector<int> heads;      // gold UD heads
  std::vector<int> relations;  // gold UD relation ids
  bool has_graph = false;
  TargetSequence target;  // empty unless the mode decodes something
};

// Builds the target sequence for `mode`: the semantic linearization, and in
// the concat modes the syntactic one joined by a separator node.
TargetSequence build_target(const UDTree& tree, const UDSGraph* graph, const Vocabulary& vocab,
                            const ModelConfig& config);
Example make_example(const CorpusEntry& entry, const Vocabulary& vocab, const ModelConfig& config);

// Biaffine head/label scorer output for the sentence tokens. Row 0 of
// `head` and `head_type` is the learned ROOT vector.
struct SyntacticParse {
  ad::Tensor scores;     // T x (T+1) arc scores, self-attachment not yet masked
  ad::Tensor dep;        // T x d_h
  ad::Tensor head;       // (T+1) x d_h
  ad::Tensor dep_type;   // T x d_t
  ad::Tensor head_type;  // (T+1) x d_t
};

// Additive mask for T x (T+1) arc scores forbidding self-attachment.
std::vector<double> self_attachment_mask(std::size_t tokens);

struct LabelDistribution {
  ad::Tensor switch_probs;  // S x 3 (generate, source copy, target copy)
  ad::Tensor generate;      // S x V
  ad::Tensor source;        // S x T
  ad::Tensor target;        // S x (S-1); column k-1 is node k, row i sees k <= i
  ad::Tensor mixture;       // S x (V + T + S - 1)
};

struct AttributePrediction {
  ad::Tensor value;  // n x A raw values
  ad::Tensor mask;   // n x A logits of "applies"
};

struct DecoderState {
  ad::Tensor memory;
  std::vector<ad::Tensor> cross_k, cross_v;  // per layer
  std::vector<ad::Tensor> self_k, self_v;    // per layer, one row per step
  std::vector<DecoderInput> inputs;
  ad::Tensor z;  // one row per step so far

  std::size_t steps() const { return inputs.size(); }
};

struct LossOutput {
  ad::Tensor total;
  std::map<std::string, double> components;  // weighted sum = total
};

class Parser {
 public:
  Parser(ModelConfig config, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  Rng& dropout_rng() { return dropout_rng_; }

  // Stops gradients for the bottom `n` encoder layers (0 <= n <= L).
  void freeze_encoder_layers(int n);

  ad::Tensor encode(const std::vector<int>& tokens, const std::vector<int>& upos, bool training);
  SyntacticParse syntactic_biaffine(const ad::Tensor& enc, bool training);
  // T x |relations| label scores of each token attached to heads[i].
  ad::Tensor syntactic_label_scores(const SyntacticParse& parse, const std::vector<int>& heads);
  ad::Tensor intermediate_fusion(const ad::Tensor& enc, const SyntacticParse& parse);
  // Decoder input representation: encoder states, fused in IN mode.
  ad::Tensor memory(const ad::Tensor& enc, const SyntacticParse* parse);

  // Teacher-forced pass over all steps: one row of z per input step.
  ad::Tensor decode_all(const ad::Tensor& memory, const std::vector<DecoderInput>& inputs, bool training);
  DecoderState start_decoder(const ad::Tensor& memory);
  // Runs one step (never in training mode) and appends its row to state.z.
  ad::Tensor decode_step(DecoderState& state, const DecoderInput& input);

  // Row i of z (a full or partial decoder pass) predicts node i+1; the key
  // of node k for copying and head selection is row k.
  LabelDistribution label_distribution(const ad::Tensor& z, const ad::Tensor& memory);
  // Scores of each dependent row over heads 0..m: column 0 is ROOT and
  // column k is node k (row k-1 of z_keys). Callers mask heads that do not
  // precede the dependent.
  ad::Tensor semantic_head_scores(const ad::Tensor& z_dep, const ad::Tensor& z_keys);
  // |edge labels| scores per dependent row given its chosen head column.
  ad::Tensor semantic_label_scores(const ad::Tensor& z_dep, const ad::Tensor& z_keys, const std::vector<int>& heads);
  AttributePrediction node_attributes(const ad::Tensor& z);
  AttributePrediction edge_attributes(const ad::Tensor& z_head, const ad::Tensor& z_dep);
  // ROOT vector followed by the node keys.
  ad::Tensor head_candidates(const ad::Tensor& z_keys);

  LossOutput compute_loss(const std::vector<const Example*>& batch, bool training);

  void save(const std::string& path) const;
  static Parser load(const std::string& path);

  // Gradient-norm groups logged during training.
  static const std::vector<std::pair<std::string, std::string>>& gradient_groups();

 private:
  ad::Tensor p(const std::string& name) const { return params_.at(name); }
  void add_param(const std::string& name, std::size_t rows, std::size_t cols);
  void add_gain(const std::string& name);
  void add_bias(const std::string& name, std::size_t cols);
  void add_mlp(const std::string& prefix, std::size_t in, std::size_t out);
  void add_attention(const std::string& prefix);
  void add_biaffine(const std::string& prefix, std::size_t labels);

  ad::Tensor linear(const std::string& prefix, const ad::Tensor& x) const;
  ad::Tensor mlp(const std::string& prefix, const ad::Tensor& x, bool training);
  ad::Tensor attend(const std::string& prefix, const ad::Tensor& query_in, const ad::Tensor& k, const ad::Tensor& v,
                    const std::vector<double>& mask) const;
  ad::Tensor drop(const ad::Tensor& x, bool training);
  ad::Tensor embed_decoder_inputs(const std::vector<DecoderInput>& inputs, std::size_t first_position);
  ad::Tensor attribute_heads_value(const std::string& prefix, const ad::Tensor& x, bool training);
  ad::Tensor example_loss(const Example& ex, bool training, std::map<std::string, double>& parts);

  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore params_;
  Rng init_rng_;
  Rng dropout_rng_;
};

// Sinusoidal position signal, rows = positions first..first+n-1.
ad::Tensor sinusoid(std::size_t first, std::size_t n, std::size_t d);

// Components accepted by transfer_init.
enum class Component { kEncoder, kSyntacticBiaffine, kEmbeddings };
Component parse_component(const std::string& name);

// Copies the named components from a saved parser into `target`. Shapes
// must agree except where vocabularies differ, in which case rows/columns
// indexed by vocabulary symbols are remapped by name (and `warnings` gets
// a note). Throws ShapeError naming the first incompatible parameter.
void transfer_init(Parser& target, const Parser& source, const std::vector<Component>& components,
                   std::vector<std::string>* warnings = nullptr);

}  // namespace udsp
