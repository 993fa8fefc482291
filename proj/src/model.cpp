#include "udsp/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "udsp/error.hpp"

namespace udsp {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Modes and configuration
// ---------------------------------------------------------------------------

Mode parse_mode(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "base") return Mode::kBase;
  if (s == "bi") return Mode::kBi;
  if (s == "cb") return Mode::kCb;
  if (s == "ca") return Mode::kCa;
  if (s == "en") return Mode::kEn;
  if (s == "in") return Mode::kIn;
  throw ConfigError("unknown mode '" + name + "' (expected base, bi, cb, ca, en or in)");
}

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kBase: return "base";
    case Mode::kBi: return "bi";
    case Mode::kCb: return "cb";
    case Mode::kCa: return "ca";
    case Mode::kEn: return "en";
    case Mode::kIn: return "in";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  need(layers >= 1, "layers must be >= 1");
  need(heads >= 1, "heads must be >= 1");
  need(d_model >= 2 && d_model % heads == 0, "d_model must be divisible by heads");
  need(d_ff >= 1 && d_head >= 1 && d_type >= 1 && d_attr >= 1, "layer widths must be positive");
  need(max_positions >= 2, "max_positions must be >= 2");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  need(init_scale > 0.0, "init_scale must be positive");
  need(warmup >= 1, "warmup must be >= 1");
  need(lr > 0.0, "lr must be positive");
  need(frozen_encoder_layers >= 0 && frozen_encoder_layers <= layers, "frozen_encoder_layers must be in [0, layers]");
  need(max_decode_factor >= 0 && max_decode_extra >= 1, "max decode length must be positive");
  for (double w : {weights.node, weights.edge, weights.label, weights.syntax, weights.attr_value, weights.attr_mask}) {
    need(w >= 0.0, "loss weights must be >= 0");
  }
  need(batch_size >= 1 && epochs >= 0 && patience >= 1 && min_count >= 1 && restarts >= 1,
       "training loop settings must be positive");
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"layers", c.layers},
      {"heads", c.heads},
      {"d_model", c.d_model},
      {"d_ff", c.d_ff},
      {"d_head", c.d_head},
      {"d_type", c.d_type},
      {"d_attr", c.d_attr},
      {"max_positions", c.max_positions},
      {"dropout", c.dropout},
      {"init_scale", c.init_scale},
      {"warmup", c.warmup},
      {"lr", c.lr},
      {"mode", to_string(c.mode)},
      {"frozen_encoder_layers", c.frozen_encoder_layers},
      {"max_decode_factor", c.max_decode_factor},
      {"max_decode_extra", c.max_decode_extra},
      {"weights",
       {{"node", c.weights.node},
        {"edge", c.weights.edge},
        {"label", c.weights.label},
        {"syntax", c.weights.syntax},
        {"attr_value", c.weights.attr_value},
        {"attr_mask", c.weights.attr_mask}}},
      {"semantics_only", c.semantics_only},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"patience", c.patience},
      {"min_count", c.min_count},
      {"restarts", c.restarts},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "layers") c.layers = v.get<int>();
      else if (key == "heads") c.heads = v.get<int>();
      else if (key == "d_model") c.d_model = v.get<int>();
      else if (key == "d_ff") c.d_ff = v.get<int>();
      else if (key == "d_head") c.d_head = v.get<int>();
      else if (key == "d_type") c.d_type = v.get<int>();
      else if (key == "d_attr") c.d_attr = v.get<int>();
      else if (key == "max_positions") c.max_positions = v.get<int>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "init_scale") c.init_scale = v.get<double>();
      else if (key == "warmup") c.warmup = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
      else if (key == "frozen_encoder_layers") c.frozen_encoder_layers = v.get<int>();
      else if (key == "max_decode_factor") c.max_decode_factor = v.get<int>();
      else if (key == "max_decode_extra") c.max_decode_extra = v.get<int>();
      else if (key == "semantics_only") c.semantics_only = v.get<bool>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "patience") c.patience = v.get<int>();
      else if (key == "min_count") c.min_count = v.get<int>();
      else if (key == "restarts") c.restarts = v.get<int>();
      else if (key == "weights") {
        for (const auto& [wk, wv] : v.items()) {
          double w = wv.get<double>();
          if (wk == "node") c.weights.node = w;
          else if (wk == "edge") c.weights.edge = w;
          else if (wk == "label") c.weights.label = w;
          else if (wk == "syntax") c.weights.syntax = w;
          else if (wk == "attr_value") c.weights.attr_value = w;
          else if (wk == "attr_mask") c.weights.attr_mask = w;
          else throw ConfigError("unknown loss weight '" + wk + "'");
        }
      } else {
        throw ConfigError("unknown config field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

namespace {

std::vector<TargetNode> semantic_nodes(const UDTree& tree, const UDSGraph& graph, const Vocabulary& vocab,
                                       bool semantics_only) {
  std::vector<std::string> ids;
  const Arborescence arb = uds_to_arborescence(graph, tree, semantics_only, &ids);
  const auto order = linearization_order(arb);
  std::vector<int> position(arb.size(), 0);
  for (std::size_t p = 0; p < order.size(); ++p) position[order[p]] = static_cast<int>(p) + 1;
  std::set<int> seen;
  std::vector<TargetNode> out;
  for (int u : order) {
    const auto& node = arb.nodes[u];
    TargetNode t;
    t.label = node.label;
    t.label_id = vocab.tokens.id(node.label);
    t.source = node.source_index.value_or(0);
    t.coindex = node.coindex;
    t.head = position[arb.parent[u]];
    t.edge_label = arb.edge_label[u];
    t.edge_label_id = vocab.edge_labels.id(t.edge_label);
    t.kind = node.kind;
    t.segment = Segment::kSemantic;
    t.is_copy = !seen.insert(node.coindex).second;
    t.node_id = ids[u];
    t.node_attrs = arb.node_attrs[u];
    t.edge_attrs = arb.edge_attrs[u];
    out.push_back(std::move(t));
  }
  return out;
}

// Pre-order over the UD tree, children by token index.
std::vector<TargetNode> syntax_nodes(const UDTree& tree, const Vocabulary& vocab) {
  const int n = static_cast<int>(tree.size());
  std::vector<std::vector<int>> kids(n + 1);
  for (int t = 1; t <= n; ++t) kids[tree.heads[t - 1]].push_back(t);
  std::vector<int> position(n + 1, 0);
  std::vector<TargetNode> out;
  std::vector<int> stack(kids[0].rbegin(), kids[0].rend());
  while (!stack.empty()) {
    int t = stack.back();
    stack.pop_back();
    TargetNode node;
    node.label = tree.form(t);
    node.label_id = vocab.tokens.id(node.label);
    node.source = t;
    node.coindex = t;
    node.head = position[tree.heads[t - 1]];
    node.edge_label = kSyntaxEdgePrefix + tree.deprels[t - 1];
    node.edge_label_id = vocab.edge_labels.id(node.edge_label);
    node.kind = NodeKind::kSyntactic;
    node.segment = Segment::kSyntax;
    out.push_back(std::move(node));
    position[t] = static_cast<int>(out.size());
    for (auto it = kids[t].rbegin(); it != kids[t].rend(); ++it) stack.push_back(*it);
  }
  return out;
}

void append_segment(std::vector<TargetNode>& seq, std::vector<TargetNode> part) {
  const int offset = static_cast<int>(seq.size());
  for (auto& n : part) {
    if (n.head > 0) n.head += offset;
    seq.push_back(std::move(n));
  }
}

TargetNode separator_node() {
  TargetNode sep;
  sep.label = kSepSymbol;
  sep.label_id = SymbolTable::kSep;
  sep.edge_label = kSepSymbol;
  sep.edge_label_id = SymbolTable::kSep;
  sep.segment = Segment::kSeparator;
  return sep;
}

}  // namespace

TargetSequence build_target(const UDTree& tree, const UDSGraph* graph, const Vocabulary& vocab,
                            const ModelConfig& config) {
  TargetSequence target;
  auto& seq = target.nodes;
  std::vector<TargetNode> sem;
  if (graph && !graph->empty()) sem = semantic_nodes(tree, *graph, vocab, config.semantics_only);
  if (config.mode == Mode::kCb) {
    append_segment(seq, syntax_nodes(tree, vocab));
    seq.push_back(separator_node());
    append_segment(seq, std::move(sem));
  } else if (config.mode == Mode::kCa) {
    append_segment(seq, std::move(sem));
    seq.push_back(separator_node());
    append_segment(seq, syntax_nodes(tree, vocab));
  } else {
    append_segment(seq, std::move(sem));
  }
  // Coindices become the position of their first occurrence, which is also
  // what the decoder assigns while generating.
  std::map<std::pair<int, int>, int> first;  // (segment, coindex) -> position
  for (std::size_t p = 0; p < seq.size(); ++p) {
    auto key = std::make_pair(static_cast<int>(seq[p].segment), seq[p].segment == Segment::kSeparator ? -1 : seq[p].coindex);
    auto [it, fresh] = first.emplace(key, static_cast<int>(p) + 1);
    seq[p].coindex = it->second;
    if (!fresh) seq[p].is_copy = true;
  }

  target.inputs.push_back(DecoderInput{SymbolTable::kBos, 0, SymbolTable::kBos, 0, SymbolTable::kBos});
  for (const auto& n : seq) {
    DecoderInput in;
    in.token = n.label_id;
    in.coindex = n.coindex;
    if (n.head == 0) {
      in.head_token = SymbolTable::kRoot;
      in.head_coindex = 0;
    } else {
      in.head_token = seq[n.head - 1].label_id;
      in.head_coindex = seq[n.head - 1].coindex;
    }
    in.edge_label = n.edge_label_id;
    target.inputs.push_back(in);
  }
  return target;
}

Example make_example(const CorpusEntry& entry, const Vocabulary& vocab, const ModelConfig& config) {
  Example ex;
  ex.id = entry.id;
  for (const auto& t : entry.tree.tokens) {
    ex.tokens.push_back(vocab.tokens.id(t.form));
    ex.upos.push_back(vocab.upos.id(t.upos));
  }
  ex.heads = entry.tree.heads;
  for (const auto& r : entry.tree.deprels) ex.relations.push_back(vocab.relations.id(r));
  ex.has_graph = entry.graph && !entry.graph->empty();
  if (mode_uses_decoder(config.mode) && (ex.has_graph || mode_is_concat(config.mode))) {
    ex.target = build_target(entry.tree, ex.has_graph ? &*entry.graph : nullptr, vocab, config);
  }
  return ex;
}

std::vector<double> self_attachment_mask(std::size_t tokens) {
  std::vector<double> mask(tokens * (tokens + 1), 0.0);
  for (std::size_t i = 0; i < tokens; ++i) mask[i * (tokens + 1) + i + 1] = ad::kNegInf;
  return mask;
}

Tensor sinusoid(std::size_t first, std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    const double pos = static_cast<double>(first + r);
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      v[r * d + i] = std::sin(angle);
      if (i + 1 < d) v[r * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from(n, d, std::move(v));
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

std::string layer_prefix(const char* stack, int l) { return std::string(stack) + ".layer" + std::to_string(l) + "."; }

}  // namespace

void Parser::add_param(const std::string& name, std::size_t rows, std::size_t cols) {
  Tensor t = init_scaled(rows, cols, 1.0, init_rng_);
  t.set_requires_grad(true);
  params_.add(name, t);
}

void Parser::add_gain(const std::string& name) {
  params_.add(name, Tensor::from(1, 1, {std::sqrt(static_cast<double>(config_.d_model))}, true));
}

void Parser::add_bias(const std::string& name, std::size_t cols) { params_.add(name, Tensor::zeros(1, cols, true)); }

void Parser::add_mlp(const std::string& prefix, std::size_t in, std::size_t out) {
  add_param(prefix + "w", in, out);
  add_bias(prefix + "b", out);
}

void Parser::add_attention(const std::string& prefix) {
  const std::size_t d = config_.d_model;
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    Tensor t = init_scaled(d, d, config_.init_scale, init_rng_);
    t.set_requires_grad(true);
    params_.add(prefix + w, t);
  }
}

void Parser::add_biaffine(const std::string& prefix, std::size_t labels) {
  const std::size_t d = config_.d_model, dh = config_.d_head, dt = config_.d_type;
  add_param(prefix + "root", 1, d);
  add_mlp(prefix + "dep_mlp.", d, dh);
  add_mlp(prefix + "head_mlp.", d, dh);
  add_mlp(prefix + "dep_type.", d, dt);
  add_mlp(prefix + "head_type.", d, dt);
  add_param(prefix + "arc_u", dh, dh);
  add_param(prefix + "arc_v", dh, 1);
  add_param(prefix + "label_u", dt * dt, labels);
  add_param(prefix + "label_w", 2 * dt, labels);
  add_bias(prefix + "label_b", labels);
}

Parser::Parser(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)), init_rng_(seed), dropout_rng_(init_rng_.split()) {
  config_.validate();
  const std::size_t d = config_.d_model, dff = config_.d_ff, da = config_.d_attr;
  const std::size_t V = vocab_.tokens.size(), P = vocab_.upos.size(), R = vocab_.relations.size();
  const std::size_t E = vocab_.edge_labels.size();
  const std::size_t An = vocab_.node_attributes.size(), Ae = vocab_.edge_attributes.size();
  const std::size_t maxpos = config_.max_positions;

  add_param("encoder.embed.token", V, d);
  add_param("encoder.embed.upos", P, d);
  for (int l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("encoder", l);
    add_attention(pre + "attn.");
    add_gain(pre + "norm_attn");
    add_gain(pre + "norm_ff");
    add_mlp(pre + "ff.in.", d, dff);
    add_mlp(pre + "ff.out.", dff, d);
  }
  add_gain("encoder.norm_final");

  add_biaffine("syntax.", R);
  if (config_.mode == Mode::kIn) {
    add_param("fusion.w", d + config_.d_head + config_.d_type, d);
  }

  if (mode_uses_decoder(config_.mode)) {
    add_param("decoder.embed.token", V, d);
    add_param("decoder.embed.coindex", maxpos, d);
    add_param("decoder.embed.head_token", V, d);
    add_param("decoder.embed.head_coindex", maxpos, d);
    add_param("decoder.embed.edge_label", E, d);
    for (int l = 0; l < config_.layers; ++l) {
      const auto pre = layer_prefix("decoder", l);
      add_attention(pre + "self.");
      add_attention(pre + "cross.");
      add_gain(pre + "norm_self");
      add_gain(pre + "norm_cross");
      add_gain(pre + "norm_ff");
      add_mlp(pre + "ff.in.", d, dff);
      add_mlp(pre + "ff.out.", dff, d);
    }
    add_gain("decoder.norm_final");
    add_mlp("decoder.generate.", d, V);
    add_param("decoder.source_copy.w", d, d);
    add_param("decoder.target_copy.w", d, d);
    add_mlp("decoder.switch.", d, 3);
    add_biaffine("decoder.relation.", E);
    for (const char* head : {"decoder.node_attr.value.", "decoder.node_attr.mask."}) {
      add_mlp(std::string(head) + "hidden.", d, da);
      add_mlp(std::string(head) + "out.", da, An);
    }
    add_mlp("decoder.edge_attr.bilinear.", d * d, da);
    for (const char* head : {"decoder.edge_attr.value.", "decoder.edge_attr.mask."}) {
      add_mlp(std::string(head) + "hidden.", da, da);
      add_mlp(std::string(head) + "out.", da, Ae);
    }
  }
  freeze_encoder_layers(config_.frozen_encoder_layers);
}

void Parser::freeze_encoder_layers(int n) {
  if (n < 0 || n > config_.layers) throw ConfigError("frozen_encoder_layers must be in [0, layers]");
  config_.frozen_encoder_layers = n;
  for (int l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("encoder", l);
    for (auto& [name, t] : params_.all()) {
      if (name.compare(0, pre.size(), pre) == 0) t.set_requires_grad(l >= n);
    }
  }
}

const std::vector<std::pair<std::string, std::string>>& Parser::gradient_groups() {
  static const std::vector<std::pair<std::string, std::string>> groups = {
      {"encoder", "encoder."}, {"syntax", "syntax."}, {"fusion", "fusion."}, {"decoder", "decoder."}};
  return groups;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

Tensor Parser::linear(const std::string& prefix, const Tensor& x) const {
  return ad::add(ad::matmul(x, p(prefix + "w")), p(prefix + "b"));
}

Tensor Parser::mlp(const std::string& prefix, const Tensor& x, bool) { return ad::relu(linear(prefix, x)); }

Tensor Parser::drop(const Tensor& x, bool training) {
  return ad::dropout(x, config_.dropout, dropout_rng_, training);
}

Tensor Parser::attend(const std::string& prefix, const Tensor& query_in, const Tensor& k, const Tensor& v,
                      const std::vector<double>& mask) const {
  const std::size_t d = config_.d_model, h = config_.heads, dk = d / h;
  const Tensor q = ad::matmul(query_in, p(prefix + "wq"));
  const double s = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> outs;
  for (std::size_t i = 0; i < h; ++i) {
    Tensor qh = ad::slice_cols(q, i * dk, (i + 1) * dk);
    Tensor kh = ad::slice_cols(k, i * dk, (i + 1) * dk);
    Tensor vh = ad::slice_cols(v, i * dk, (i + 1) * dk);
    Tensor a = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), s), mask);
    outs.push_back(ad::matmul(a, vh));
  }
  return ad::matmul(ad::concat_cols(outs), p(prefix + "wo"));
}

Tensor Parser::attribute_heads_value(const std::string& prefix, const Tensor& x, bool training) {
  return linear(prefix + "out.", mlp(prefix + "hidden.", x, training));
}

// ---------------------------------------------------------------------------
// Encoder and syntactic parser
// ---------------------------------------------------------------------------

Tensor Parser::encode(const std::vector<int>& tokens, const std::vector<int>& upos, bool training) {
  if (tokens.empty()) throw Error("cannot encode an empty sentence");
  if (tokens.size() != upos.size()) throw ShapeError("encode: token and POS sequences differ in length");
  const std::size_t T = tokens.size(), d = config_.d_model;
  if (T > static_cast<std::size_t>(config_.max_positions)) throw ConfigError("sentence longer than max_positions");
  Tensor x = ad::add(ad::add(ad::gather_rows(p("encoder.embed.token"), tokens), ad::gather_rows(p("encoder.embed.upos"), upos)),
                     sinusoid(0, T, d));
  x = drop(x, training);
  for (int l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("encoder", l);
    Tensor h = ad::scalenorm(x, p(pre + "norm_attn"));
    Tensor k = ad::matmul(h, p(pre + "attn.wk"));
    Tensor v = ad::matmul(h, p(pre + "attn.wv"));
    x = ad::add(x, drop(attend(pre + "attn.", h, k, v, {}), training));
    h = ad::scalenorm(x, p(pre + "norm_ff"));
    x = ad::add(x, drop(linear(pre + "ff.out.", mlp(pre + "ff.in.", h, training)), training));
  }
  return ad::scalenorm(x, p("encoder.norm_final"));
}

SyntacticParse Parser::syntactic_biaffine(const Tensor& enc, bool training) {
  const Tensor with_root = ad::concat_rows({p("syntax.root"), enc});
  SyntacticParse out;
  out.dep = mlp("syntax.dep_mlp.", enc, training);
  out.head = mlp("syntax.head_mlp.", with_root, training);
  out.dep_type = mlp("syntax.dep_type.", enc, training);
  out.head_type = mlp("syntax.head_type.", with_root, training);
  out.scores = ad::add(ad::matmul(ad::matmul(out.dep, p("syntax.arc_u")), ad::transpose(out.head)),
                       ad::transpose(ad::matmul(out.head, p("syntax.arc_v"))));
  return out;
}

namespace {

Tensor bilinear_labels(const Tensor& dep_type, const Tensor& head_type_sel, const Tensor& u, const Tensor& w,
                       const Tensor& b) {
  return ad::add(ad::add(ad::matmul(ad::row_outer(dep_type, head_type_sel), u),
                         ad::matmul(ad::concat_cols({dep_type, head_type_sel}), w)),
                 b);
}

}  // namespace

Tensor Parser::syntactic_label_scores(const SyntacticParse& parse, const std::vector<int>& heads) {
  return bilinear_labels(parse.dep_type, ad::gather_rows(parse.head_type, heads), p("syntax.label_u"),
                         p("syntax.label_w"), p("syntax.label_b"));
}

Tensor Parser::intermediate_fusion(const Tensor& enc, const SyntacticParse& parse) {
  if (!params_.contains("fusion.w")) throw ConfigError("intermediate fusion is only available in IN mode");
  const std::size_t T = enc.rows();
  if (parse.scores.rows() != T || parse.scores.cols() != T + 1 || parse.head.rows() != T + 1) {
    throw ShapeError("intermediate_fusion: parse " + parse.scores.shape().str() + " does not match encoder output " +
                     enc.shape().str());
  }
  const Tensor probs = ad::softmax_rows(parse.scores, self_attachment_mask(T));
  const Tensor h = ad::matmul(probs, parse.head);
  const Tensor t = ad::matmul(probs, parse.head_type);
  return ad::matmul(ad::concat_cols({enc, h, t}), p("fusion.w"));
}

Tensor Parser::memory(const Tensor& enc, const SyntacticParse* parse) {
  if (config_.mode != Mode::kIn) return enc;
  if (!parse) throw ConfigError("IN mode needs the syntactic parse to build the decoder memory");
  return intermediate_fusion(enc, *parse);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Tensor Parser::embed_decoder_inputs(const std::vector<DecoderInput>& inputs, std::size_t first_position) {
  const int maxpos = config_.max_positions - 1;
  std::vector<int> tok, co, htok, hco, edge;
  for (const auto& in : inputs) {
    tok.push_back(in.token);
    co.push_back(std::min(in.coindex, maxpos));
    htok.push_back(in.head_token);
    hco.push_back(std::min(in.head_coindex, maxpos));
    edge.push_back(in.edge_label);
  }
  Tensor x = ad::gather_rows(p("decoder.embed.token"), tok);
  x = ad::add(x, ad::gather_rows(p("decoder.embed.coindex"), co));
  x = ad::add(x, ad::gather_rows(p("decoder.embed.head_token"), htok));
  x = ad::add(x, ad::gather_rows(p("decoder.embed.head_coindex"), hco));
  x = ad::add(x, ad::gather_rows(p("decoder.embed.edge_label"), edge));
  return ad::add(x, sinusoid(first_position, inputs.size(), config_.d_model));
}

Tensor Parser::decode_all(const Tensor& memory, const std::vector<DecoderInput>& inputs, bool training) {
  if (!mode_uses_decoder(config_.mode)) throw ConfigError("mode bi has no semantic decoder");
  if (inputs.empty()) throw Error("decoder needs at least the BOS step");
  const std::size_t S = inputs.size();
  if (S > static_cast<std::size_t>(config_.max_positions)) throw Error("decoder sequence longer than max_positions");
  std::vector<double> causal(S * S, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = i + 1; j < S; ++j) causal[i * S + j] = ad::kNegInf;
  }
  Tensor x = drop(embed_decoder_inputs(inputs, 0), training);
  for (int l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("decoder", l);
    Tensor h = ad::scalenorm(x, p(pre + "norm_self"));
    Tensor k = ad::matmul(h, p(pre + "self.wk"));
    Tensor v = ad::matmul(h, p(pre + "self.wv"));
    x = ad::add(x, drop(attend(pre + "self.", h, k, v, causal), training));
    h = ad::scalenorm(x, p(pre + "norm_cross"));
    Tensor ck = ad::matmul(memory, p(pre + "cross.wk"));
    Tensor cv = ad::matmul(memory, p(pre + "cross.wv"));
    x = ad::add(x, drop(attend(pre + "cross.", h, ck, cv, {}), training));
    h = ad::scalenorm(x, p(pre + "norm_ff"));
    x = ad::add(x, drop(linear(pre + "ff.out.", mlp(pre + "ff.in.", h, training)), training));
  }
  return ad::scalenorm(x, p("decoder.norm_final"));
}

DecoderState Parser::start_decoder(const Tensor& memory) {
  if (!mode_uses_decoder(config_.mode)) throw ConfigError("mode bi has no semantic decoder");
  ad::NoGradGuard guard;
  DecoderState st;
  st.memory = memory;
  const std::size_t d = config_.d_model;
  for (int l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("decoder", l);
    st.cross_k.push_back(ad::matmul(memory, p(pre + "cross.wk")));
    st.cross_v.push_back(ad::matmul(memory, p(pre + "cross.wv")));
    st.self_k.push_back(Tensor::zeros(0, d));
    st.self_v.push_back(Tensor::zeros(0, d));
  }
  st.z = Tensor::zeros(0, d);
  return st;
}

Tensor Parser::decode_step(DecoderState& st, const DecoderInput& input) {
  ad::NoGradGuard guard;
  const std::size_t pos = st.steps();
  const std::size_t limit = std::min<std::size_t>(config_.max_decode_length(st.memory.rows()) + 1,
                                                  static_cast<std::size_t>(config_.max_positions));
  if (pos >= limit) {
    throw Error("decoder step " + std::to_string(pos + 1) + " exceeds the maximum decode length");
  }
  Tensor x = embed_decoder_inputs({input}, pos);
  for (int l = 0; l < config_.layers; ++l) {
    const auto pre = layer_prefix("decoder", l);
    Tensor h = ad::scalenorm(x, p(pre + "norm_self"));
    st.self_k[l] = ad::concat_rows({st.self_k[l], ad::matmul(h, p(pre + "self.wk"))});
    st.self_v[l] = ad::concat_rows({st.self_v[l], ad::matmul(h, p(pre + "self.wv"))});
    x = ad::add(x, attend(pre + "self.", h, st.self_k[l], st.self_v[l], {}));
    h = ad::scalenorm(x, p(pre + "norm_cross"));
    x = ad::add(x, attend(pre + "cross.", h, st.cross_k[l], st.cross_v[l], {}));
    h = ad::scalenorm(x, p(pre + "norm_ff"));
    x = ad::add(x, linear(pre + "ff.out.", mlp(pre + "ff.in.", h, false)));
  }
  Tensor z = ad::scalenorm(x, p("decoder.norm_final"));
  st.z = ad::concat_rows({st.z, z});
  st.inputs.push_back(input);
  return z;
}

// Row i of z predicts node i+1. The key of node k (for target copy and head
// selection) is row k, the first step whose input describes node k.
LabelDistribution Parser::label_distribution(const Tensor& z, const Tensor& memory) {
  const std::size_t S = z.rows(), V = vocab_.tokens.size(), d = config_.d_model;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  LabelDistribution out;

  std::vector<double> gen_mask(S * V, 0.0);
  for (std::size_t r = 0; r < S; ++r) {
    for (int id : {SymbolTable::kPad, SymbolTable::kUnk, SymbolTable::kBos, SymbolTable::kRoot}) {
      gen_mask[r * V + id] = ad::kNegInf;
    }
    if (!mode_is_concat(config_.mode)) gen_mask[r * V + SymbolTable::kSep] = ad::kNegInf;
  }
  out.generate = ad::softmax_rows(linear("decoder.generate.", z), gen_mask);
  out.source = ad::softmax_rows(ad::scale(ad::matmul(ad::matmul(z, p("decoder.source_copy.w")), ad::transpose(memory)), s));

  const std::size_t N = S == 0 ? 0 : S - 1;
  const Tensor keys = ad::slice_rows(z, std::min<std::size_t>(1, S), S);
  std::vector<double> tgt_mask(S * N, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t c = i; c < N; ++c) tgt_mask[i * N + c] = ad::kNegInf;
  }
  out.target = ad::softmax_rows(ad::scale(ad::matmul(ad::matmul(z, p("decoder.target_copy.w")), ad::transpose(keys)), s),
                                tgt_mask);

  std::vector<double> sw_mask(S * 3, 0.0);
  if (S > 0) sw_mask[2] = ad::kNegInf;  // nothing to copy before the first node
  out.switch_probs = ad::softmax_rows(linear("decoder.switch.", z), sw_mask);
  out.mixture = ad::concat_cols({ad::multiply(ad::slice_cols(out.switch_probs, 0, 1), out.generate),
                                 ad::multiply(ad::slice_cols(out.switch_probs, 1, 2), out.source),
                                 ad::multiply(ad::slice_cols(out.switch_probs, 2, 3), out.target)});
  return out;
}

Tensor Parser::head_candidates(const Tensor& z_keys) {
  return ad::concat_rows({p("decoder.relation.root"), z_keys});
}

Tensor Parser::semantic_head_scores(const Tensor& z_dep, const Tensor& z_keys) {
  const Tensor dep = mlp("decoder.relation.dep_mlp.", z_dep, false);
  const Tensor head = mlp("decoder.relation.head_mlp.", head_candidates(z_keys), false);
  return ad::add(ad::matmul(ad::matmul(dep, p("decoder.relation.arc_u")), ad::transpose(head)),
                 ad::transpose(ad::matmul(head, p("decoder.relation.arc_v"))));
}

Tensor Parser::semantic_label_scores(const Tensor& z_dep, const Tensor& z_keys, const std::vector<int>& heads) {
  const Tensor dep_t = mlp("decoder.relation.dep_type.", z_dep, false);
  const Tensor head_t = mlp("decoder.relation.head_type.", head_candidates(z_keys), false);
  return bilinear_labels(dep_t, ad::gather_rows(head_t, heads), p("decoder.relation.label_u"),
                         p("decoder.relation.label_w"), p("decoder.relation.label_b"));
}

AttributePrediction Parser::node_attributes(const Tensor& z) {
  return {attribute_heads_value("decoder.node_attr.value.", z, false),
          attribute_heads_value("decoder.node_attr.mask.", z, false)};
}

AttributePrediction Parser::edge_attributes(const Tensor& z_head, const Tensor& z_dep) {
  const Tensor b = mlp("decoder.edge_attr.bilinear.", ad::row_outer(z_head, z_dep), false);
  return {attribute_heads_value("decoder.edge_attr.value.", b, false),
          attribute_heads_value("decoder.edge_attr.mask.", b, false)};
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

// Combines two masked means into the mean over the union of their entries.
Tensor pooled(const Tensor& a, std::size_t na, const Tensor& b, std::size_t nb) {
  const std::size_t n = na + nb;
  if (n == 0) return Tensor::scalar(0.0);
  return ad::add(ad::scale(a, static_cast<double>(na) / static_cast<double>(n)),
                 ad::scale(b, static_cast<double>(nb) / static_cast<double>(n)));
}

std::size_t count_set(const std::vector<char>& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
}

bool is_semantic_edge(const TargetNode& n) {
  return n.segment == Segment::kSemantic && n.kind == NodeKind::kSemantic && n.head > 0;
}

}  // namespace

Tensor Parser::example_loss(const Example& ex, bool training, std::map<std::string, double>& parts) {
  const auto& w = config_.weights;
  const std::size_t T = ex.tokens.size();
  Tensor enc = encode(ex.tokens, ex.upos, training);
  Tensor total = Tensor::scalar(0.0);
  auto add_part = [&](const char* name, const Tensor& value, double weight) {
    parts[name] += value.item();
    total = ad::add(total, ad::scale(value, weight));
  };

  std::optional<SyntacticParse> parse;
  if (mode_uses_biaffine(config_.mode)) {
    if (ex.heads.size() != T || ex.relations.size() != T) throw ConfigError("sentence '" + ex.id + "' lacks a UD tree");
    parse = syntactic_biaffine(enc, training);
    Tensor arc = ad::cross_entropy(parse->scores, ex.heads, self_attachment_mask(T));
    Tensor lab = ad::cross_entropy(syntactic_label_scores(*parse, ex.heads), ex.relations);
    add_part("syntax", ad::add(arc, lab), w.syntax);
  } else {
    add_part("syntax", Tensor::scalar(0.0), w.syntax);
  }

  const auto& nodes = ex.target.nodes;
  const bool decode = mode_uses_decoder(config_.mode) && !ex.target.inputs.empty();
  if (mode_uses_decoder(config_.mode) && !mode_uses_biaffine(config_.mode) && !decode) {
    throw ConfigError("sentence '" + ex.id + "' has no semantic graph, which mode " + to_string(config_.mode) +
                      " requires");
  }
  if (!decode) {
    for (const char* name : {"node", "edge", "label", "attr_value", "attr_mask"}) add_part(name, Tensor::scalar(0.0), 0.0);
    return total;
  }

  const Tensor mem = memory(enc, parse ? &*parse : nullptr);
  const Tensor z = decode_all(mem, ex.target.inputs, training);
  const std::size_t N = nodes.size(), S = N + 1, V = vocab_.tokens.size();
  const std::size_t C = V + T + N;

  // Node labels: probability mass of every gold option.
  LabelDistribution dist = label_distribution(z, mem);
  std::vector<double> gold(S * C, 0.0);
  for (std::size_t p = 1; p <= N; ++p) {
    const auto& n = nodes[p - 1];
    double* row = gold.data() + (p - 1) * C;
    if (n.segment == Segment::kSeparator) {
      row[SymbolTable::kSep] = 1.0;
    } else if (n.is_copy) {
      for (std::size_t k = 1; k < p; ++k) {
        if (nodes[k - 1].coindex == n.coindex && nodes[k - 1].segment == n.segment) row[V + T + k - 1] = 1.0;
      }
    } else {
      if (n.segment != Segment::kSyntax && n.label_id != SymbolTable::kUnk) row[n.label_id] = 1.0;
      if (n.source > 0) row[V + n.source - 1] = 1.0;
    }
  }
  gold[N * C + SymbolTable::kEos] = 1.0;
  const Tensor mass = ad::row_sum(ad::multiply(dist.mixture, Tensor::from(S, C, std::move(gold))));
  add_part("node", ad::scale(ad::mean(ad::log(ad::add(mass, Tensor::scalar(1e-12)))), -1.0), w.node);

  if (N == 0) {
    for (const char* name : {"edge", "label", "attr_value", "attr_mask"}) add_part(name, Tensor::scalar(0.0), 0.0);
    return total;
  }

  // Heads and edge labels.
  const Tensor z_dep = ad::slice_rows(z, 0, N);
  const Tensor z_keys = ad::slice_rows(z, 1, N + 1);
  std::vector<double> head_mask(N * (N + 1), ad::kNegInf);
  std::vector<int> heads(N), labels(N);
  for (std::size_t p = 1; p <= N; ++p) {
    const auto& n = nodes[p - 1];
    heads[p - 1] = n.head;
    labels[p - 1] = n.edge_label_id;
    double* row = head_mask.data() + (p - 1) * (N + 1);
    row[0] = 0.0;
    if (n.segment == Segment::kSeparator) continue;
    for (std::size_t k = 1; k < p; ++k) {
      if (nodes[k - 1].segment == n.segment) row[k] = 0.0;
    }
  }
  add_part("edge", ad::cross_entropy(semantic_head_scores(z_dep, z_keys), heads, head_mask), w.edge);
  add_part("label", ad::cross_entropy(semantic_label_scores(z_dep, z_keys, heads), labels), w.label);

  // Attributes. Node attributes live on the first occurrence of semantic
  // nodes; edge attributes on semantic edges below ROOT.
  const auto& nattr = vocab_.node_attributes;
  const auto& eattr = vocab_.edge_attributes;
  std::vector<double> nv(N * nattr.size(), 0.0), na(N * nattr.size(), 0.0);
  std::vector<char> nv_mask(N * nattr.size(), 0), na_mask(N * nattr.size(), 0);
  std::vector<int> erows, eheads;
  for (std::size_t p = 1; p <= N; ++p) {
    const auto& n = nodes[p - 1];
    if (n.segment == Segment::kSemantic && n.kind == NodeKind::kSemantic && !n.is_copy) {
      for (std::size_t a = 0; a < nattr.size(); ++a) {
        const std::size_t i = (p - 1) * nattr.size() + a;
        na_mask[i] = 1;
        auto it = n.node_attrs.find(nattr[a]);
        if (it != n.node_attrs.end() && it->second.applies) {
          nv[i] = it->second.value;
          nv_mask[i] = 1;
          na[i] = 1.0;
        }
      }
    }
    if (is_semantic_edge(n)) {
      erows.push_back(static_cast<int>(p - 1));
      eheads.push_back(n.head);
    }
  }
  std::size_t n_value = 0, n_mask = 0, e_value = 0, e_mask = 0;
  Tensor node_value_loss = Tensor::scalar(0.0), node_mask_loss = Tensor::scalar(0.0);
  if (!nattr.empty()) {
    AttributePrediction pred = node_attributes(z_keys);
    n_value = count_set(nv_mask);
    n_mask = count_set(na_mask);
    node_value_loss = ad::mean_squared_error(pred.value, nv, nv_mask);
    node_mask_loss = ad::binary_cross_entropy(pred.mask, na, na_mask);
  }
  Tensor edge_value_loss = Tensor::scalar(0.0), edge_mask_loss = Tensor::scalar(0.0);
  if (!eattr.empty() && !erows.empty()) {
    const std::size_t M = erows.size();
    std::vector<double> ev(M * eattr.size(), 0.0), ea(M * eattr.size(), 0.0);
    std::vector<char> ev_mask(M * eattr.size(), 0), ea_mask(M * eattr.size(), 1);
    for (std::size_t r = 0; r < M; ++r) {
      const auto& n = nodes[erows[r]];
      for (std::size_t a = 0; a < eattr.size(); ++a) {
        auto it = n.edge_attrs.find(eattr[a]);
        if (it != n.edge_attrs.end() && it->second.applies) {
          ev[r * eattr.size() + a] = it->second.value;
          ev_mask[r * eattr.size() + a] = 1;
          ea[r * eattr.size() + a] = 1.0;
        }
      }
    }
    const Tensor head_rep = ad::gather_rows(head_candidates(z_keys), eheads);
    const Tensor dep_rep = ad::gather_rows(z_keys, erows);
    AttributePrediction pred = edge_attributes(head_rep, dep_rep);
    e_value = count_set(ev_mask);
    e_mask = ea_mask.size();
    edge_value_loss = ad::mean_squared_error(pred.value, ev, ev_mask);
    edge_mask_loss = ad::binary_cross_entropy(pred.mask, ea, ea_mask);
  }
  add_part("attr_value", pooled(node_value_loss, n_value, edge_value_loss, e_value), w.attr_value);
  add_part("attr_mask", pooled(node_mask_loss, n_mask, edge_mask_loss, e_mask), w.attr_mask);
  return total;
}

LossOutput Parser::compute_loss(const std::vector<const Example*>& batch, bool training) {
  if (batch.empty()) throw Error("compute_loss on an empty batch");
  std::map<std::string, double> sums;
  std::vector<Tensor> totals;
  for (const Example* ex : batch) totals.push_back(example_loss(*ex, training, sums));
  LossOutput out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tensor sum = totals.size() == 1 ? totals[0] : ad::sum(ad::concat_rows(totals));
  out.total = ad::scale(sum, inv);
  for (auto& [name, v] : sums) out.components[name] = v * inv;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence and transfer
// ---------------------------------------------------------------------------

void Parser::save(const std::string& path) const {
  nlohmann::json meta = {{"format", "udsp-parser"},
                         {"config", config_to_json(config_)},
                         {"vocab", vocab_to_json(vocab_)},
                         {"vocab_fingerprint", vocab_.fingerprint()}};
  save_parameters(path, params_, meta);
}

Parser Parser::load(const std::string& path) {
  LoadedParameters loaded = load_parameters(path);
  const auto& meta = loaded.metadata;
  if (meta.value("format", "") != "udsp-parser") throw ConfigError("'" + path + "' is not a parser checkpoint");
  Vocabulary vocab = vocab_from_json(meta.at("vocab"));
  if (vocab.fingerprint() != meta.at("vocab_fingerprint").get<std::string>()) {
    throw ConfigError("'" + path + "': vocabulary does not match its recorded fingerprint");
  }
  Parser parser(config_from_json(meta.at("config")), std::move(vocab), 0);
  if (loaded.tensors.size() != parser.params_.size()) {
    throw ShapeError("'" + path + "' holds " + std::to_string(loaded.tensors.size()) + " parameters, expected " +
                     std::to_string(parser.params_.size()));
  }
  for (auto& [name, t] : parser.params_.all()) {
    auto it = loaded.tensors.find(name);
    if (it == loaded.tensors.end()) throw ShapeError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "': checkpoint shape " + it->second.shape().str() + ", model shape " +
                       t.shape().str());
    }
    std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
  }
  return parser;
}

Component parse_component(const std::string& name) {
  if (name == "encoder") return Component::kEncoder;
  if (name == "biaffine" || name == "syntactic_biaffine") return Component::kSyntacticBiaffine;
  if (name == "embeddings") return Component::kEmbeddings;
  throw ConfigError("unknown component '" + name + "' (expected encoder, biaffine or embeddings)");
}

namespace {

// Which vocabulary indexes rows (axis 0) or columns (axis 1) of a parameter.
const SymbolTable* symbol_axis(const std::string& name, const Vocabulary& v, int& axis) {
  if (name == "encoder.embed.token") return axis = 0, &v.tokens;
  if (name == "encoder.embed.upos") return axis = 0, &v.upos;
  if (name == "syntax.label_u" || name == "syntax.label_w" || name == "syntax.label_b") return axis = 1, &v.relations;
  return nullptr;
}

}  // namespace

void transfer_init(Parser& target, const Parser& source, const std::vector<Component>& components,
                   std::vector<std::string>* warnings) {
  std::vector<std::string> prefixes;
  for (Component c : components) {
    switch (c) {
      case Component::kEncoder: prefixes.push_back("encoder."); break;
      case Component::kSyntacticBiaffine: prefixes.push_back("syntax."); break;
      case Component::kEmbeddings: prefixes.push_back("encoder.embed."); break;
    }
  }
  const bool same_vocab = target.vocab().fingerprint() == source.vocab().fingerprint();
  if (!same_vocab && warnings) {
    warnings->push_back("vocabulary fingerprint mismatch (" + source.vocab().fingerprint() + " vs " +
                        target.vocab().fingerprint() + "); remapping shared symbols by name");
  }
  for (const auto& pre : prefixes) {
    if (pre == "encoder." && target.config().heads != source.config().heads) {
      throw ConfigError("cannot transfer the encoder between models with different head counts");
    }
  }
  for (auto& [name, dst] : target.params().all()) {
    bool selected = false;
    for (const auto& pre : prefixes) selected = selected || name.compare(0, pre.size(), pre) == 0;
    if (!selected) continue;
    if (!source.params().contains(name)) throw ShapeError("source model lacks parameter '" + name + "'");
    const Tensor& src = source.params().at(name);
    if (src.shape() == dst.shape() && same_vocab) {
      std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
      continue;
    }
    int axis = 0;
    const SymbolTable* dst_table = symbol_axis(name, target.vocab(), axis);
    const SymbolTable* src_table = symbol_axis(name, source.vocab(), axis);
    if (!dst_table) {
      if (src.shape() != dst.shape()) {
        throw ShapeError("parameter '" + name + "': source shape " + src.shape().str() + ", target shape " +
                         dst.shape().str());
      }
      std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
      continue;
    }
    const std::size_t other_dst = axis == 0 ? dst.cols() : dst.rows();
    const std::size_t other_src = axis == 0 ? src.cols() : src.rows();
    if (other_dst != other_src) {
      throw ShapeError("parameter '" + name + "': source shape " + src.shape().str() + ", target shape " +
                       dst.shape().str());
    }
    auto out = dst.mutable_data();
    for (int i = 0; i < dst_table->size(); ++i) {
      const std::string& sym = dst_table->symbol(i);
      if (!src_table->contains(sym)) continue;
      const int j = src_table->id(sym);
      for (std::size_t k = 0; k < other_dst; ++k) {
        if (axis == 0) {
          out[i * dst.cols() + k] = src.at(j, k);
        } else {
          out[k * dst.cols() + i] = src.at(k, j);
        }
      }
    }
  }
}

}  // namespace udsp
