#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "udsp/decoding.hpp"
#include "udsp/io.hpp"
#include "udsp/metrics.hpp"
#include "udsp/model.hpp"

namespace udsp {

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

struct Prediction {
  std::string id;
  UDTree sentence;              // input tokens; heads/deprels are the prediction when `tree` is set
  std::optional<UDTree> tree;   // predicted UD tree (modes with syntax)
  UDSGraph graph;               // predicted semantic graph (modes with a decoder)
  Arborescence arborescence;    // decoded arborescence incl. syntactic nodes
  bool has_semantics = false;   // false when the mode has no decoder
  std::vector<std::string> warnings;
};

std::vector<Prediction> predict(Parser& parser, const Corpus& corpus);

// Gold structure with predicted attributes per entry; empty graphs for
// entries without gold semantics or when the mode has no decoder.
std::vector<UDSGraph> oracle_predict(Parser& parser, const Corpus& corpus);

// Prediction files under a common prefix: <prefix>.jsonl (UDS JSON-lines
// plus the decoded arborescence), <prefix>.conllu (predicted trees, when the
// mode has syntax) and <prefix>.oracle.jsonl (oracle-decoded attributes).
void write_predictions(const std::string& prefix, const std::vector<Prediction>& predictions,
                       const std::vector<UDSGraph>* oracle);

struct PredictionFiles {
  std::vector<Prediction> predictions;
  std::optional<std::vector<UDSGraph>> oracle;
};

PredictionFiles read_predictions(const std::string& prefix);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
  int restarts = 10;
  std::uint64_t seed = 0;
};

// Threshold tuning data; when absent, thresholds are tuned on the evaluated
// data itself and a warning is recorded.
struct AttributeDev {
  const Corpus* gold = nullptr;
  const std::vector<UDSGraph>* oracle = nullptr;
};

MetricsReport evaluate(const Corpus& gold, const std::vector<Prediction>& predictions,
                       const std::vector<UDSGraph>* oracle, const AttributeDev* dev, const EvalOptions& options);

// Corpus-level S-score counts of the predictions against the gold graphs.
SScoreCounts s_score_corpus(const Corpus& gold, const std::vector<Prediction>& predictions, bool include_syntax,
                            int restarts, Rng& rng);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepRecord {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> grad_norms;  // by Parser::gradient_groups()
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::map<std::string, double> components;
  std::optional<double> dev_score;
  nlohmann::json dev_metrics;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  int eval_every = 1;          // epochs between development evaluations
  bool restore_best = true;    // end with the best development checkpoint
  bool record_steps = true;
  EvalOptions eval;
  // Starting parameters; names and shapes must match the new model.
  const Parser* init = nullptr;
  // Called after every epoch; returning true stops training.
  std::function<bool(const EpochRecord&, Parser&)> on_epoch;
};

struct TrainResult {
  Parser parser;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  int best_epoch = 0;
  double best_score = 0.0;
  std::string stop_reason;
};

// Throws ConfigError when the corpus lacks the supervision the mode needs.
void check_supervision(const ModelConfig& config, const Corpus& corpus);

// Development metric that drives early stopping: LAS in BI mode, semantic
// S-score F1 otherwise.
double dev_score(const ModelConfig& config, const MetricsReport& report);

TrainResult train(const ModelConfig& config, const Vocabulary& vocab, const Corpus& train_data, const Corpus& dev_data,
                  const TrainOptions& options);

}  // namespace udsp
