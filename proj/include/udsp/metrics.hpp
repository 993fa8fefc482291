#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "udsp/graph.hpp"
#include "udsp/io.hpp"
#include "udsp/rng.hpp"

namespace udsp {

// ---------------------------------------------------------------------------
// Attachment scores
// ---------------------------------------------------------------------------

struct AttachmentScores {
  double uas = 0.0;
  double las = 0.0;
  std::size_t tokens = 0;
};

AttachmentScores uas_las(const UDTree& pred, const UDTree& gold);
// Micro-averaged over all tokens of aligned corpora.
AttachmentScores uas_las(const std::vector<UDTree>& pred, const std::vector<UDTree>& gold);

// ---------------------------------------------------------------------------
// S-score
// ---------------------------------------------------------------------------

// Triple rendering of a graph: one instance triple (node, label) per node,
// one relation triple (src, dst, label) per edge and one top triple per root.
struct ScoreGraph {
  std::vector<std::string> labels;
  std::vector<std::tuple<int, int, std::string>> edges;
  std::vector<int> roots;

  std::size_t triples() const { return labels.size() + edges.size() + roots.size(); }
};

// Node labels are the forms of the instance tokens.
ScoreGraph score_graph(const UDSGraph& graph, const UDTree& tree);
// Copies are merged by coindex; syntactic nodes are kept only when
// include_syntax is set.
ScoreGraph score_graph(const Arborescence& arb, bool include_syntax);

// Matched triples under a partial injective node map (pred -> gold, -1 for
// unmapped).
std::size_t matched_triples(const ScoreGraph& pred, const ScoreGraph& gold, const std::vector<int>& map);

struct SScoreCounts {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  SScoreCounts& operator+=(const SScoreCounts& o) {
    matched += o.matched;
    predicted += o.predicted;
    gold += o.gold;
    return *this;
  }
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PRF prf(const SScoreCounts& c);

// Hill climbing over node maps: the first start maps nodes to the earliest
// unused gold node with the same label, later starts are random.
SScoreCounts s_score_counts(const ScoreGraph& pred, const ScoreGraph& gold, int restarts, Rng& rng);
PRF s_score(const ScoreGraph& pred, const ScoreGraph& gold, int restarts, Rng& rng);

// ---------------------------------------------------------------------------
// Attribute metrics
// ---------------------------------------------------------------------------

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

// Absent for fewer than 3 pairs or zero variance on either side. The
// p-value is two-tailed from the t distribution with n-2 degrees of freedom.
std::optional<Correlation> pearson_rho(const std::vector<double>& pred, const std::vector<double>& gold);

double binary_f1(const std::vector<double>& pred, const std::vector<double>& gold, double theta);

struct ThresholdResult {
  double theta = 0.0;
  double dev_f1 = 0.0;
  double test_f1 = 0.0;
  std::optional<std::string> warning;
};

// Gold is positive iff > 0; predictions iff > theta. theta is chosen on dev
// among -inf, the midpoints of consecutive distinct dev predictions and
// +inf; ties keep the smallest theta.
ThresholdResult tune_threshold_f1(const std::vector<double>& dev_pred, const std::vector<double>& dev_gold,
                                  const std::vector<double>& test_pred, const std::vector<double>& test_gold);

// One (prediction, gold) pair for an attribute that applies in the gold data.
struct AttributeObservation {
  std::size_t sentence = 0;
  std::string node;         // node id, or "src->dst" for edges
  bool edge = false;
  std::string attribute;
  double pred = 0.0;
  double gold = 0.0;
  double position_ratio = 0.0;  // head token / sentence length
  std::string relation;         // gold UD relation of the head token
};

// Pairs predicted with gold attributes by node id and edge endpoints.
std::vector<AttributeObservation> collect_observations(const std::vector<CorpusEntry>& gold,
                                                       const std::vector<UDSGraph>& predicted);

std::map<std::string, std::optional<Correlation>> attribute_rho(const std::vector<AttributeObservation>& obs, bool edges);

struct PercentileTable {
  std::array<std::optional<double>, 10> mean_rho{};
  std::array<std::size_t, 10> nodes{};
};

// Node observations only. Bin b holds ratios in [b/10, (b+1)/10); a ratio
// of exactly 1 falls in the last bin.
PercentileTable percentile_rho(const std::vector<AttributeObservation>& obs);
int percentile_bin(double ratio);

struct RelationDelta {
  std::string relation;
  std::size_t count = 0;
  double uas_a = 0.0;
  double uas_b = 0.0;
  double delta = 0.0;
};

// The 10 most frequent gold relations (ties by name).
std::vector<RelationDelta> per_relation_uas_delta(const std::vector<UDTree>& a, const std::vector<UDTree>& b,
                                                  const std::vector<UDTree>& gold);

struct HeatmapCell {
  std::optional<Correlation> correlation;
  std::size_t n = 0;
  bool significant = false;
};

// attribute -> relation -> cell. Significant iff p < 0.05 and n >= 3.
std::map<std::string, std::map<std::string, HeatmapCell>> relation_attribute_rho(
    const std::vector<AttributeObservation>& obs);

struct PPScores {
  AttachmentScores original;
  AttachmentScores altered;
  double uas_drop = 0.0;
  double las_drop = 0.0;
};

// pred_original[i] / pred_altered[i] are predictions for pairs[i].
std::map<PPDirection, PPScores> pp_attachment_eval(const std::vector<UDTree>& pred_original,
                                                   const std::vector<UDTree>& pred_altered,
                                                   const std::vector<PPPair>& pairs);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct AttributeReport {
  std::optional<Correlation> correlation;
  std::optional<ThresholdResult> threshold;
};

struct MetricsReport {
  std::optional<AttachmentScores> attachment;
  std::optional<PRF> s_score_syn;
  std::optional<PRF> s_score_sem;
  std::map<std::string, AttributeReport> node_attributes;
  std::map<std::string, AttributeReport> edge_attributes;
  std::size_t sentences = 0;
  std::vector<std::string> warnings;
};

nlohmann::json to_json(const MetricsReport& report);

}  // namespace udsp
