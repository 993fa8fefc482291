#pragma once

#include <optional>
#include <string>
#include <vector>

#include "udsp/graph.hpp"
#include "udsp/model.hpp"

namespace udsp {

// Row-major T x (T+1) arc scores: entry (i, j) scores token i+1 taking head
// j, where j = 0 is ROOT.
struct HeadScores {
  std::size_t tokens = 0;
  std::vector<double> values;

  HeadScores() = default;
  HeadScores(std::size_t t, std::vector<double> v);
  double at(std::size_t dep, std::size_t head) const { return values[(dep - 1) * (tokens + 1) + head]; }
  static HeadScores from_tensor(const ad::Tensor& t);
};

// Sum of the scores of the chosen arcs, accumulated in token order.
double tree_score(const HeadScores& scores, const std::vector<int>& heads);

// Maximum spanning arborescence with exactly one token attached to ROOT.
std::vector<int> chu_liu_edmonds(const HeadScores& scores);

// Per-token argmax over heads (self-attachment excluded). `mask` is additive
// like the scores and may be empty. Ties go to the smallest head index.
std::vector<int> greedy_heads(const HeadScores& scores, const std::vector<double>& mask = {});

struct Generation {
  UDSGraph graph;                // empty when the mode has no semantics
  std::optional<UDTree> tree;    // predicted UD tree when the mode has syntax
  Arborescence arborescence;     // decoded semantic arborescence, with syntactic nodes
  std::vector<std::string> warnings;
  bool truncated = false;
};

// Autoregressive inference for one sentence (heads/deprels of `sentence`
// are ignored). `max_nodes` overrides the configured maximum decode length.
Generation generate_graph(Parser& parser, const UDTree& sentence, std::optional<std::size_t> max_nodes = std::nullopt);

struct OracleDecode {
  UDSGraph predicted;      // gold structure, predicted attributes
  std::size_t positions = 0;  // length of the gold semantic linearization
};

// Teacher-forces the decoder along the gold linearization and reads every
// attribute head at the gold nodes and edges.
OracleDecode oracle_decode(Parser& parser, const UDTree& sentence, const UDSGraph& gold);

}  // namespace udsp
