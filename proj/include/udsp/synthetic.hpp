#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "udsp/graph.hpp"
#include "udsp/io.hpp"
#include "udsp/rng.hpp"

namespace udsp {

// Toy corpus from a small clause grammar over a 50-word lexicon. Verbs and
// nouns become semantic nodes; coordinated verbs share their subject, which
// yields re-entrant nodes. Attribute values are functions of the words and
// their context so that a model can fit them.
struct SyntheticOptions {
  std::size_t sentences = 32;
  double coordination_rate = 0.3;  // share of sentences with a second verb
  double pp_rate = 0.5;            // share of clauses with a prepositional phrase
  double adjective_rate = 0.3;
};

Corpus synthetic_corpus(const SyntheticOptions& options, std::uint64_t seed);

// The generator's full lexicon.
const std::vector<std::string>& synthetic_lexicon();

// A random sentence with a random semantic DAG of up to max_nodes nodes over
// distinct head tokens. Each non-root node gets an extra parent with
// probability `reentrancy`; nodes and edges carry random attributes.
struct RandomGraph {
  UDTree tree;
  UDSGraph graph;
};

RandomGraph random_graph(std::size_t max_nodes, double reentrancy, Rng& rng);

// Uniformly random dependency tree over `n` tokens with a single root child.
UDTree random_tree(std::size_t n, Rng& rng);

}  // namespace udsp
