#include <gtest/gtest.h>

#include "checks.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "udsp/decoding.hpp"
#include "udsp/error.hpp"

namespace udsp {
namespace {

TEST(ChuLiuEdmonds, MatchesExhaustiveSearch) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + rng.below(5);
    const auto s = testing::random_scores(T, rng);
    const auto heads = chu_liu_edmonds(s);
    ASSERT_TRUE(testing::is_single_root_tree(heads)) << "trial " << trial;
    EXPECT_NEAR(tree_score(s, heads), testing::brute_force_best_tree(s), 1e-9) << "trial " << trial;
  }
}

TEST(ChuLiuEdmonds, AlwaysValidOnLargerInputs) {
  Rng rng(12);
  for (std::size_t T = 1; T <= 30; ++T) {
    const auto s = testing::random_scores(T, rng);
    const auto heads = chu_liu_edmonds(s);
    ASSERT_EQ(heads.size(), T);
    EXPECT_TRUE(testing::is_single_root_tree(heads)) << "T=" << T;
  }
}

TEST(ChuLiuEdmonds, NeverWorseThanAnyGreedyTree) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = testing::random_scores(2 + rng.below(8), rng);
    const auto greedy = greedy_heads(s);
    if (!testing::is_single_root_tree(greedy)) continue;
    EXPECT_GE(tree_score(s, chu_liu_edmonds(s)), tree_score(s, greedy) - 1e-12);
  }
}

TEST(ChuLiuEdmonds, SingleToken) {
  EXPECT_EQ(chu_liu_edmonds(HeadScores(1, {0.3, -1.0})), (std::vector<int>{0}));
}

TEST(ChuLiuEdmonds, UniformScoresGiveTTimesScore) {
  for (std::size_t T = 1; T <= 6; ++T) {
    const auto heads = chu_liu_edmonds(HeadScores(T, std::vector<double>(T * (T + 1), 0.5)));
    EXPECT_TRUE(testing::is_single_root_tree(heads));
    EXPECT_DOUBLE_EQ(tree_score(HeadScores(T, std::vector<double>(T * (T + 1), 0.5)), heads), 0.5 * T);
  }
}

TEST(ChuLiuEdmonds, PrefersOneRootChild) {
  // Both tokens prefer ROOT; only one may take it.
  const auto heads = chu_liu_edmonds(HeadScores(2, {10.0, 0.0, 1.0, 9.0, 2.0, 0.0}));
  EXPECT_EQ(heads, (std::vector<int>{0, 1}));
}

TEST(GreedyHeads, PrecedenceMaskAlwaysYieldsTree) {
  // Allowing only earlier heads (or ROOT) rules out cycles.
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + rng.below(10);
    const auto s = testing::random_scores(T, rng);
    std::vector<double> mask(T * (T + 1), 0.0);
    for (std::size_t i = 1; i <= T; ++i) {
      for (std::size_t j = i; j <= T; ++j) mask[(i - 1) * (T + 1) + j] = ad::kNegInf;
    }
    const auto heads = greedy_heads(s, mask);
    EXPECT_EQ(heads[0], 0);
    for (std::size_t i = 0; i < T; ++i) EXPECT_LT(heads[i], static_cast<int>(i + 1));
  }
}

TEST(GreedyHeads, TiesGoToSmallestHead) {
  EXPECT_EQ(greedy_heads(HeadScores(2, {1.0, 1.0, 1.0, 1.0, 1.0, 1.0})), (std::vector<int>{0, 0}));
}

TEST(TreeScore, SumsChosenArcs) {
  const HeadScores s(2, {1.0, 0.0, 2.0, 3.0, 4.0, 0.0});
  EXPECT_DOUBLE_EQ(tree_score(s, {0, 1}), 1.0 + 4.0);
  EXPECT_DOUBLE_EQ(tree_score(s, {2, 0}), 2.0 + 3.0);
}

TEST(Generate, MaxNodesTruncates) {
  auto fx = testing::shared_subject_fixture();
  Parser parser(testing::tiny_config(Mode::kEn), fx.vocab, 3);
  const auto gen = generate_graph(parser, fx.corpus.entries[0].tree, 1);
  EXPECT_TRUE(gen.truncated);
  EXPECT_FALSE(gen.warnings.empty());
  EXPECT_LE(gen.arborescence.size(), 2u);
}

TEST(Generate, BiaffineOnlyModeHasTreeButNoGraph) {
  auto fx = testing::shared_subject_fixture();
  Parser parser(testing::tiny_config(Mode::kBi), fx.vocab, 3);
  const auto& tree = fx.corpus.entries[0].tree;
  const auto gen = generate_graph(parser, tree);
  ASSERT_TRUE(gen.tree.has_value());
  EXPECT_TRUE(gen.graph.empty());
  EXPECT_EQ(gen.tree->size(), tree.size());
  EXPECT_TRUE(testing::is_single_root_tree(gen.tree->heads));
}

TEST(Generate, UntrainedModelsProduceWellFormedOutput) {
  for (Mode mode : {Mode::kBase, Mode::kCb, Mode::kCa, Mode::kEn, Mode::kIn}) {
    Corpus corpus = synthetic_corpus({.sentences = 3}, 5);
    const Vocabulary vocab = build_vocab(corpus, 1);
    Parser parser(testing::tiny_config(mode), vocab, 5);
    for (const auto& e : corpus.entries) {
      const auto gen = generate_graph(parser, e.tree);
      EXPECT_LE(gen.arborescence.size(), parser.config().max_decode_length(e.tree.size()) + 1);
      EXPECT_NO_THROW(gen.arborescence.validate()) << to_string(mode);
      if (mode_uses_biaffine(mode) || mode_is_concat(mode)) {
        ASSERT_TRUE(gen.tree.has_value()) << to_string(mode);
        EXPECT_EQ(gen.tree->size(), e.tree.size());
      }
      if (!gen.graph.empty()) {
        EXPECT_NO_THROW(gen.graph.validate(e.tree.size()));
      }
    }
  }
}

TEST(OracleDecode, PositionCountMatchesLinearization) {
  auto fx = testing::shared_subject_fixture();
  const ModelConfig cfg = testing::tiny_config(Mode::kEn);
  Parser parser(cfg, fx.vocab, 4);
  const auto& e = fx.corpus.entries[0];
  const auto out = oracle_decode(parser, e.tree, *e.graph);
  const auto arb = uds_to_arborescence(*e.graph, e.tree, cfg.semantics_only);
  EXPECT_EQ(out.positions, linearize(arb).size());
  EXPECT_EQ(out.predicted.nodes.size(), e.graph->nodes.size());
  EXPECT_EQ(out.predicted.edges.size(), e.graph->edges.size());
  for (const auto& n : out.predicted.nodes) EXPECT_FALSE(n.attributes.empty()) << n.id;
}

TEST(OracleDecode, NoEdgeOutputsWithoutEdges) {
  Corpus corpus = read_uds_jsonl_file(testing::data_path("sample.jsonl"));
  const CorpusEntry* single = nullptr;
  for (const auto& e : corpus.entries) {
    if (e.id == "single") single = &e;
  }
  ASSERT_NE(single, nullptr);
  const Vocabulary vocab = build_vocab(corpus, 1);
  Parser parser(testing::tiny_config(Mode::kEn), vocab, 4);
  const auto out = oracle_decode(parser, single->tree, *single->graph);
  EXPECT_TRUE(out.predicted.edges.empty());
  ASSERT_EQ(out.predicted.nodes.size(), 1u);
}

TEST(OracleDecode, RejectsBiaffineOnlyMode) {
  auto fx = testing::shared_subject_fixture();
  Parser parser(testing::tiny_config(Mode::kBi), fx.vocab, 4);
  const auto& e = fx.corpus.entries[0];
  EXPECT_THROW(oracle_decode(parser, e.tree, *e.graph), ConfigError);
}

}  // namespace
}  // namespace udsp
