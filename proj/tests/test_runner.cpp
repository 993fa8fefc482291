#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "support.hpp"
#include "udsp/error.hpp"
#include "udsp/pipeline.hpp"
#include "udsp/runner.hpp"
#include "udsp/synthetic.hpp"

namespace udsp {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("udsp_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(GitBlob, KnownObjectIds) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(SearchGrid, SamplesWithoutReplacement) {
  SearchGrid grid{{"layers", {1, 2}}, {"warmup", {10, 20, 30}}};
  EXPECT_EQ(grid_size(grid), 6u);
  Rng rng(1);
  std::vector<std::string> warnings;
  const auto points = sample_grid(grid, 6, rng, &warnings);
  std::set<std::string> distinct;
  for (const auto& p : points) distinct.insert(p.dump());
  EXPECT_EQ(distinct.size(), 6u);
  EXPECT_TRUE(warnings.empty());
}

TEST(SearchGrid, SmallGridRepeatsWithWarning) {
  SearchGrid grid{{"layers", {2}}};
  Rng rng(1);
  std::vector<std::string> warnings;
  const auto points = sample_grid(grid, 3, rng, &warnings);
  ASSERT_EQ(points.size(), 3u);
  for (const auto& p : points) EXPECT_EQ(p, points.front());
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(SearchGrid, DefaultGridAndJson) {
  EXPECT_EQ(grid_size(default_search_grid()), 3u * 4u * 2u * 2u * 3u);
  const auto g = grid_from_json(nlohmann::json::parse(R"({"dropout": [0.1, 0.2]})"));
  EXPECT_EQ(grid_size(g), 2u);
  EXPECT_THROW(grid_from_json(nlohmann::json::parse(R"({"dropout": 0.1})")), Error);
}

TEST(Leaderboard, StableSortBestFirst) {
  std::vector<LeaderboardEntry> board{{0, {}, 0.5, 1}, {1, {}, 0.9, 2}, {2, {}, 0.5, 3}, {3, {}, 0.9, 4}};
  sort_leaderboard(board);
  std::vector<std::size_t> order;
  for (const auto& e : board) order.push_back(e.replicant);
  EXPECT_EQ(order, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Overrides, AppliedAndValidated) {
  const ModelConfig base = testing::tiny_config(Mode::kEn);
  const auto c = apply_overrides(base, {{"layers", 3}, {"dropout", 0.2}});
  EXPECT_EQ(c.layers, 3);
  EXPECT_EQ(c.dropout, 0.2);
  EXPECT_EQ(c.d_model, base.d_model);
  EXPECT_THROW(apply_overrides(base, {{"heads", 3}}), ConfigError);
  EXPECT_THROW(apply_overrides(base, {{"no_such_field", 1}}), Error);
}

Prediction gold_prediction(const CorpusEntry& e) {
  Prediction p;
  p.id = e.id;
  p.sentence = e.tree;
  p.tree = e.tree;
  if (e.graph) {
    p.graph = *e.graph;
    p.arborescence = uds_to_arborescence(*e.graph, e.tree, false);
    p.has_semantics = true;
  }
  return p;
}

TEST(Evaluate, GoldAgainstItselfIsPerfect) {
  const Corpus gold = synthetic_corpus({.sentences = 6}, 3);
  std::vector<Prediction> preds;
  std::vector<UDSGraph> oracle;
  for (const auto& e : gold.entries) {
    preds.push_back(gold_prediction(e));
    oracle.push_back(*e.graph);
  }
  const auto r = evaluate(gold, preds, &oracle, nullptr, {});
  ASSERT_TRUE(r.attachment && r.s_score_sem && r.s_score_syn);
  EXPECT_EQ(r.attachment->uas, 1.0);
  EXPECT_EQ(r.attachment->las, 1.0);
  EXPECT_EQ(r.s_score_sem->f1, 1.0);
  EXPECT_EQ(r.s_score_syn->f1, 1.0);
  for (const auto& [name, a] : r.node_attributes) {
    if (a.correlation) {
      EXPECT_NEAR(a.correlation->rho, 1.0, 1e-12) << name;
    }
  }
  // Thresholds fell back to the evaluated data.
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Predictions, WriteReadRoundTrip) {
  const auto dir = scratch("pred");
  const Corpus gold = synthetic_corpus({.sentences = 4}, 8);
  std::vector<Prediction> preds;
  std::vector<UDSGraph> oracle;
  for (const auto& e : gold.entries) {
    preds.push_back(gold_prediction(e));
    oracle.push_back(*e.graph);
  }
  const std::string prefix = (dir / "p").string();
  write_predictions(prefix, preds, &oracle);
  const auto back = read_predictions(prefix);
  ASSERT_EQ(back.predictions.size(), preds.size());
  ASSERT_TRUE(back.oracle.has_value());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_EQ(back.predictions[i].id, preds[i].id);
    EXPECT_TRUE(isomorphic(back.predictions[i].graph, preds[i].graph));
    ASSERT_TRUE(back.predictions[i].tree.has_value());
    EXPECT_EQ(back.predictions[i].tree->heads, preds[i].tree->heads);
  }
}

TEST(Supervision, SemanticModesNeedGraphs) {
  const Corpus ud_only = read_corpus_file(testing::data_path("sample.conllu"));
  EXPECT_THROW(check_supervision(testing::tiny_config(Mode::kEn), ud_only), ConfigError);
  EXPECT_NO_THROW(check_supervision(testing::tiny_config(Mode::kBi), ud_only));
}

TrainRequest small_request(const fs::path& dir, Mode mode, std::uint64_t seed) {
  const std::string data = (dir / "train.jsonl").string();
  if (!fs::exists(data)) write_uds_jsonl_file(data, synthetic_corpus({.sentences = 4}, 2));
  TrainRequest req;
  req.config = testing::tiny_config(mode);
  req.config.epochs = 2;
  req.config.batch_size = 2;
  req.config.warmup = 10;
  req.seed = seed;
  req.train_path = data;
  req.out_dir = (dir / ("run-" + std::string(to_string(mode)) + "-" + std::to_string(seed))).string();
  return req;
}

TEST(Training, EqualSeedsGiveIdenticalArtifacts) {
  const auto dir = scratch("determinism");
  auto a = small_request(dir, Mode::kEn, 5);
  auto b = a;
  b.out_dir += "-again";
  const auto ra = run_training(a);
  const auto rb = run_training(b);
  EXPECT_EQ(read_file(ra.checkpoint_path), read_file(rb.checkpoint_path));
  auto ma = reproducible_part(ra.manifest), mb = reproducible_part(rb.manifest);
  // Only output locations differ.
  ma.erase("checkpoint");
  mb.erase("checkpoint");
  EXPECT_EQ(ma.dump(), mb.dump());
  EXPECT_EQ(ra.manifest["checkpoint"]["sha1"], rb.manifest["checkpoint"]["sha1"]);
  EXPECT_TRUE(ra.manifest.contains("wall_clock"));
  EXPECT_FALSE(reproducible_part(ra.manifest).contains("wall_clock"));
}

TEST(Training, ModesLeaveUnusedGroupsWithoutGradient) {
  const auto dir = scratch("modes");
  for (Mode mode : {Mode::kBase, Mode::kBi}) {
    const auto run = run_training(small_request(dir, mode, 1));
    const std::string silent = mode == Mode::kBase ? "syntax" : "decoder";
    ASSERT_FALSE(run.manifest["steps"].empty());
    for (const auto& s : run.manifest["steps"]) EXPECT_EQ(s["grad_norms"].value(silent, 0.0), 0.0);
  }
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(UDSP_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, EndToEndAndErrorExitCodes) {
  const auto dir = scratch("cli");
  const std::string data = (dir / "toy.jsonl").string();
  const std::string cfg = (dir / "config.json").string();
  ModelConfig c = testing::tiny_config(Mode::kEn);
  c.epochs = 1;
  c.warmup = 10;
  write_file_atomic(cfg, config_to_json(c).dump(2));

  EXPECT_EQ(run_cli("synth --out " + data + " --sentences 4 --seed 1"), 0);
  EXPECT_EQ(run_cli("train --config " + cfg + " --train " + data + " --out " + (dir / "run").string()), 0);
  const std::string ckpt = (dir / "run" / "model.ckpt").string();
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(run_cli("parse --checkpoint " + ckpt + " --test " + data + " --out " + (dir / "pred").string()), 0);
  EXPECT_EQ(run_cli("evaluate --test " + data + " --pred " + (dir / "pred").string() + " --out " +
                    (dir / "report.json").string()),
            0);
  EXPECT_TRUE(nlohmann::json::parse(read_file((dir / "report.json").string())).contains("s_score_sem"));

  EXPECT_NE(run_cli(""), 0);
  EXPECT_NE(run_cli("train --train " + (dir / "missing.jsonl").string() + " --out " + dir.string()), 0);
  EXPECT_NE(run_cli("train --mode nope --train " + data + " --out " + (dir / "bad").string()), 0);
  EXPECT_NE(run_cli("evaluate --test " + data + " --checkpoint " + ckpt + " --pred " + (dir / "pred").string()), 0);
  EXPECT_NE(run_cli("analyze pp-attach --pairs " + testing::data_path("pp_pairs.jsonl")), 0);
}

}  // namespace
}  // namespace udsp
