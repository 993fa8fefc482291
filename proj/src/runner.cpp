#include "udsp/runner.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>

#include "udsp/error.hpp"

namespace udsp {

using nlohmann::json;

std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string git_blob_sha1_file(const std::string& path) { return git_blob_sha1(read_file(path)); }

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json file_record(const std::string& path) { return {{"path", path}, {"sha1", git_blob_sha1_file(path)}}; }

json epoch_json(const EpochRecord& r) {
  json j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"components", r.components}};
  if (r.dev_score) {
    j["dev_score"] = *r.dev_score;
    j["dev_metrics"] = r.dev_metrics;
  }
  return j;
}

json step_json(const StepRecord& s) {
  return {{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}, {"grad_norms", s.grad_norms}};
}

}  // namespace

TrainRun run_training(const TrainRequest& req) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_at = utc_now();
  req.config.validate();

  const Corpus train_data = read_corpus_file(req.train_path);
  const std::string dev_path = req.dev_path.empty() ? req.train_path : req.dev_path;
  const Corpus dev_data = req.dev_path.empty() ? train_data : read_corpus_file(dev_path);
  check_supervision(req.config, train_data);
  check_supervision(req.config, dev_data);

  std::optional<Parser> init;
  Vocabulary vocab;
  if (req.init_checkpoint) {
    init.emplace(Parser::load(*req.init_checkpoint));
    vocab = init->vocab();
  } else {
    vocab = build_vocab(train_data, static_cast<std::size_t>(req.config.min_count));
  }

  TrainOptions opts;
  opts.seed = req.seed;
  opts.eval_every = req.eval_every;
  opts.eval.seed = req.seed;
  opts.eval.restarts = req.config.restarts;
  opts.init = init ? &*init : nullptr;

  TrainRun run{train(req.config, vocab, train_data, dev_data, opts), {}, {}, {}};

  std::filesystem::create_directories(req.out_dir);
  run.checkpoint_path = (std::filesystem::path(req.out_dir) / "model.ckpt").string();
  run.manifest_path = (std::filesystem::path(req.out_dir) / "manifest.json").string();
  run.result.parser.save(run.checkpoint_path);

  json m;
  m["config"] = config_to_json(req.config);
  m["seed"] = req.seed;
  m["data"] = {{"train", file_record(req.train_path)}, {"dev", file_record(dev_path)}};
  if (req.config_path) m["data"]["config"] = file_record(*req.config_path);
  if (req.init_checkpoint) m["data"]["init_checkpoint"] = file_record(*req.init_checkpoint);
  m["vocab_fingerprint"] = vocab.fingerprint();
  m["warnings"] = train_data.warnings;
  json history = json::array();
  for (const auto& e : run.result.epochs) history.push_back(epoch_json(e));
  m["history"] = std::move(history);
  json steps = json::array();
  for (const auto& s : run.result.steps) steps.push_back(step_json(s));
  m["steps"] = std::move(steps);
  m["best_epoch"] = run.result.best_epoch;
  m["best_dev_score"] = run.result.best_score;
  m["stop_reason"] = run.result.stop_reason;
  m["checkpoint"] = file_record(run.checkpoint_path);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  m["wall_clock"] = {{"started", started_at}, {"finished", utc_now()}, {"seconds", seconds}};
  write_file_atomic(run.manifest_path, m.dump(2) + "\n");
  run.manifest = std::move(m);
  return run;
}

json reproducible_part(const json& manifest) {
  json out = manifest;
  out.erase("wall_clock");
  return out;
}

// ---------------------------------------------------------------------------
// Random search
// ---------------------------------------------------------------------------

SearchGrid default_search_grid() {
  return {{"layers", {6, 8, 12}},
          {"init_scale", {4, 32, 128, 512}},
          {"heads", {4, 8}},
          {"dropout", {0.20, 0.33}},
          {"warmup", {1000, 4000, 8000}}};
}

SearchGrid grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("search grid must be a JSON object of value lists");
  SearchGrid g;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_array() || v.empty()) throw ConfigError("search grid field '" + k + "' needs a nonempty list");
    g[k] = std::vector<json>(v.begin(), v.end());
  }
  if (g.empty()) throw ConfigError("search grid is empty");
  return g;
}

std::size_t grid_size(const SearchGrid& grid) {
  std::size_t n = 1;
  for (const auto& [k, v] : grid) n *= v.size();
  return grid.empty() ? 0 : n;
}

namespace {

json grid_point(const SearchGrid& grid, std::size_t index) {
  json p = json::object();
  for (const auto& [k, v] : grid) {
    p[k] = v[index % v.size()];
    index /= v.size();
  }
  return p;
}

}  // namespace

std::vector<json> sample_grid(const SearchGrid& grid, std::size_t replicants, Rng& rng,
                              std::vector<std::string>* warnings) {
  const std::size_t n = grid_size(grid);
  if (n == 0) throw ConfigError("search grid is empty");
  std::vector<json> out;
  if (replicants <= n) {
    // Partial Fisher-Yates over point indices.
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < replicants; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
      out.push_back(grid_point(grid, idx[i]));
    }
  } else {
    if (warnings) {
      warnings->push_back(std::to_string(replicants) + " replicants exceed the " + std::to_string(n) +
                          " distinct grid points; sampling with replacement");
    }
    for (std::size_t i = 0; i < replicants; ++i) out.push_back(grid_point(grid, rng.below(n)));
  }
  return out;
}

ModelConfig apply_overrides(const ModelConfig& base, const json& overrides) {
  json j = config_to_json(base);
  for (const auto& [k, v] : overrides.items()) {
    if (k == "weights" && v.is_object()) {
      for (const auto& [wk, wv] : v.items()) j["weights"][wk] = wv;
    } else {
      j[k] = v;
    }
  }
  return config_from_json(j);
}

void sort_leaderboard(std::vector<LeaderboardEntry>& board) {
  std::stable_sort(board.begin(), board.end(),
                   [](const LeaderboardEntry& a, const LeaderboardEntry& b) { return a.dev_score > b.dev_score; });
}

SearchResult run_search(const SearchRequest& req) {
  if (req.replicants == 0) throw ConfigError("search needs at least one replicant");
  SearchResult result;
  Rng rng(req.seed);
  const auto points = sample_grid(req.grid, req.replicants, rng, &result.warnings);
  std::filesystem::create_directories(req.out_dir);
  for (std::size_t i = 0; i < points.size(); ++i) {
    TrainRequest tr;
    tr.config = apply_overrides(req.base, points[i]);
    if (req.budget_epochs > 0) tr.config.epochs = req.budget_epochs;
    tr.seed = rng.next();
    tr.train_path = req.train_path;
    tr.dev_path = req.dev_path;
    tr.out_dir = (std::filesystem::path(req.out_dir) / ("run-" + std::to_string(i + 1))).string();
    const TrainRun run = run_training(tr);
    result.leaderboard.push_back({i + 1, points[i], run.result.best_score, run.result.best_epoch});
  }
  sort_leaderboard(result.leaderboard);
  result.best_config = apply_overrides(req.base, result.leaderboard.front().overrides);
  if (req.budget_epochs > 0) result.best_config.epochs = req.budget_epochs;

  std::ostringstream tsv;
  tsv << "rank\treplicant\tdev_score\tbest_epoch\tconfig\n";
  for (std::size_t r = 0; r < result.leaderboard.size(); ++r) {
    const auto& e = result.leaderboard[r];
    tsv << std::setprecision(17) << r + 1 << '\t' << e.replicant << '\t' << e.dev_score << '\t' << e.best_epoch << '\t' << e.overrides.dump()
        << '\n';
  }
  write_file_atomic((std::filesystem::path(req.out_dir) / "leaderboard.tsv").string(), tsv.str());
  write_file_atomic((std::filesystem::path(req.out_dir) / "best_config.json").string(),
                    config_to_json(result.best_config).dump(2) + "\n");
  return result;
}

}  // namespace udsp
