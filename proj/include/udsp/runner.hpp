#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "udsp/model.hpp"
#include "udsp/pipeline.hpp"

namespace udsp {

// Git blob object id: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(const std::string& bytes);
std::string git_blob_sha1_file(const std::string& path);

struct TrainRequest {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::string train_path;
  std::string dev_path;                  // defaults to the training data
  std::optional<std::string> config_path;
  std::optional<std::string> init_checkpoint;  // start from these parameters
  std::string out_dir;                   // receives model.ckpt and manifest.json
  int eval_every = 1;
};

struct TrainRun {
  TrainResult result;
  nlohmann::json manifest;
  std::string checkpoint_path;
  std::string manifest_path;
};

// Loads the data, builds the vocabulary, trains, then writes the best
// checkpoint and the run manifest (both atomically).
TrainRun run_training(const TrainRequest& request);

// Manifest content that must agree between runs with equal inputs, i.e.
// everything except the wall-clock block.
nlohmann::json reproducible_part(const nlohmann::json& manifest);

// ---------------------------------------------------------------------------
// Random search
// ---------------------------------------------------------------------------

// Config field -> candidate values.
using SearchGrid = std::map<std::string, std::vector<nlohmann::json>>;

// Layers, init scale, heads, dropout and warmup grid used for the main
// experiments.
SearchGrid default_search_grid();
SearchGrid grid_from_json(const nlohmann::json& j);
std::size_t grid_size(const SearchGrid& grid);

// Samples `replicants` grid points uniformly, without replacement while the
// grid has enough points; otherwise with replacement and a warning.
std::vector<nlohmann::json> sample_grid(const SearchGrid& grid, std::size_t replicants, Rng& rng,
                                        std::vector<std::string>* warnings);

// Applies field overrides to a config (validated).
ModelConfig apply_overrides(const ModelConfig& base, const nlohmann::json& overrides);

struct LeaderboardEntry {
  std::size_t replicant = 0;
  nlohmann::json overrides;
  double dev_score = 0.0;
  int best_epoch = 0;
};

// Stable sort by development score, best first.
void sort_leaderboard(std::vector<LeaderboardEntry>& board);

struct SearchRequest {
  ModelConfig base;
  SearchGrid grid;
  std::size_t replicants = 1;
  int budget_epochs = 0;  // per-run epoch budget, 0 keeps the config value
  std::uint64_t seed = 0;
  std::string train_path;
  std::string dev_path;
  std::string out_dir;
};

struct SearchResult {
  std::vector<LeaderboardEntry> leaderboard;
  std::vector<std::string> warnings;
  ModelConfig best_config;
};

// Trains one run per sampled configuration under out_dir/run-<i>/ and
// writes out_dir/leaderboard.tsv and out_dir/best_config.json.
SearchResult run_search(const SearchRequest& request);

}  // namespace udsp
