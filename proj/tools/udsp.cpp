// Command-line entry point: train, search, parse, evaluate, analyze, transfer.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "udsp/error.hpp"
#include "udsp/io.hpp"
#include "udsp/metrics.hpp"
#include "udsp/model.hpp"
#include "udsp/pipeline.hpp"
#include "udsp/runner.hpp"
#include "udsp/synthetic.hpp"

using namespace udsp;
using nlohmann::json;

namespace {

struct ModelFlags {
  std::string config;
  std::string mode;
  bool semantics_only = false;
  int restarts = 0;
};

ModelConfig resolve_config(const ModelFlags& f) {
  ModelConfig c;
  if (!f.config.empty()) c = config_from_json(json::parse(read_file(f.config)));
  if (!f.mode.empty()) c.mode = parse_mode(f.mode);
  if (f.semantics_only) c.semantics_only = true;
  if (f.restarts > 0) c.restarts = f.restarts;
  c.validate();
  return c;
}

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--config", f.config, "model config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--mode", f.mode, "base|bi|cb|ca|en|in (overrides the config)");
  app->add_flag("--semantics-only", f.semantics_only, "leave syntactic nodes out of the semantic target");
  app->add_option("--restarts", f.restarts, "S-score hill-climbing restarts");
}

void emit(const std::string& out, const std::string& contents) {
  if (out.empty() || out == "-") {
    std::cout << contents;
  } else {
    write_file_atomic(out, contents);
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

// Predictions plus oracle attributes, from a checkpoint or prediction files.
struct Source {
  std::vector<Prediction> predictions;
  std::optional<std::vector<UDSGraph>> oracle;
};

Source load_source(const std::string& checkpoint, const std::string& pred, const Corpus& corpus) {
  Source s;
  if (!checkpoint.empty()) {
    Parser parser = Parser::load(checkpoint);
    s.predictions = predict(parser, corpus);
    if (mode_uses_decoder(parser.config().mode)) s.oracle = oracle_predict(parser, corpus);
  } else if (!pred.empty()) {
    auto files = read_predictions(pred);
    s.predictions = std::move(files.predictions);
    s.oracle = std::move(files.oracle);
  } else {
    throw ConfigError("give either --checkpoint or --pred");
  }
  return s;
}

std::vector<UDTree> predicted_trees(const std::vector<Prediction>& preds) {
  std::vector<UDTree> out;
  for (const auto& p : preds) {
    if (!p.tree) throw ConfigError("prediction '" + p.id + "' has no UD tree (the mode has no syntax)");
    out.push_back(*p.tree);
  }
  return out;
}

// Trees for relation-delta: a checkpoint, a CoNLL-U file or a prediction prefix.
std::vector<UDTree> trees_from(const std::string& path, const Corpus& corpus) {
  namespace fs = std::filesystem;
  if (fs::path(path).extension() == ".conllu") return read_conllu_file(path);
  if (fs::exists(path + ".conllu")) return read_conllu_file(path + ".conllu");
  if (fs::is_regular_file(path)) {
    Parser parser = Parser::load(path);
    return predicted_trees(predict(parser, corpus));
  }
  throw ConfigError("'" + path + "' is neither a checkpoint, a CoNLL-U file nor a prediction prefix");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<AttributeObservation> observations(const Corpus& gold, const Source& src) {
  if (!src.oracle) throw ConfigError("no oracle attribute predictions available");
  return collect_observations(gold.entries, *src.oracle);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint UD and UDS parsing toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "write the synthetic toy corpus");
  std::string synth_out;
  std::size_t synth_n = 32;
  synth->add_option("--out", synth_out, "output UDS JSON-lines")->required();
  synth->add_option("--sentences", synth_n, "number of sentences");
  synth->add_option("--seed", seed, "random seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a parser");
  ModelFlags train_flags;
  TrainRequest treq;
  std::string init_ckpt;
  add_model_flags(train_cmd, train_flags);
  train_cmd->add_option("--seed", seed, "random seed");
  train_cmd->add_option("--train", treq.train_path, "training data")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--dev", treq.dev_path, "development data (default: training data)")->check(CLI::ExistingFile);
  train_cmd->add_option("--init", init_ckpt, "initial parameters (e.g. from transfer)")->check(CLI::ExistingFile);
  train_cmd->add_option("--eval-every", treq.eval_every, "epochs between development evaluations");
  train_cmd->add_option("--out", treq.out_dir, "output directory")->required();

  // search
  auto* search_cmd = app.add_subcommand("search", "random hyperparameter search");
  ModelFlags search_flags;
  SearchRequest sreq;
  std::string grid_path;
  add_model_flags(search_cmd, search_flags);
  search_cmd->add_option("--seed", seed, "random seed");
  search_cmd->add_option("--grid", grid_path, "grid (JSON object of value lists)")->check(CLI::ExistingFile);
  search_cmd->add_option("--replicants", sreq.replicants, "number of sampled configurations");
  search_cmd->add_option("--budget", sreq.budget_epochs, "epochs per run (0 keeps the config value)");
  search_cmd->add_option("--train", sreq.train_path, "training data")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--dev", sreq.dev_path, "development data")->check(CLI::ExistingFile);
  search_cmd->add_option("--out", sreq.out_dir, "output directory")->required();

  // parse
  auto* parse_cmd = app.add_subcommand("parse", "write predictions for a corpus");
  std::string checkpoint, test_path, out;
  parse_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  parse_cmd->add_option("--test", test_path, "input (.conllu or UDS JSON-lines)")->required()->check(CLI::ExistingFile);
  parse_cmd->add_option("--out", out, "output prefix")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score a model or prediction files");
  std::string pred, dev_path, dev_pred;
  int restarts = 10;
  eval_cmd->add_option("--test", test_path, "gold data")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--pred", pred, "prediction prefix written by parse");
  eval_cmd->add_option("--dev", dev_path, "development gold data for threshold tuning")->check(CLI::ExistingFile);
  eval_cmd->add_option("--dev-pred", dev_pred, "development prediction prefix");
  eval_cmd->add_option("--restarts", restarts, "S-score hill-climbing restarts");
  eval_cmd->add_option("--seed", seed, "random seed");
  eval_cmd->add_option("--out", out, "report path (default: stdout)");

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "analysis tables");
  analyze_cmd->require_subcommand(1);
  auto* pct_cmd = analyze_cmd->add_subcommand("percentiles", "mean attribute correlation by sentence position");
  auto* heat_cmd = analyze_cmd->add_subcommand("heatmap", "attribute correlation by UD relation");
  for (auto* c : {pct_cmd, heat_cmd}) {
    c->add_option("--test", test_path, "gold data")->required()->check(CLI::ExistingFile);
    c->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);
    c->add_option("--pred", pred, "prediction prefix");
    c->add_option("--out", out, "TSV path (default: stdout)");
  }
  auto* delta_cmd = analyze_cmd->add_subcommand("relation-delta", "per-relation UAS difference of two systems");
  std::string sys_a, sys_b;
  delta_cmd->add_option("--test", test_path, "gold data")->required()->check(CLI::ExistingFile);
  delta_cmd->add_option("--a", sys_a, "system A: checkpoint, CoNLL-U file or prediction prefix")->required();
  delta_cmd->add_option("--b", sys_b, "system B: checkpoint, CoNLL-U file or prediction prefix")->required();
  delta_cmd->add_option("--out", out, "TSV path (default: stdout)");
  auto* pp_cmd = analyze_cmd->add_subcommand("pp-attach", "PP-attachment robustness");
  std::string pairs_path, pred_orig, pred_alt;
  pp_cmd->add_option("--pairs", pairs_path, "PP pair JSON-lines")->required()->check(CLI::ExistingFile);
  pp_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);
  pp_cmd->add_option("--pred-original", pred_orig, "predicted trees for the originals (CoNLL-U)");
  pp_cmd->add_option("--pred-altered", pred_alt, "predicted trees for the altered sentences (CoNLL-U)");
  pp_cmd->add_option("--out", out, "TSV path (default: stdout)");

  // transfer
  auto* transfer_cmd = app.add_subcommand("transfer", "initialize a new model from a trained one");
  ModelFlags transfer_flags;
  std::string components = "encoder,biaffine", train_path;
  bool strict_vocab = false;
  add_model_flags(transfer_cmd, transfer_flags);
  transfer_cmd->add_option("--checkpoint", checkpoint, "source checkpoint")->required()->check(CLI::ExistingFile);
  transfer_cmd->add_option("--components", components, "encoder,biaffine,embeddings");
  transfer_cmd->add_option("--train", train_path, "target training data (vocabulary)")->required()->check(CLI::ExistingFile);
  transfer_cmd->add_option("--seed", seed, "random seed for the fresh parameters");
  transfer_cmd->add_flag("--strict-vocab", strict_vocab, "fail instead of remapping on a vocabulary mismatch");
  transfer_cmd->add_option("--out", out, "output checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      SyntheticOptions o;
      o.sentences = synth_n;
      write_uds_jsonl_file(synth_out, synthetic_corpus(o, seed));
    } else if (train_cmd->parsed()) {
      treq.config = resolve_config(train_flags);
      treq.seed = seed;
      if (!train_flags.config.empty()) treq.config_path = train_flags.config;
      if (!init_ckpt.empty()) treq.init_checkpoint = init_ckpt;
      const TrainRun run = run_training(treq);
      std::cerr << "best epoch " << run.result.best_epoch << " dev score " << fmt(run.result.best_score) << " ("
                << run.result.stop_reason << ")\n"
                << "checkpoint " << run.checkpoint_path << "\nmanifest " << run.manifest_path << "\n";
    } else if (search_cmd->parsed()) {
      sreq.base = resolve_config(search_flags);
      sreq.seed = seed;
      sreq.grid = grid_path.empty() ? default_search_grid() : grid_from_json(json::parse(read_file(grid_path)));
      const SearchResult res = run_search(sreq);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
      std::cerr << "best dev score " << fmt(res.leaderboard.front().dev_score) << " with "
                << res.leaderboard.front().overrides.dump() << "\n";
    } else if (parse_cmd->parsed()) {
      Parser parser = Parser::load(checkpoint);
      const Corpus corpus = read_corpus_file(test_path);
      const auto preds = predict(parser, corpus);
      std::optional<std::vector<UDSGraph>> oracle;
      if (mode_uses_decoder(parser.config().mode) && corpus.has_semantics()) oracle = oracle_predict(parser, corpus);
      write_predictions(out, preds, oracle ? &*oracle : nullptr);
      std::size_t warned = 0;
      for (const auto& p : preds) warned += p.warnings.empty() ? 0 : 1;
      if (warned) std::cerr << "warning: " << warned << " sentence(s) decoded with warnings\n";
    } else if (eval_cmd->parsed()) {
      if (!checkpoint.empty() && !pred.empty()) throw ConfigError("give --checkpoint or --pred, not both");
      const Corpus gold = read_corpus_file(test_path);
      const Source src = load_source(checkpoint, pred, gold);
      std::optional<Corpus> dev_gold;
      std::optional<Source> dev_src;
      if (!dev_path.empty()) {
        dev_gold = read_corpus_file(dev_path);
        dev_src = load_source(checkpoint, dev_pred, *dev_gold);
      }
      AttributeDev dev;
      if (dev_src && dev_src->oracle) dev = {&*dev_gold, &*dev_src->oracle};
      EvalOptions eo{restarts, seed};
      const MetricsReport report =
          evaluate(gold, src.predictions, src.oracle ? &*src.oracle : nullptr, dev.gold ? &dev : nullptr, eo);
      emit(out, to_json(report).dump(2) + "\n");
    } else if (pct_cmd->parsed() || heat_cmd->parsed()) {
      const Corpus gold = read_corpus_file(test_path);
      const Source src = load_source(checkpoint, pred, gold);
      const auto obs = observations(gold, src);
      std::ostringstream tsv;
      if (pct_cmd->parsed()) {
        const PercentileTable t = percentile_rho(obs);
        tsv << "bin\tlow\thigh\tmean_rho\tnodes\n";
        for (int b = 0; b < 10; ++b) {
          tsv << b << '\t' << b / 10.0 << '\t' << (b + 1) / 10.0 << '\t' << fmt(t.mean_rho[b]) << '\t' << t.nodes[b]
              << '\n';
        }
      } else {
        tsv << "attribute\trelation\trho\tp_value\tn\tsignificant\n";
        for (const auto& [attr, row] : relation_attribute_rho(obs)) {
          for (const auto& [rel, cell] : row) {
            tsv << attr << '\t' << rel << '\t' << (cell.correlation ? fmt(cell.correlation->rho) : "NA") << '\t'
                << (cell.correlation ? fmt(cell.correlation->p_value) : "NA") << '\t' << cell.n << '\t'
                << (cell.significant ? 1 : 0) << '\n';
          }
        }
      }
      emit(out, tsv.str());
    } else if (delta_cmd->parsed()) {
      const Corpus gold = read_corpus_file(test_path);
      std::vector<UDTree> gold_trees;
      for (const auto& e : gold.entries) gold_trees.push_back(e.tree);
      const auto rows = per_relation_uas_delta(trees_from(sys_a, gold), trees_from(sys_b, gold), gold_trees);
      std::ostringstream tsv;
      tsv << "relation\tcount\tuas_a\tuas_b\tdelta\n";
      for (const auto& r : rows) {
        tsv << r.relation << '\t' << r.count << '\t' << fmt(r.uas_a) << '\t' << fmt(r.uas_b) << '\t' << fmt(r.delta)
            << '\n';
      }
      emit(out, tsv.str());
    } else if (pp_cmd->parsed()) {
      const auto pairs = read_pp_pairs_file(pairs_path);
      std::vector<UDTree> po, pa;
      if (!checkpoint.empty()) {
        Parser parser = Parser::load(checkpoint);
        Corpus orig, alt;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          orig.entries.push_back({std::to_string(i), pairs[i].original, std::nullopt});
          alt.entries.push_back({std::to_string(i), pairs[i].altered, std::nullopt});
        }
        po = predicted_trees(predict(parser, orig));
        pa = predicted_trees(predict(parser, alt));
      } else if (!pred_orig.empty() && !pred_alt.empty()) {
        po = read_conllu_file(pred_orig);
        pa = read_conllu_file(pred_alt);
      } else {
        throw ConfigError("give --checkpoint or both --pred-original and --pred-altered");
      }
      std::ostringstream tsv;
      tsv << "direction\tpairs\tuas_original\tlas_original\tuas_altered\tlas_altered\tuas_drop\tlas_drop\n";
      for (const auto& [dir, s] : pp_attachment_eval(po, pa, pairs)) {
        std::size_t n = 0;
        for (const auto& p : pairs) n += p.direction == dir ? 1 : 0;
        tsv << to_string(dir) << '\t' << n << '\t' << fmt(s.original.uas) << '\t' << fmt(s.original.las) << '\t'
            << fmt(s.altered.uas) << '\t' << fmt(s.altered.las) << '\t' << fmt(s.uas_drop) << '\t' << fmt(s.las_drop)
            << '\n';
      }
      emit(out, tsv.str());
    } else if (transfer_cmd->parsed()) {
      const ModelConfig config = resolve_config(transfer_flags);
      const Parser source = Parser::load(checkpoint);
      const Corpus data = read_corpus_file(train_path);
      Vocabulary vocab = build_vocab(data, static_cast<std::size_t>(config.min_count));
      if (strict_vocab && vocab.fingerprint() != source.vocab().fingerprint()) {
        throw ConfigError("vocabulary fingerprint mismatch between '" + checkpoint + "' and '" + train_path + "'");
      }
      Parser target(config, std::move(vocab), seed);
      std::vector<Component> comps;
      for (const auto& c : split_list(components)) comps.push_back(parse_component(c));
      std::vector<std::string> warnings;
      transfer_init(target, source, comps, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      target.save(out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
