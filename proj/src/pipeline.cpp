#include "udsp/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "udsp/error.hpp"

namespace udsp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

std::vector<Prediction> predict(Parser& parser, const Corpus& corpus) {
  std::vector<Prediction> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus.entries) {
    Generation gen = generate_graph(parser, e.tree);
    Prediction p;
    p.id = e.id;
    p.sentence = e.tree;
    p.tree = std::move(gen.tree);
    p.graph = std::move(gen.graph);
    p.arborescence = std::move(gen.arborescence);
    p.has_semantics = mode_uses_decoder(parser.config().mode);
    p.warnings = std::move(gen.warnings);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<UDSGraph> oracle_predict(Parser& parser, const Corpus& corpus) {
  std::vector<UDSGraph> out(corpus.size());
  if (!mode_uses_decoder(parser.config().mode)) return out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& e = corpus.entries[i];
    if (e.graph && !e.graph->empty()) out[i] = oracle_decode(parser, e.tree, *e.graph).predicted;
  }
  return out;
}

namespace {

json arborescence_json(const Arborescence& arb) {
  json nodes = json::array();
  for (std::size_t i = 0; i < arb.size(); ++i) {
    const auto& n = arb.nodes[i];
    nodes.push_back({{"label", n.label},
                     {"source", n.source_index ? json(*n.source_index) : json(nullptr)},
                     {"coindex", n.coindex},
                     {"kind", to_string(n.kind)},
                     {"parent", arb.parent[i]},
                     {"edge", arb.edge_label[i]}});
  }
  return nodes;
}

NodeKind parse_kind(const std::string& s) {
  if (s == to_string(NodeKind::kRoot)) return NodeKind::kRoot;
  if (s == to_string(NodeKind::kSemantic)) return NodeKind::kSemantic;
  if (s == to_string(NodeKind::kSyntactic)) return NodeKind::kSyntactic;
  throw Error("unknown node kind '" + s + "'");
}

Arborescence arborescence_from_json(const json& nodes) {
  Arborescence arb;
  for (const auto& n : nodes) {
    ArbNode node;
    node.label = n.at("label").get<std::string>();
    if (!n.at("source").is_null()) node.source_index = n.at("source").get<int>();
    node.coindex = n.at("coindex").get<int>();
    node.kind = parse_kind(n.at("kind").get<std::string>());
    arb.nodes.push_back(node);
    arb.parent.push_back(n.at("parent").get<int>());
    arb.edge_label.push_back(n.at("edge").get<std::string>());
    arb.node_attrs.emplace_back();
    arb.edge_attrs.emplace_back();
  }
  return arb;
}

Corpus as_corpus(const std::vector<Prediction>& predictions, const std::vector<UDSGraph>* graphs) {
  Corpus c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    CorpusEntry e;
    e.id = p.id;
    e.tree = p.tree ? *p.tree : p.sentence;
    const UDSGraph& g = graphs ? (*graphs)[i] : p.graph;
    if (!g.empty()) e.graph = g;
    c.entries.push_back(std::move(e));
  }
  return c;
}

std::vector<UDSGraph> graphs_of(const Corpus& c) {
  std::vector<UDSGraph> out;
  for (const auto& e : c.entries) out.push_back(e.graph.value_or(UDSGraph{}));
  return out;
}

}  // namespace

void write_predictions(const std::string& prefix, const std::vector<Prediction>& predictions,
                       const std::vector<UDSGraph>* oracle) {
  // The UDS writer emits one line per entry in order; the decoded
  // arborescence and warnings are added to each line.
  std::ostringstream base;
  write_uds_jsonl(base, as_corpus(predictions, nullptr));
  std::istringstream lines(base.str());
  std::ostringstream out;
  std::string line;
  for (const auto& p : predictions) {
    std::getline(lines, line);
    json j = json::parse(line);
    if (p.has_semantics) j["arborescence"] = arborescence_json(p.arborescence);
    j["has_tree"] = p.tree.has_value();
    j["warnings"] = p.warnings;
    out << j.dump() << '\n';
  }

  // Stage every file before renaming any, so a failure leaves no partial set.
  std::vector<std::pair<std::string, std::string>> files = {{prefix + ".jsonl", out.str()}};
  bool any_tree = false;
  std::vector<UDTree> trees;
  for (const auto& p : predictions) {
    any_tree = any_tree || p.tree.has_value();
    trees.push_back(p.tree ? *p.tree : p.sentence);
  }
  if (any_tree) {
    std::ostringstream conllu;
    write_conllu(conllu, trees);
    files.emplace_back(prefix + ".conllu", conllu.str());
  }
  if (oracle) {
    if (oracle->size() != predictions.size()) throw Error("oracle predictions do not align with the predictions");
    std::ostringstream o;
    write_uds_jsonl(o, as_corpus(predictions, oracle));
    files.emplace_back(prefix + ".oracle.jsonl", o.str());
  }
  for (const auto& [path, contents] : files) write_file_atomic(path, contents);
}

PredictionFiles read_predictions(const std::string& prefix) {
  PredictionFiles out;
  const std::string main_path = prefix + ".jsonl";
  const Corpus corpus = read_uds_jsonl_file(main_path);
  std::ifstream in(main_path);
  std::string line;
  std::size_t i = 0, lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    const auto& e = corpus.entries.at(i++);
    Prediction p;
    p.id = e.id;
    p.sentence = e.tree;
    if (j.value("has_tree", false)) p.tree = e.tree;
    if (e.graph) p.graph = *e.graph;
    if (j.contains("arborescence")) {
      try {
        p.arborescence = arborescence_from_json(j.at("arborescence"));
      } catch (const json::exception& err) {
        throw ParseError(std::string("$.arborescence: ") + err.what(), lineno);
      }
      p.has_semantics = true;
    }
    if (j.contains("warnings")) p.warnings = j.at("warnings").get<std::vector<std::string>>();
    out.predictions.push_back(std::move(p));
  }
  const std::string oracle_path = prefix + ".oracle.jsonl";
  if (std::filesystem::exists(oracle_path)) out.oracle = graphs_of(read_uds_jsonl_file(oracle_path));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

SScoreCounts s_score_corpus(const Corpus& gold, const std::vector<Prediction>& predictions, bool include_syntax,
                            int restarts, Rng& rng) {
  SScoreCounts total;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& e = gold.entries[i];
    if (!e.graph || e.graph->empty()) continue;
    const auto gold_arb = uds_to_arborescence(*e.graph, e.tree, false);
    const auto g = score_graph(gold_arb, include_syntax);
    const auto p = score_graph(predictions[i].arborescence, include_syntax);
    total += s_score_counts(p, g, restarts, rng);
  }
  return total;
}

namespace {

void attribute_reports(const std::vector<AttributeObservation>& test, const std::vector<AttributeObservation>& dev,
                       bool edges, std::map<std::string, AttributeReport>& out) {
  using Pairs = std::pair<std::vector<double>, std::vector<double>>;
  std::map<std::string, Pairs> t, d;
  for (const auto& o : test) {
    if (o.edge != edges) continue;
    t[o.attribute].first.push_back(o.pred);
    t[o.attribute].second.push_back(o.gold);
  }
  for (const auto& o : dev) {
    if (o.edge != edges) continue;
    d[o.attribute].first.push_back(o.pred);
    d[o.attribute].second.push_back(o.gold);
  }
  for (const auto& [name, pairs] : t) {
    AttributeReport r;
    r.correlation = pearson_rho(pairs.first, pairs.second);
    auto it = d.find(name);
    if (it != d.end() && !it->second.first.empty()) {
      r.threshold = tune_threshold_f1(it->second.first, it->second.second, pairs.first, pairs.second);
    }
    out[name] = std::move(r);
  }
}

}  // namespace

MetricsReport evaluate(const Corpus& gold, const std::vector<Prediction>& predictions,
                       const std::vector<UDSGraph>* oracle, const AttributeDev* dev, const EvalOptions& options) {
  if (gold.size() != predictions.size()) {
    throw Error("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                std::to_string(gold.size()) + " gold sentences");
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold.entries[i].id != predictions[i].id) {
      throw Error("evaluate: prediction '" + predictions[i].id + "' does not align with gold '" +
                  gold.entries[i].id + "'");
    }
  }
  MetricsReport report;
  report.sentences = gold.size();

  bool with_trees = !predictions.empty();
  for (const auto& p : predictions) with_trees = with_trees && p.tree.has_value();
  if (with_trees) {
    std::vector<UDTree> pred, ref;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      pred.push_back(*predictions[i].tree);
      ref.push_back(gold.entries[i].tree);
    }
    report.attachment = uas_las(pred, ref);
  }

  bool with_graphs = !predictions.empty() && gold.has_semantics();
  for (const auto& p : predictions) with_graphs = with_graphs && p.has_semantics;
  if (with_graphs) {
    Rng rng(options.seed);
    report.s_score_syn = prf(s_score_corpus(gold, predictions, true, options.restarts, rng));
    report.s_score_sem = prf(s_score_corpus(gold, predictions, false, options.restarts, rng));
  }

  if (oracle) {
    const auto test_obs = collect_observations(gold.entries, *oracle);
    std::vector<AttributeObservation> dev_obs;
    if (dev && dev->gold && dev->oracle) {
      dev_obs = collect_observations(dev->gold->entries, *dev->oracle);
    } else {
      dev_obs = test_obs;
      if (!test_obs.empty()) report.warnings.push_back("no development data: thresholds tuned on the evaluated data");
    }
    attribute_reports(test_obs, dev_obs, false, report.node_attributes);
    attribute_reports(test_obs, dev_obs, true, report.edge_attributes);
  }

  for (const auto& p : predictions) {
    for (const auto& w : p.warnings) report.warnings.push_back(p.id + ": " + w);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void check_supervision(const ModelConfig& config, const Corpus& corpus) {
  if (corpus.size() == 0) throw ConfigError("empty corpus");
  const bool needs_graphs = config.mode == Mode::kBase || mode_is_concat(config.mode);
  for (const auto& e : corpus.entries) {
    if (needs_graphs && (!e.graph || e.graph->empty())) {
      throw ConfigError("mode " + std::string(to_string(config.mode)) + " needs a semantic graph for every sentence; '" +
                        e.id + "' has none");
    }
  }
  if (mode_uses_decoder(config.mode) && !corpus.has_semantics()) {
    throw ConfigError("mode " + std::string(to_string(config.mode)) + " needs semantic graphs, the corpus has none");
  }
}

double dev_score(const ModelConfig& config, const MetricsReport& report) {
  if (config.mode == Mode::kBi) return report.attachment ? report.attachment->las : 0.0;
  return report.s_score_sem ? report.s_score_sem->f1 : 0.0;
}

TrainResult train(const ModelConfig& config, const Vocabulary& vocab, const Corpus& train_data, const Corpus& dev_data,
                  const TrainOptions& options) {
  config.validate();
  check_supervision(config, train_data);
  check_supervision(config, dev_data);

  TrainResult result{Parser(config, vocab, options.seed), {}, {}, 0, -1.0, "epoch limit"};
  Parser& parser = result.parser;
  if (options.init) {
    const auto& src = options.init->params();
    if (src.size() != parser.params().size()) throw ShapeError("initial parameters do not match the model");
    for (auto& [name, t] : parser.params().all()) {
      if (!src.contains(name)) throw ShapeError("initial parameters lack '" + name + "'");
      const auto& s = src.at(name);
      if (s.shape() != t.shape()) {
        throw ShapeError("parameter '" + name + "': initial shape " + s.shape().str() + ", model shape " +
                         t.shape().str());
      }
      std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
    }
  }
  parser.freeze_encoder_layers(config.frozen_encoder_layers);

  std::vector<Example> examples;
  for (const auto& e : train_data.entries) examples.push_back(make_example(e, vocab, config));

  Rng order_rng(options.seed ^ 0x5eedf00dULL);
  Adam adam;
  long step = 0;
  int since_best = 0;
  std::map<std::string, std::vector<double>> best;

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      std::vector<const Example*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + static_cast<std::size_t>(config.batch_size)); ++k) {
        batch.push_back(&examples[order[k]]);
      }
      parser.params().zero_grad();
      LossOutput loss = parser.compute_loss(batch, true);
      ad::backward(loss.total);
      ++step;
      const double lr = noam_lr(step, static_cast<std::size_t>(config.d_model), config.warmup, config.lr);
      if (options.record_steps) {
        StepRecord s;
        s.step = step;
        s.lr = lr;
        s.loss = loss.total.item();
        for (const auto& [group, prefix] : Parser::gradient_groups()) s.grad_norms[group] = parser.params().grad_norm(prefix);
        result.steps.push_back(std::move(s));
      }
      adam.step(parser.params(), lr);
      rec.train_loss += loss.total.item();
      for (const auto& [k, v] : loss.components) rec.components[k] += v;
      ++batches;
    }
    if (batches > 0) {
      rec.train_loss /= static_cast<double>(batches);
      for (auto& [k, v] : rec.components) v /= static_cast<double>(batches);
    }

    const bool last = epoch == config.epochs;
    if (epoch % std::max(1, options.eval_every) == 0 || last) {
      const auto preds = predict(parser, dev_data);
      const MetricsReport report = evaluate(dev_data, preds, nullptr, nullptr, options.eval);
      rec.dev_metrics = to_json(report);
      rec.dev_score = dev_score(config, report);
      if (*rec.dev_score > result.best_score) {
        result.best_score = *rec.dev_score;
        result.best_epoch = epoch;
        since_best = 0;
        if (options.restore_best) {
          for (const auto& [name, t] : parser.params().all()) best[name].assign(t.data().begin(), t.data().end());
        }
      } else {
        since_best += std::max(1, options.eval_every);
      }
    }
    result.epochs.push_back(rec);
    if (options.on_epoch && options.on_epoch(rec, parser)) {
      result.stop_reason = "stopped by caller";
      break;
    }
    if (since_best >= config.patience) {
      result.stop_reason = "early stopping";
      break;
    }
  }

  if (options.restore_best && !best.empty()) {
    for (auto& [name, t] : parser.params().all()) {
      const auto& v = best.at(name);
      std::copy(v.begin(), v.end(), t.mutable_data().begin());
    }
  }
  return result;
}

}  // namespace udsp
