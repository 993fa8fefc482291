#include "udsp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "udsp/error.hpp"

namespace udsp {

AttachmentScores uas_las(const UDTree& pred, const UDTree& gold) {
  return uas_las(std::vector<UDTree>{pred}, std::vector<UDTree>{gold});
}

AttachmentScores uas_las(const std::vector<UDTree>& pred, const std::vector<UDTree>& gold) {
  if (pred.size() != gold.size()) {
    throw Error("attachment scores: " + std::to_string(pred.size()) + " predicted vs " + std::to_string(gold.size()) +
                " gold sentences");
  }
  std::size_t n = 0, u = 0, l = 0;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    const auto& p = pred[s];
    const auto& g = gold[s];
    if (p.size() != g.size() || p.heads.size() != g.heads.size()) {
      throw Error("attachment scores: sentence " + std::to_string(s + 1) + " has " + std::to_string(p.size()) +
                  " predicted vs " + std::to_string(g.size()) + " gold tokens");
    }
    for (std::size_t i = 0; i < g.heads.size(); ++i) {
      ++n;
      if (p.heads[i] == g.heads[i]) {
        ++u;
        if (p.deprels[i] == g.deprels[i]) ++l;
      }
    }
  }
  AttachmentScores out;
  out.tokens = n;
  if (n > 0) {
    out.uas = static_cast<double>(u) / static_cast<double>(n);
    out.las = static_cast<double>(l) / static_cast<double>(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// S-score
// ---------------------------------------------------------------------------

ScoreGraph score_graph(const UDSGraph& graph, const UDTree& tree) {
  ScoreGraph g;
  std::unordered_map<std::string, int> index;
  for (const auto& n : graph.nodes) {
    index.emplace(n.id, static_cast<int>(g.labels.size()));
    g.labels.push_back(n.head_token >= 1 && n.head_token <= static_cast<int>(tree.size()) ? tree.form(n.head_token)
                                                                                           : std::string("?"));
  }
  for (const auto& e : graph.edges) g.edges.emplace_back(index.at(e.src), index.at(e.dst), e.label);
  for (const auto& r : graph.roots) g.roots.push_back(index.at(r));
  return g;
}

ScoreGraph score_graph(const Arborescence& arb, bool include_syntax) {
  ScoreGraph g;
  std::map<int, int> by_coindex;
  std::vector<int> index(arb.size(), -1);
  for (std::size_t i = 1; i < arb.size(); ++i) {
    const auto& n = arb.nodes[i];
    if (n.kind == NodeKind::kSyntactic && !include_syntax) continue;
    if (n.kind == NodeKind::kSemantic) {
      auto it = by_coindex.find(n.coindex);
      if (it != by_coindex.end()) {
        index[i] = it->second;
        continue;
      }
      by_coindex.emplace(n.coindex, static_cast<int>(g.labels.size()));
    }
    index[i] = static_cast<int>(g.labels.size());
    g.labels.push_back(n.label);
  }
  std::set<std::tuple<int, int, std::string>> seen;
  for (std::size_t i = 1; i < arb.size(); ++i) {
    if (index[i] < 0) continue;
    const int par = arb.parent[i];
    if (par == 0) {
      if (std::find(g.roots.begin(), g.roots.end(), index[i]) == g.roots.end()) g.roots.push_back(index[i]);
      continue;
    }
    if (index[par] < 0) continue;
    std::tuple<int, int, std::string> e{index[par], index[i], arb.edge_label[i]};
    if (seen.insert(e).second) g.edges.push_back(e);
  }
  return g;
}

namespace {

struct Matcher {
  const ScoreGraph& pred;
  const ScoreGraph& gold;
  std::set<std::tuple<int, int, std::string>> gold_edges;
  std::vector<char> gold_root;
  std::vector<char> pred_root;
  std::vector<std::vector<int>> incident;  // pred node -> edge indices

  Matcher(const ScoreGraph& p, const ScoreGraph& g) : pred(p), gold(g) {
    gold_edges.insert(g.edges.begin(), g.edges.end());
    gold_root.assign(g.labels.size(), 0);
    for (int r : g.roots) gold_root[r] = 1;
    pred_root.assign(p.labels.size(), 0);
    for (int r : p.roots) pred_root[r] = 1;
    incident.resize(p.labels.size());
    for (std::size_t e = 0; e < p.edges.size(); ++e) {
      const auto& [s, d, l] = p.edges[e];
      incident[s].push_back(static_cast<int>(e));
      if (d != s) incident[d].push_back(static_cast<int>(e));
    }
  }

  int node_terms(int i, const std::vector<int>& map) const {
    const int j = map[i];
    if (j < 0) return 0;
    int s = pred.labels[i] == gold.labels[j] ? 1 : 0;
    if (pred_root[i] && gold_root[j]) ++s;
    return s;
  }

  int edge_term(int e, const std::vector<int>& map) const {
    const auto& [s, d, l] = pred.edges[e];
    if (map[s] < 0 || map[d] < 0) return 0;
    return gold_edges.count({map[s], map[d], l}) ? 1 : 0;
  }

  int total(const std::vector<int>& map) const {
    int s = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) s += node_terms(static_cast<int>(i), map);
    for (std::size_t e = 0; e < pred.edges.size(); ++e) s += edge_term(static_cast<int>(e), map);
    return s;
  }

  // Score of every term that involves any of the given pred nodes.
  int local(std::initializer_list<int> nodes, const std::vector<int>& map) const {
    int s = 0;
    std::vector<int> edges;
    for (int i : nodes) {
      s += node_terms(i, map);
      edges.insert(edges.end(), incident[i].begin(), incident[i].end());
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (int e : edges) s += edge_term(e, map);
    return s;
  }
};

}  // namespace

std::size_t matched_triples(const ScoreGraph& pred, const ScoreGraph& gold, const std::vector<int>& map) {
  Matcher m(pred, gold);
  return static_cast<std::size_t>(m.total(map));
}

SScoreCounts s_score_counts(const ScoreGraph& pred, const ScoreGraph& gold, int restarts, Rng& rng) {
  SScoreCounts out;
  out.predicted = pred.triples();
  out.gold = gold.triples();
  const int np = static_cast<int>(pred.labels.size());
  const int ng = static_cast<int>(gold.labels.size());
  if (np == 0 || ng == 0) return out;
  Matcher m(pred, gold);
  int best = -1;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    std::vector<int> map(np, -1);
    std::vector<int> owner(ng, -1);  // gold node -> pred node
    if (r == 0) {
      for (int i = 0; i < np; ++i) {
        for (int j = 0; j < ng; ++j) {
          if (owner[j] < 0 && pred.labels[i] == gold.labels[j]) {
            map[i] = j;
            owner[j] = i;
            break;
          }
        }
      }
    } else {
      std::vector<int> perm(ng);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (int i = 0; i < np && i < ng; ++i) {
        map[i] = perm[i];
        owner[perm[i]] = i;
      }
    }
    int score = m.total(map);
    // Steepest ascent over "remap i to a free gold node / unmap i" and
    // "swap the images of i and k".
    while (true) {
      int gain = 0, kind = 0, a = -1, b = -1;
      for (int i = 0; i < np; ++i) {
        const int before = m.local({i}, map);
        const int old = map[i];
        for (int j = -1; j < ng; ++j) {
          if (j == old || (j >= 0 && owner[j] >= 0)) continue;
          map[i] = j;
          const int d = m.local({i}, map) - before;
          map[i] = old;
          if (d > gain) {
            gain = d;
            kind = 1;
            a = i;
            b = j;
          }
        }
        for (int k = i + 1; k < np; ++k) {
          if (map[i] == map[k]) continue;
          const int pair_before = m.local({i, k}, map);
          std::swap(map[i], map[k]);
          const int d = m.local({i, k}, map) - pair_before;
          std::swap(map[i], map[k]);
          if (d > gain) {
            gain = d;
            kind = 2;
            a = i;
            b = k;
          }
        }
      }
      if (gain <= 0) break;
      if (kind == 1) {
        if (map[a] >= 0) owner[map[a]] = -1;
        map[a] = b;
        if (b >= 0) owner[b] = a;
      } else {
        std::swap(map[a], map[b]);
        if (map[a] >= 0) owner[map[a]] = a;
        if (map[b] >= 0) owner[map[b]] = b;
      }
      score += gain;
    }
    best = std::max(best, score);
    if (best == static_cast<int>(std::min(out.predicted, out.gold))) break;  // cannot do better
  }
  out.matched = static_cast<std::size_t>(best);
  return out;
}

PRF prf(const SScoreCounts& c) {
  PRF r;
  if (c.predicted > 0) r.precision = static_cast<double>(c.matched) / static_cast<double>(c.predicted);
  if (c.gold > 0) r.recall = static_cast<double>(c.matched) / static_cast<double>(c.gold);
  if (c.predicted == 0 && c.gold == 0) r.precision = r.recall = 1.0;
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

PRF s_score(const ScoreGraph& pred, const ScoreGraph& gold, int restarts, Rng& rng) {
  return prf(s_score_counts(pred, gold, restarts, rng));
}

// ---------------------------------------------------------------------------
// Attribute metrics
// ---------------------------------------------------------------------------

std::optional<Correlation> pearson_rho(const std::vector<double>& pred, const std::vector<double>& gold) {
  if (pred.size() != gold.size()) throw Error("pearson_rho: length mismatch");
  const std::size_t n = pred.size();
  if (n < 3) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += pred[i];
    my += gold[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred[i] - mx, dy = gold[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  Correlation c;
  c.n = n;
  c.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(n - 2);
  if (n == 3 && std::abs(c.rho) >= 1.0) {
    c.p_value = 0.0;
  } else if (std::abs(c.rho) >= 1.0) {
    c.p_value = 0.0;
  } else {
    const double t = c.rho * std::sqrt(df / (1.0 - c.rho * c.rho));
    boost::math::students_t dist(df);
    c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return c;
}

double binary_f1(const std::vector<double>& pred, const std::vector<double>& gold, double theta) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > theta, g = gold[i] > 0.0;
    if (p && g) ++tp;
    else if (p) ++fp;
    else if (g) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

ThresholdResult tune_threshold_f1(const std::vector<double>& dev_pred, const std::vector<double>& dev_gold,
                                  const std::vector<double>& test_pred, const std::vector<double>& test_gold) {
  if (dev_pred.empty()) throw Error("threshold tuning needs development data");
  if (dev_pred.size() != dev_gold.size() || test_pred.size() != test_gold.size()) {
    throw Error("threshold tuning: prediction/gold length mismatch");
  }
  std::vector<double> sorted = dev_pred;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> grid{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) grid.push_back(sorted[i] + (sorted[i + 1] - sorted[i]) / 2.0);
  grid.push_back(std::numeric_limits<double>::infinity());

  ThresholdResult r;
  r.theta = grid.front();
  r.dev_f1 = binary_f1(dev_pred, dev_gold, r.theta);
  for (double theta : grid) {
    const double f = binary_f1(dev_pred, dev_gold, theta);
    if (f > r.dev_f1) {
      r.dev_f1 = f;
      r.theta = theta;
    }
  }
  r.test_f1 = binary_f1(test_pred, test_gold, r.theta);
  const auto pos = std::count_if(dev_gold.begin(), dev_gold.end(), [](double g) { return g > 0.0; });
  if (pos == 0 || pos == static_cast<long>(dev_gold.size())) {
    r.warning = "development gold labels are all " + std::string(pos == 0 ? "negative" : "positive") +
                "; F1 is degenerate";
  }
  return r;
}

std::vector<AttributeObservation> collect_observations(const std::vector<CorpusEntry>& gold,
                                                       const std::vector<UDSGraph>& predicted) {
  if (gold.size() != predicted.size()) throw Error("attribute observations: corpus misalignment");
  std::vector<AttributeObservation> obs;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (!gold[s].graph) continue;
    const auto& g = *gold[s].graph;
    const auto& p = predicted[s];
    const auto& tree = gold[s].tree;
    const double T = static_cast<double>(tree.size());
    std::map<std::string, const SemanticNode*> pnodes;
    for (const auto& n : p.nodes) pnodes[n.id] = &n;
    for (const auto& n : g.nodes) {
      auto it = pnodes.find(n.id);
      for (const auto& [name, v] : n.attributes) {
        if (!v.applies) continue;
        if (it == pnodes.end()) continue;
        auto pa = it->second->attributes.find(name);
        if (pa == it->second->attributes.end()) continue;
        AttributeObservation o;
        o.sentence = s;
        o.node = n.id;
        o.attribute = name;
        o.pred = pa->second.value;
        o.gold = v.value;
        o.position_ratio = static_cast<double>(n.head_token) / T;
        o.relation = tree.deprels.at(n.head_token - 1);
        obs.push_back(std::move(o));
      }
    }
    std::map<std::tuple<std::string, std::string, std::string>, const SemanticEdge*> pedges;
    for (const auto& e : p.edges) pedges[{e.src, e.dst, e.label}] = &e;
    for (const auto& e : g.edges) {
      auto it = pedges.find({e.src, e.dst, e.label});
      if (it == pedges.end()) continue;
      for (const auto& [name, v] : e.attributes) {
        if (!v.applies) continue;
        auto pa = it->second->attributes.find(name);
        if (pa == it->second->attributes.end()) continue;
        AttributeObservation o;
        o.sentence = s;
        o.node = e.src + "->" + e.dst;
        o.edge = true;
        o.attribute = name;
        o.pred = pa->second.value;
        o.gold = v.value;
        const auto* dst = g.find(e.dst);
        o.position_ratio = static_cast<double>(dst->head_token) / T;
        o.relation = tree.deprels.at(dst->head_token - 1);
        obs.push_back(std::move(o));
      }
    }
  }
  return obs;
}

std::map<std::string, std::optional<Correlation>> attribute_rho(const std::vector<AttributeObservation>& obs,
                                                                bool edges) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by;
  for (const auto& o : obs) {
    if (o.edge != edges) continue;
    by[o.attribute].first.push_back(o.pred);
    by[o.attribute].second.push_back(o.gold);
  }
  std::map<std::string, std::optional<Correlation>> out;
  for (const auto& [name, v] : by) out[name] = pearson_rho(v.first, v.second);
  return out;
}

int percentile_bin(double ratio) { return std::clamp(static_cast<int>(std::floor(ratio * 10.0)), 0, 9); }

PercentileTable percentile_rho(const std::vector<AttributeObservation>& obs) {
  PercentileTable table;
  std::array<std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>, 10> bins;
  std::array<std::set<std::pair<std::size_t, std::string>>, 10> nodes;
  for (const auto& o : obs) {
    if (o.edge) continue;
    const int b = percentile_bin(o.position_ratio);
    bins[b][o.attribute].first.push_back(o.pred);
    bins[b][o.attribute].second.push_back(o.gold);
    nodes[b].insert({o.sentence, o.node});
  }
  for (int b = 0; b < 10; ++b) {
    table.nodes[b] = nodes[b].size();
    double sum = 0.0;
    int count = 0;
    for (const auto& [name, v] : bins[b]) {
      if (auto c = pearson_rho(v.first, v.second)) {
        sum += c->rho;
        ++count;
      }
    }
    if (count > 0) table.mean_rho[b] = sum / count;
  }
  return table;
}

std::vector<RelationDelta> per_relation_uas_delta(const std::vector<UDTree>& a, const std::vector<UDTree>& b,
                                                  const std::vector<UDTree>& gold) {
  if (a.size() != gold.size() || b.size() != gold.size()) throw Error("relation deltas: corpus misalignment");
  struct Acc {
    std::size_t n = 0, ua = 0, ub = 0;
  };
  std::map<std::string, Acc> acc;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold[s];
    if (a[s].heads.size() != g.heads.size() || b[s].heads.size() != g.heads.size()) {
      throw Error("relation deltas: sentence " + std::to_string(s + 1) + " token counts differ");
    }
    for (std::size_t i = 0; i < g.heads.size(); ++i) {
      auto& x = acc[g.deprels[i]];
      ++x.n;
      if (a[s].heads[i] == g.heads[i]) ++x.ua;
      if (b[s].heads[i] == g.heads[i]) ++x.ub;
    }
  }
  std::vector<RelationDelta> rows;
  for (const auto& [rel, x] : acc) {
    RelationDelta d;
    d.relation = rel;
    d.count = x.n;
    d.uas_a = static_cast<double>(x.ua) / static_cast<double>(x.n);
    d.uas_b = static_cast<double>(x.ub) / static_cast<double>(x.n);
    d.delta = d.uas_a - d.uas_b;
    rows.push_back(d);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const RelationDelta& l, const RelationDelta& r) { return l.count > r.count; });
  if (rows.size() > 10) rows.resize(10);
  return rows;
}

std::map<std::string, std::map<std::string, HeatmapCell>> relation_attribute_rho(
    const std::vector<AttributeObservation>& obs) {
  std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> by;
  for (const auto& o : obs) {
    if (o.edge) continue;
    auto& v = by[o.attribute][o.relation];
    v.first.push_back(o.pred);
    v.second.push_back(o.gold);
  }
  std::map<std::string, std::map<std::string, HeatmapCell>> out;
  for (const auto& [attr, rels] : by) {
    for (const auto& [rel, v] : rels) {
      HeatmapCell cell;
      cell.n = v.first.size();
      cell.correlation = pearson_rho(v.first, v.second);
      cell.significant = cell.correlation && cell.n >= 3 && cell.correlation->p_value < 0.05;
      out[attr][rel] = cell;
    }
  }
  return out;
}

std::map<PPDirection, PPScores> pp_attachment_eval(const std::vector<UDTree>& pred_original,
                                                   const std::vector<UDTree>& pred_altered,
                                                   const std::vector<PPPair>& pairs) {
  if (pred_original.size() != pairs.size() || pred_altered.size() != pairs.size()) {
    throw Error("PP evaluation: predictions do not align with the pairs");
  }
  std::map<PPDirection, std::array<std::vector<UDTree>, 4>> split;  // pred orig, gold orig, pred alt, gold alt
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& s = split[pairs[i].direction];
    s[0].push_back(pred_original[i]);
    s[1].push_back(pairs[i].original);
    s[2].push_back(pred_altered[i]);
    s[3].push_back(pairs[i].altered);
  }
  std::map<PPDirection, PPScores> out;
  for (const auto& [dir, s] : split) {
    PPScores r;
    r.original = uas_las(s[0], s[1]);
    r.altered = uas_las(s[2], s[3]);
    r.uas_drop = r.original.uas - r.altered.uas;
    r.las_drop = r.original.las - r.altered.las;
    out[dir] = r;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

nlohmann::json prf_json(const PRF& p) { return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; }

nlohmann::json attributes_json(const std::map<std::string, AttributeReport>& attrs) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, a] : attrs) {
    nlohmann::json e = nlohmann::json::object();
    if (a.correlation) {
      e["rho"] = a.correlation->rho;
      e["p_value"] = a.correlation->p_value;
      e["n"] = a.correlation->n;
    } else {
      e["rho"] = nullptr;
    }
    if (a.threshold) {
      e["theta"] = std::isfinite(a.threshold->theta) ? nlohmann::json(a.threshold->theta)
                                                     : nlohmann::json(a.threshold->theta > 0 ? "+inf" : "-inf");
      e["dev_f1"] = a.threshold->dev_f1;
      e["test_f1"] = a.threshold->test_f1;
    }
    j[name] = e;
  }
  return j;
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = nlohmann::json::object();
  j["sentences"] = r.sentences;
  if (r.attachment) {
    j["uas"] = r.attachment->uas;
    j["las"] = r.attachment->las;
    j["tokens"] = r.attachment->tokens;
  }
  if (r.s_score_syn) j["s_score_syn"] = prf_json(*r.s_score_syn);
  if (r.s_score_sem) j["s_score_sem"] = prf_json(*r.s_score_sem);
  if (!r.node_attributes.empty()) j["node_attributes"] = attributes_json(r.node_attributes);
  if (!r.edge_attributes.empty()) j["edge_attributes"] = attributes_json(r.edge_attributes);
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

}  // namespace udsp
