#include "udsp/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include "udsp/error.hpp"

namespace udsp {

using ad::Tensor;

HeadScores::HeadScores(std::size_t t, std::vector<double> v) : tokens(t), values(std::move(v)) {
  if (values.size() != tokens * (tokens + 1)) {
    throw ShapeError("head scores: " + std::to_string(values.size()) + " values for " + std::to_string(tokens) +
                     " tokens");
  }
}

HeadScores HeadScores::from_tensor(const Tensor& t) {
  if (t.cols() != t.rows() + 1) throw ShapeError("head scores must be T x (T+1), got " + t.shape().str());
  return HeadScores(t.rows(), std::vector<double>(t.data().begin(), t.data().end()));
}

double tree_score(const HeadScores& scores, const std::vector<int>& heads) {
  double s = 0.0;
  for (std::size_t i = 0; i < heads.size(); ++i) s += scores.at(i + 1, heads[i]);
  return s;
}

namespace {

constexpr double kNeg = -std::numeric_limits<double>::infinity();
using Matrix = std::vector<std::vector<double>>;  // m[head][dep]

// Chu-Liu-Edmonds by recursive cycle contraction; node 0 is the root.
std::vector<int> max_arborescence(const Matrix& s) {
  const int n = static_cast<int>(s.size());
  std::vector<int> par(n, -1);
  for (int d = 1; d < n; ++d) {
    int best = -1;
    for (int h = 0; h < n; ++h) {
      if (h == d) continue;
      if (best < 0 || s[h][d] > s[best][d]) best = h;
    }
    par[d] = best;
  }

  std::vector<int> cycle;
  std::vector<int> mark(n, -1);
  for (int v0 = 1; v0 < n && cycle.empty(); ++v0) {
    int v = v0;
    while (v != 0 && mark[v] == -1) {
      mark[v] = v0;
      v = par[v];
    }
    if (v != 0 && mark[v] == v0) {
      int u = v;
      do {
        cycle.push_back(u);
        u = par[u];
      } while (u != v);
    }
  }
  if (cycle.empty()) return par;

  std::vector<char> in_cycle(n, 0);
  for (int v : cycle) in_cycle[v] = 1;
  std::vector<int> new_id(n, -1), old_id;
  for (int v = 0; v < n; ++v) {
    if (!in_cycle[v]) {
      new_id[v] = static_cast<int>(old_id.size());
      old_id.push_back(v);
    }
  }
  const int c = static_cast<int>(old_id.size());
  const int m = c + 1;
  for (int v : cycle) new_id[v] = c;

  Matrix ns(m, std::vector<double>(m, kNeg));
  std::vector<int> enter(m, -1);  // outside head -> cycle node it enters
  std::vector<int> leave(m, -1);  // outside dependent -> cycle node heading it
  for (int u = 0; u < n; ++u) {
    for (int v = 1; v < n; ++v) {
      if (u == v) continue;
      const int nu = new_id[u], nv = new_id[v];
      if (!in_cycle[u] && !in_cycle[v]) {
        ns[nu][nv] = s[u][v];
      } else if (!in_cycle[u] && in_cycle[v]) {
        const double val = s[u][v] - s[par[v]][v];
        if (enter[nu] < 0 || val > ns[nu][c]) {
          ns[nu][c] = val;
          enter[nu] = v;
        }
      } else if (in_cycle[u] && !in_cycle[v]) {
        if (leave[nv] < 0 || s[u][v] > ns[c][nv]) {
          ns[c][nv] = s[u][v];
          leave[nv] = u;
        }
      }
    }
  }
  const auto sub = max_arborescence(ns);
  for (int v = 1; v < n; ++v) {
    if (in_cycle[v]) continue;
    const int h = sub[new_id[v]];
    par[v] = h == c ? leave[new_id[v]] : old_id[h];
  }
  const int h = sub[c];
  par[enter[h]] = old_id[h];
  return par;
}

}  // namespace

std::vector<int> chu_liu_edmonds(const HeadScores& scores) {
  const std::size_t T = scores.tokens;
  if (T == 0) return {};
  Matrix s(T + 1, std::vector<double>(T + 1, kNeg));
  for (std::size_t d = 1; d <= T; ++d) {
    for (std::size_t h = 0; h <= T; ++h) {
      if (h != d) s[h][d] = scores.at(d, h);
    }
  }
  auto to_heads = [&](const std::vector<int>& par) { return std::vector<int>(par.begin() + 1, par.end()); };
  auto heads = to_heads(max_arborescence(s));
  if (std::count(heads.begin(), heads.end(), 0) == 1) return heads;

  // Several tokens took ROOT: try every single root child, keep the best.
  std::vector<int> best;
  double best_score = kNeg;
  for (std::size_t r = 1; r <= T; ++r) {
    Matrix sr = s;
    for (std::size_t d = 1; d <= T; ++d) {
      if (d != r) sr[0][d] = kNeg;
    }
    auto cand = to_heads(max_arborescence(sr));
    const double sc = tree_score(scores, cand);
    if (best.empty() || sc > best_score) {
      best = std::move(cand);
      best_score = sc;
    }
  }
  return best;
}

std::vector<int> greedy_heads(const HeadScores& scores, const std::vector<double>& mask) {
  const std::size_t T = scores.tokens;
  if (!mask.empty() && mask.size() != scores.values.size()) throw ShapeError("greedy_heads: mask size mismatch");
  std::vector<int> heads(T, 0);
  for (std::size_t d = 1; d <= T; ++d) {
    int best = -1;
    double bv = kNeg;
    for (std::size_t h = 0; h <= T; ++h) {
      if (h == d) continue;
      double v = scores.at(d, h) + (mask.empty() ? 0.0 : mask[(d - 1) * (T + 1) + h]);
      if (best < 0 || v > bv) {
        best = static_cast<int>(h);
        bv = v;
      }
    }
    heads[d - 1] = best;
  }
  return heads;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

bool has_syntax_prefix(const std::string& label) { return label.compare(0, kSyntaxEdgePrefix.size(), kSyntaxEdgePrefix) == 0; }

void sentence_ids(const Parser& parser, const UDTree& sentence, std::vector<int>& tokens, std::vector<int>& upos) {
  for (const auto& t : sentence.tokens) {
    tokens.push_back(parser.vocab().tokens.id(t.form));
    upos.push_back(parser.vocab().upos.id(t.upos));
  }
}

std::size_t argmax_from(const std::vector<double>& v, const std::vector<char>& allowed) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!allowed[i]) continue;
    if (best == v.size() || v[i] > v[best]) best = i;
  }
  return best;
}

AttributeMap read_attributes(const AttributePrediction& pred, std::size_t row, const std::vector<std::string>& names) {
  AttributeMap out;
  for (std::size_t a = 0; a < names.size(); ++a) {
    double value = pred.value.at(row, a);
    clamp_attribute(value);
    out[names[a]] = AttributeValue{value, pred.mask.at(row, a) > 0.0};
  }
  return out;
}

// Predicted UD tree from the syntactic segment of a concat-mode output.
UDTree tree_from_segment(const UDTree& sentence, const std::vector<TargetNode>& nodes) {
  UDTree tree = sentence;
  const std::size_t T = sentence.size();
  std::vector<char> done(T + 1, 0);
  std::fill(tree.heads.begin(), tree.heads.end(), 0);
  std::fill(tree.deprels.begin(), tree.deprels.end(), "dep");
  tree.heads.resize(T, 0);
  tree.deprels.resize(T, "dep");
  for (const auto& n : nodes) {
    if (n.segment != Segment::kSyntax || n.source < 1 || n.source > static_cast<int>(T) || done[n.source]) continue;
    done[n.source] = 1;
    tree.heads[n.source - 1] = n.head == 0 ? 0 : nodes[n.head - 1].source;
    tree.deprels[n.source - 1] =
        has_syntax_prefix(n.edge_label) ? n.edge_label.substr(kSyntaxEdgePrefix.size()) : n.edge_label;
  }
  return tree;
}

}  // namespace

Generation generate_graph(Parser& parser, const UDTree& sentence, std::optional<std::size_t> max_nodes) {
  ad::NoGradGuard guard;
  const auto& config = parser.config();
  const auto& vocab = parser.vocab();
  const Mode mode = config.mode;
  std::vector<int> tokens, upos;
  sentence_ids(parser, sentence, tokens, upos);
  const std::size_t T = tokens.size();

  Generation gen;
  gen.arborescence.add_node(ArbNode{"<root>", std::nullopt, 0, NodeKind::kRoot}, -1, "");
  const Tensor enc = parser.encode(tokens, upos, false);

  std::optional<SyntacticParse> parse;
  if (mode_uses_biaffine(mode)) {
    parse = parser.syntactic_biaffine(enc, false);
    const auto heads = chu_liu_edmonds(HeadScores::from_tensor(parse->scores));
    const Tensor lab = parser.syntactic_label_scores(*parse, heads);
    UDTree tree = sentence;
    tree.heads = heads;
    tree.deprels.assign(T, "dep");
    for (std::size_t i = 0; i < T; ++i) {
      int best = -1;
      for (int r = SymbolTable::kNumSpecials; r < static_cast<int>(lab.cols()); ++r) {
        if (best < 0 || lab.at(i, r) > lab.at(i, best)) best = r;
      }
      if (best >= 0) tree.deprels[i] = vocab.relations.symbol(best);
    }
    gen.tree = std::move(tree);
  }
  if (!mode_uses_decoder(mode)) return gen;

  const Tensor mem = parser.memory(enc, parse ? &*parse : nullptr);
  DecoderState state = parser.start_decoder(mem);
  const std::size_t limit = max_nodes.value_or(config.max_decode_length(T));
  const int root_label = vocab.edge_labels.id(kRootEdgeLabel);

  std::vector<TargetNode> nodes;
  std::set<std::pair<int, int>> dag_edges;  // semantic (head coindex, coindex)
  Segment segment = mode == Mode::kCb ? Segment::kSyntax : Segment::kSemantic;
  bool sep_seen = false, eos = false;
  std::vector<char> syntax_used(T + 1, 0);
  DecoderInput input;  // BOS

  auto reaches = [&](int from, int to) {
    std::vector<int> stack{from};
    std::set<int> seen;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      if (u == to) return true;
      if (!seen.insert(u).second) continue;
      for (auto it = dag_edges.lower_bound({u, std::numeric_limits<int>::min()}); it != dag_edges.end() && it->first == u; ++it) {
        stack.push_back(it->second);
      }
    }
    return false;
  };

  while (true) {
    if (nodes.size() >= limit) {
      gen.truncated = true;
      gen.warnings.push_back("no EOS within " + std::to_string(limit) + " nodes; output truncated");
      break;
    }
    parser.decode_step(state, input);
    const std::size_t p = nodes.size() + 1;  // position being predicted
    const LabelDistribution dist = parser.label_distribution(state.z, mem);
    const std::size_t row = p - 1;
    const double sw_gen = dist.switch_probs.at(row, 0), sw_src = dist.switch_probs.at(row, 1);
    const double sw_tgt = dist.switch_probs.at(row, 2);

    // Candidates: EOS, SEP, source tokens 1..T, copies of nodes 1..p-1.
    const std::size_t n_cand = 2 + T + (p - 1);
    std::vector<double> score(n_cand, 0.0);
    std::vector<char> allowed(n_cand, 0);
    score[0] = sw_gen * dist.generate.at(row, SymbolTable::kEos);
    allowed[0] = 1;
    if (mode_is_concat(mode) && !sep_seen) {
      score[1] = sw_gen * dist.generate.at(row, SymbolTable::kSep);
      allowed[1] = 1;
    }
    for (std::size_t t = 1; t <= T; ++t) {
      double s = sw_src * dist.source.at(row, t - 1);
      if (segment == Segment::kSyntax) {
        allowed[1 + t] = !syntax_used[t];
      } else {
        if (tokens[t - 1] != SymbolTable::kUnk) s += sw_gen * dist.generate.at(row, tokens[t - 1]);
        allowed[1 + t] = 1;
      }
      score[1 + t] = s;
    }
    if (segment == Segment::kSemantic) {
      for (std::size_t k = 1; k < p; ++k) {
        const auto& n = nodes[k - 1];
        if (n.segment != Segment::kSemantic || n.kind != NodeKind::kSemantic || n.is_copy) continue;
        score[1 + T + k] = sw_tgt * dist.target.at(row, k - 1);
        allowed[1 + T + k] = 1;
      }
    }

    const Tensor z_dep = ad::slice_rows(state.z, row, row + 1);
    const Tensor z_keys = ad::slice_rows(state.z, 1, p);
    std::vector<double> head_row;
    {
      const Tensor hs = parser.semantic_head_scores(z_dep, z_keys);
      head_row.assign(hs.data().begin(), hs.data().end());
    }

    // Take the best candidate that admits a well-formed attachment.
    TargetNode node;
    bool chosen = false;
    while (!chosen) {
      const std::size_t c = argmax_from(score, allowed);
      if (c == score.size()) break;
      allowed[c] = 0;
      if (c == 0) {
        eos = true;
        break;
      }
      if (c == 1) {
        node.label = kSepSymbol;
        node.label_id = SymbolTable::kSep;
        node.head = 0;
        node.edge_label = kSepSymbol;
        node.edge_label_id = SymbolTable::kSep;
        node.segment = Segment::kSeparator;
        node.coindex = static_cast<int>(p);
        chosen = true;
        break;
      }
      node = TargetNode{};
      node.segment = segment;
      bool copy = c >= 2 + T;
      if (!copy) {
        const int t = static_cast<int>(c - 1);
        node.source = t;
        node.label = sentence.form(t);
        node.label_id = tokens[t - 1];
        node.coindex = static_cast<int>(p);
      } else {
        const auto& orig = nodes[c - 2 - T];
        node.source = orig.source;
        node.label = orig.label;
        node.label_id = orig.label_id;
        node.coindex = orig.coindex;
        node.is_copy = true;
      }
      // Heads: ROOT or an earlier node of the same segment that can govern.
      std::vector<char> head_ok(p, 0);
      head_ok[0] = 1;
      for (std::size_t k = 1; k < p; ++k) {
        const auto& h = nodes[k - 1];
        if (h.segment != segment) continue;
        if (segment == Segment::kSemantic && h.kind != NodeKind::kSemantic) continue;
        if (copy && (h.coindex == node.coindex || dag_edges.count({h.coindex, node.coindex}) ||
                     reaches(node.coindex, h.coindex))) {
          continue;
        }
        head_ok[k] = 1;
      }
      const std::size_t head = argmax_from(head_row, head_ok);
      node.head = static_cast<int>(head);

      const Tensor lab = parser.semantic_label_scores(z_dep, z_keys, {node.head});
      std::vector<double> lab_row(lab.data().begin(), lab.data().end());
      std::vector<char> lab_ok(lab_row.size(), 0);
      for (std::size_t l = SymbolTable::kNumSpecials; l < lab_row.size(); ++l) {
        const std::string& name = vocab.edge_labels.symbol(static_cast<int>(l));
        const bool syn = has_syntax_prefix(name);
        if (segment == Segment::kSyntax) {
          lab_ok[l] = syn;
        } else if (node.head == 0) {
          lab_ok[l] = static_cast<int>(l) == root_label;
        } else {
          lab_ok[l] = static_cast<int>(l) != root_label && !(copy && syn);
        }
      }
      std::size_t label = argmax_from(lab_row, lab_ok);
      if (label == lab_row.size()) {
        if (copy) continue;  // no admissible label for this copy; try the next candidate
        for (std::size_t l = SymbolTable::kNumSpecials; l < lab_row.size(); ++l) lab_ok[l] = 1;
        label = argmax_from(lab_row, lab_ok);
        if (label == lab_row.size()) label = SymbolTable::kUnk;
      }
      node.edge_label_id = static_cast<int>(label);
      node.edge_label = vocab.edge_labels.symbol(node.edge_label_id);
      if (segment == Segment::kSyntax || (has_syntax_prefix(node.edge_label) && node.head != 0)) {
        node.kind = NodeKind::kSyntactic;
      }
      chosen = true;
    }
    if (!chosen) break;  // EOS, or nothing admissible left

    if (node.segment == Segment::kSeparator) {
      sep_seen = true;
      segment = mode == Mode::kCb ? Segment::kSemantic : Segment::kSyntax;
    } else if (node.segment == Segment::kSyntax) {
      syntax_used[node.source] = 1;
    } else if (node.kind == NodeKind::kSemantic && node.head > 0) {
      dag_edges.insert({nodes[node.head - 1].coindex, node.coindex});
    }
    nodes.push_back(node);
    input = DecoderInput{};
    input.token = node.label_id;
    input.coindex = node.coindex;
    input.head_token = node.head == 0 ? SymbolTable::kRoot : nodes[node.head - 1].label_id;
    input.head_coindex = node.head == 0 ? 0 : nodes[node.head - 1].coindex;
    input.edge_label = node.edge_label_id;
  }
  if (!eos && !gen.truncated) gen.warnings.push_back("decoding stopped without EOS: no admissible candidate");
  if (mode_is_concat(mode) && !sep_seen) {
    gen.warnings.push_back(std::string("no separator in the output; treated it all as the ") +
                           (mode == Mode::kCb ? "syntactic" : "semantic") + " segment");
  }

  // One more step gives the key row of the last node for attribute reading.
  const std::size_t N = nodes.size();
  if (N > 0 && state.z.rows() < N + 1) parser.decode_step(state, input);
  const Tensor z_keys = ad::slice_rows(state.z, std::min<std::size_t>(1, state.z.rows()), std::min(N + 1, state.z.rows()));

  // Semantic segment -> arborescence (positions remapped).
  std::vector<int> arb_index(N + 1, 0);
  std::vector<int> node_rows, edge_rows, edge_heads;
  for (std::size_t p = 1; p <= N; ++p) {
    const auto& n = nodes[p - 1];
    if (n.segment != Segment::kSemantic) continue;
    std::optional<int> src;
    if (n.source > 0) src = n.source;
    arb_index[p] = gen.arborescence.add_node(ArbNode{n.label, src, n.coindex, n.kind}, arb_index[n.head], n.edge_label);
    if (n.kind == NodeKind::kSemantic && !n.is_copy) node_rows.push_back(static_cast<int>(p));
    if (n.kind == NodeKind::kSemantic && n.head > 0) {
      edge_rows.push_back(static_cast<int>(p));
      edge_heads.push_back(n.head);
    }
  }
  if (!node_rows.empty() && !vocab.node_attributes.empty()) {
    std::vector<int> rows;
    for (int p : node_rows) rows.push_back(p - 1);
    const auto pred = parser.node_attributes(ad::gather_rows(z_keys, rows));
    for (std::size_t i = 0; i < node_rows.size(); ++i) {
      gen.arborescence.node_attrs[arb_index[node_rows[i]]] = read_attributes(pred, i, vocab.node_attributes);
    }
  }
  if (!edge_rows.empty() && !vocab.edge_attributes.empty()) {
    std::vector<int> rows;
    for (int p : edge_rows) rows.push_back(p - 1);
    const auto pred = parser.edge_attributes(ad::gather_rows(parser.head_candidates(z_keys), edge_heads),
                                             ad::gather_rows(z_keys, rows));
    for (std::size_t i = 0; i < edge_rows.size(); ++i) {
      gen.arborescence.edge_attrs[arb_index[edge_rows[i]]] = read_attributes(pred, i, vocab.edge_attributes);
    }
  }
  if (gen.arborescence.size() > 1) {
    try {
      gen.graph = recover_dag(gen.arborescence);
    } catch (const GraphError& e) {
      gen.warnings.push_back(std::string("could not recover a semantic graph: ") + e.what());
    }
  }
  if (mode_is_concat(mode)) gen.tree = tree_from_segment(sentence, nodes);
  return gen;
}

OracleDecode oracle_decode(Parser& parser, const UDTree& sentence, const UDSGraph& gold) {
  ad::NoGradGuard guard;
  const auto& vocab = parser.vocab();
  const Mode mode = parser.config().mode;
  if (!mode_uses_decoder(mode)) throw ConfigError("oracle decoding needs a semantic decoder (mode bi has none)");
  std::vector<int> tokens, upos;
  sentence_ids(parser, sentence, tokens, upos);
  const Tensor enc = parser.encode(tokens, upos, false);
  std::optional<SyntacticParse> parse;
  if (mode == Mode::kIn) parse = parser.syntactic_biaffine(enc, false);
  const Tensor mem = parser.memory(enc, parse ? &*parse : nullptr);

  const TargetSequence target = build_target(sentence, &gold, vocab, parser.config());
  const Tensor z = parser.decode_all(mem, target.inputs, false);
  const std::size_t N = target.nodes.size();
  const Tensor z_keys = ad::slice_rows(z, 1, N + 1);

  OracleDecode out;
  out.predicted = gold;
  std::map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < out.predicted.nodes.size(); ++i) {
    out.predicted.nodes[i].attributes.clear();
    node_index[out.predicted.nodes[i].id] = i;
  }
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> edge_index;
  for (std::size_t i = 0; i < out.predicted.edges.size(); ++i) {
    auto& e = out.predicted.edges[i];
    e.attributes.clear();
    edge_index[{e.src, e.dst, e.label}] = i;
  }

  std::vector<int> node_rows, edge_rows, edge_heads;
  for (std::size_t p = 1; p <= N; ++p) {
    const auto& n = target.nodes[p - 1];
    if (n.segment != Segment::kSemantic) continue;
    ++out.positions;
    if (n.kind != NodeKind::kSemantic) continue;
    if (!n.is_copy) node_rows.push_back(static_cast<int>(p));
    if (n.head > 0) {
      edge_rows.push_back(static_cast<int>(p));
      edge_heads.push_back(n.head);
    }
  }
  if (!node_rows.empty() && !vocab.node_attributes.empty()) {
    std::vector<int> rows;
    for (int p : node_rows) rows.push_back(p - 1);
    const auto pred = parser.node_attributes(ad::gather_rows(z_keys, rows));
    for (std::size_t i = 0; i < node_rows.size(); ++i) {
      const auto& n = target.nodes[node_rows[i] - 1];
      out.predicted.nodes[node_index.at(n.node_id)].attributes = read_attributes(pred, i, vocab.node_attributes);
    }
  }
  if (!edge_rows.empty() && !vocab.edge_attributes.empty()) {
    std::vector<int> rows;
    for (int p : edge_rows) rows.push_back(p - 1);
    const auto pred = parser.edge_attributes(ad::gather_rows(parser.head_candidates(z_keys), edge_heads),
                                             ad::gather_rows(z_keys, rows));
    for (std::size_t i = 0; i < edge_rows.size(); ++i) {
      const auto& n = target.nodes[edge_rows[i] - 1];
      const auto& h = target.nodes[n.head - 1];
      auto it = edge_index.find({h.node_id, n.node_id, n.edge_label});
      if (it != edge_index.end()) {
        out.predicted.edges[it->second].attributes = read_attributes(pred, i, vocab.edge_attributes);
      }
    }
  }
  return out;
}

}  // namespace udsp
