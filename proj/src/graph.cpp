#include "udsp/graph.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "udsp/error.hpp"

namespace udsp {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kRoot: return "root";
    case NodeKind::kSemantic: return "semantic";
    case NodeKind::kSyntactic: return "syntactic";
  }
  return "?";
}

bool clamp_attribute(double& value) {
  double clamped = std::clamp(value, kAttributeMin, kAttributeMax);
  bool changed = clamped != value;
  value = clamped;
  return changed;
}

void UDTree::validate() const {
  const std::size_t n = tokens.size();
  if (heads.size() != n || deprels.size() != n) {
    throw GraphError("tree has " + std::to_string(n) + " tokens but " + std::to_string(heads.size()) +
                     " heads and " + std::to_string(deprels.size()) + " relations");
  }
  int roots = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i].index != static_cast<int>(i) + 1) {
      throw GraphError("token " + std::to_string(i + 1) + " has index " + std::to_string(tokens[i].index));
    }
    if (tokens[i].form.empty()) throw GraphError("token " + std::to_string(i + 1) + " has an empty form");
    if (heads[i] < 0 || heads[i] > static_cast<int>(n)) {
      throw GraphError("token " + std::to_string(i + 1) + " has head " + std::to_string(heads[i]) +
                       " outside [0, " + std::to_string(n) + "]");
    }
    if (heads[i] == 0) ++roots;
  }
  if (n > 0 && roots != 1) {
    throw GraphError("tree has " + std::to_string(roots) + " root tokens, expected exactly one");
  }
  // Every token must reach ROOT within n steps.
  for (std::size_t i = 0; i < n; ++i) {
    int cur = static_cast<int>(i) + 1;
    std::size_t steps = 0;
    while (cur != 0) {
      cur = heads[cur - 1];
      if (++steps > n) throw GraphError("head function has a cycle through token " + std::to_string(i + 1));
    }
  }
}

const SemanticNode* UDSGraph::find(const std::string& id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

void UDSGraph::validate(std::size_t sentence_length) const {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.id.empty()) throw GraphError("semantic node " + std::to_string(i) + " has an empty id");
    if (!index.emplace(n.id, i).second) throw GraphError("duplicate semantic node id '" + n.id + "'");
    if (n.head_token < 1 || (sentence_length > 0 && n.head_token > static_cast<int>(sentence_length))) {
      throw GraphError("semantic node '" + n.id + "' has dangling instance link to token " +
                       std::to_string(n.head_token));
    }
  }
  if (nodes.empty()) {
    if (!edges.empty() || !roots.empty()) throw GraphError("graph without nodes has edges or roots");
    return;
  }
  if (roots.empty()) throw GraphError("graph has no root");
  std::vector<std::vector<std::size_t>> out(nodes.size());
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : edges) {
    auto s = index.find(e.src);
    auto d = index.find(e.dst);
    if (s == index.end()) throw GraphError("edge source '" + e.src + "' is not a node");
    if (d == index.end()) throw GraphError("edge target '" + e.dst + "' is not a node");
    if (s->second == d->second) throw GraphError("self-loop on node '" + e.src + "'");
    if (!seen.emplace(s->second, d->second).second) {
      throw GraphError("duplicate edge '" + e.src + "' -> '" + e.dst + "'");
    }
    out[s->second].push_back(d->second);
  }
  std::vector<bool> reached(nodes.size(), false);
  for (const auto& r : roots) {
    auto it = index.find(r);
    if (it == index.end()) throw GraphError("root '" + r + "' is not a node");
    reached[it->second] = true;
  }
  // Colour DFS for cycles, reporting the back edge.
  std::vector<int> colour(nodes.size(), 0);
  std::function<void(std::size_t)> visit = [&](std::size_t u) {
    colour[u] = 1;
    for (std::size_t v : out[u]) {
      if (colour[v] == 1) {
        throw GraphError("cycle detected at edge '" + nodes[u].id + "' -> '" + nodes[v].id + "'");
      }
      if (colour[v] == 0) visit(v);
    }
    colour[u] = 2;
  };
  for (std::size_t u = 0; u < nodes.size(); ++u) {
    if (colour[u] == 0) visit(u);
  }
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (reached[i]) stack.push_back(i);
  }
  while (!stack.empty()) {
    std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v : out[u]) {
      if (!reached[v]) {
        reached[v] = true;
        stack.push_back(v);
      }
    }
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!reached[i]) throw GraphError("node '" + nodes[i].id + "' is not reachable from any root");
  }
}

int Arborescence::add_node(ArbNode node, int parent_index, std::string label, AttributeMap node_attributes,
                           AttributeMap edge_attributes) {
  nodes.push_back(std::move(node));
  parent.push_back(parent_index);
  edge_label.push_back(std::move(label));
  node_attrs.push_back(std::move(node_attributes));
  edge_attrs.push_back(std::move(edge_attributes));
  return static_cast<int>(nodes.size()) - 1;
}

std::vector<std::vector<int>> Arborescence::children() const {
  std::vector<std::vector<int>> kids(nodes.size());
  for (std::size_t i = 1; i < nodes.size(); ++i) kids[parent[i]].push_back(static_cast<int>(i));
  return kids;
}

void Arborescence::validate() const {
  const std::size_t n = nodes.size();
  if (n == 0 || nodes[0].kind != NodeKind::kRoot || parent.size() != n || edge_label.size() != n ||
      node_attrs.size() != n || edge_attrs.size() != n) {
    throw GraphError("arborescence must start with a ROOT node and have aligned fields");
  }
  std::map<int, const ArbNode*> by_coindex;
  for (std::size_t i = 1; i < n; ++i) {
    if (nodes[i].kind == NodeKind::kRoot) throw GraphError("arborescence has a second ROOT at " + std::to_string(i));
    if (parent[i] < 0 || parent[i] >= static_cast<int>(n) || parent[i] == static_cast<int>(i)) {
      throw GraphError("arborescence node " + std::to_string(i) + " has invalid parent");
    }
    if (nodes[i].kind == NodeKind::kSyntactic && nodes[parent[i]].kind != NodeKind::kSemantic) {
      throw GraphError("syntactic node " + std::to_string(i) + " must hang under a semantic node");
    }
    auto [it, fresh] = by_coindex.emplace(nodes[i].coindex, &nodes[i]);
    if (!fresh) {
      if (it->second->label != nodes[i].label || it->second->kind != NodeKind::kSemantic ||
          nodes[i].kind != NodeKind::kSemantic) {
        throw GraphError("coindex " + std::to_string(nodes[i].coindex) + " is shared by incompatible nodes");
      }
    }
  }
  for (std::size_t i = 1; i < n; ++i) {
    int cur = static_cast<int>(i);
    std::size_t steps = 0;
    while (cur != 0) {
      cur = parent[cur];
      if (++steps > n) throw GraphError("arborescence parent map has a cycle");
    }
  }
}

namespace {

struct OutEdge {
  std::size_t dst;
  const SemanticEdge* edge;  // null for the virtual ROOT edges
};

}  // namespace

Arborescence uds_to_arborescence(const UDSGraph& graph, const UDTree& tree, bool semantics_only,
                                 std::vector<std::string>* node_ids) {
  tree.validate();
  graph.validate(tree.size());
  if (graph.empty()) throw GraphError("cannot convert an empty semantic graph");

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) index.emplace(graph.nodes[i].id, i);

  // Slot n is the virtual ROOT.
  const std::size_t n = graph.nodes.size();
  std::vector<std::vector<OutEdge>> out(n + 1);
  for (const auto& r : graph.roots) out[n].push_back({index.at(r), nullptr});
  for (const auto& e : graph.edges) out[index.at(e.src)].push_back({index.at(e.dst), &e});

  auto label_of = [](const OutEdge& e) -> const std::string& {
    return e.edge ? e.edge->label : kRootEdgeLabel;
  };
  for (auto& kids : out) {
    std::sort(kids.begin(), kids.end(), [&](const OutEdge& a, const OutEdge& b) {
      const auto& na = graph.nodes[a.dst];
      const auto& nb = graph.nodes[b.dst];
      return std::tie(na.head_token, label_of(a), na.id) < std::tie(nb.head_token, label_of(b), nb.id);
    });
  }

  Arborescence arb;
  arb.add_node(ArbNode{"<root>", std::nullopt, 0, NodeKind::kRoot}, -1, "");
  std::vector<int> placed(n, -1);  // arborescence index of each DAG node's original
  int next_coindex = 1;
  std::vector<std::string> ids{""};

  std::function<void(std::size_t, int)> expand = [&](std::size_t dag_node, int arb_index) {
    for (const auto& e : out[dag_node]) {
      const auto& child = graph.nodes[e.dst];
      AttributeMap edge_attributes = e.edge ? e.edge->attributes : AttributeMap{};
      if (placed[e.dst] >= 0) {
        ArbNode copy = arb.nodes[placed[e.dst]];
        arb.add_node(copy, arb_index, label_of(e), {}, std::move(edge_attributes));
        ids.push_back(child.id);
        continue;
      }
      int idx = arb.add_node(ArbNode{tree.form(child.head_token), child.head_token, next_coindex++,
                                     NodeKind::kSemantic},
                             arb_index, label_of(e), child.attributes, std::move(edge_attributes));
      placed[e.dst] = idx;
      ids.push_back(child.id);
      expand(e.dst, idx);
    }
  };
  expand(n, 0);

  if (!semantics_only) {
    // Owner of a labelled token: the earliest-placed semantic node it heads.
    std::map<int, int> owner;
    for (std::size_t i = 1; i < arb.size(); ++i) {
      const auto& node = arb.nodes[i];
      if (node.kind == NodeKind::kSemantic && node.source_index) owner.emplace(*node.source_index, static_cast<int>(i));
    }
    const int fallback = arb.children()[0].front();
    std::vector<std::pair<int, int>> attachments;  // (token, owner index)
    for (int t = 1; t <= static_cast<int>(tree.size()); ++t) {
      if (owner.count(t)) continue;
      int cur = tree.heads[t - 1];
      while (cur != 0 && !owner.count(cur)) cur = tree.heads[cur - 1];
      attachments.emplace_back(t, cur == 0 ? fallback : owner.at(cur));
    }
    for (auto [t, own] : attachments) {
      arb.add_node(ArbNode{tree.form(t), t, next_coindex++, NodeKind::kSyntactic}, own,
                   kSyntaxEdgePrefix + tree.deprels[t - 1]);
      ids.emplace_back();
    }
  }
  if (node_ids) *node_ids = std::move(ids);
  return arb;
}

namespace {

std::vector<int> preorder(const Arborescence& arb) {
  auto kids = arb.children();
  for (auto& k : kids) {
    std::sort(k.begin(), k.end(), [&](int a, int b) {
      const auto& na = arb.nodes[a];
      const auto& nb = arb.nodes[b];
      return std::make_tuple(na.source_index.value_or(0), std::cref(arb.edge_label[a]), na.coindex) <
             std::make_tuple(nb.source_index.value_or(0), std::cref(arb.edge_label[b]), nb.coindex);
    });
  }
  std::vector<int> order;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    if (u != 0) order.push_back(u);
    for (auto it = kids[u].rbegin(); it != kids[u].rend(); ++it) stack.push_back(*it);
  }
  return order;
}

}  // namespace

std::vector<int> linearization_order(const Arborescence& arb) { return preorder(arb); }

namespace {

std::vector<std::string> attribute_names(const std::vector<AttributeMap>& maps) {
  std::set<std::string> names;
  for (const auto& m : maps) {
    for (const auto& [k, v] : m) names.insert(k);
  }
  return {names.begin(), names.end()};
}

void fill_row(const AttributeMap& attrs, const std::vector<std::string>& names, std::vector<double>& values,
              std::vector<char>& present, std::vector<char>& applies) {
  for (const auto& name : names) {
    auto it = attrs.find(name);
    if (it == attrs.end()) {
      values.push_back(0.0);
      present.push_back(0);
      applies.push_back(0);
    } else {
      values.push_back(it->second.value);
      present.push_back(1);
      applies.push_back(it->second.applies ? 1 : 0);
    }
  }
}

AttributeMap read_row(std::size_t row, const std::vector<std::string>& names, const std::vector<double>& values,
                      const std::vector<char>& present, const std::vector<char>& applies) {
  AttributeMap attrs;
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::size_t k = row * names.size() + c;
    if (present[k]) attrs.emplace(names[c], AttributeValue{values[k], applies[k] != 0});
  }
  return attrs;
}

}  // namespace

LinearizedGraph linearize(const Arborescence& arb) {
  arb.validate();
  const auto order = preorder(arb);
  std::vector<int> position(arb.size(), 0);
  for (std::size_t p = 0; p < order.size(); ++p) position[order[p]] = static_cast<int>(p) + 1;

  LinearizedGraph lin;
  lin.node_attr_names = attribute_names(arb.node_attrs);
  lin.edge_attr_names = attribute_names(arb.edge_attrs);
  for (int u : order) {
    const auto& node = arb.nodes[u];
    lin.node_tokens.push_back(node.label);
    lin.source_indices.push_back(node.source_index.value_or(0));
    lin.kinds.push_back(node.kind);
    lin.coindices.push_back(node.coindex);
    lin.head_positions.push_back(position[arb.parent[u]]);
    lin.edge_labels.push_back(arb.edge_label[u]);
    fill_row(arb.node_attrs[u], lin.node_attr_names, lin.node_attr_values, lin.node_attr_present,
             lin.node_attr_applies);
    fill_row(arb.edge_attrs[u], lin.edge_attr_names, lin.edge_attr_values, lin.edge_attr_present,
             lin.edge_attr_applies);
  }
  return lin;
}

Arborescence delinearize(const LinearizedGraph& lin) {
  const std::size_t n = lin.size();
  const std::size_t na = lin.node_attr_names.size();
  const std::size_t ne = lin.edge_attr_names.size();
  if (lin.source_indices.size() != n || lin.kinds.size() != n || lin.coindices.size() != n ||
      lin.head_positions.size() != n || lin.edge_labels.size() != n || lin.node_attr_values.size() != n * na ||
      lin.node_attr_present.size() != n * na || lin.node_attr_applies.size() != n * na ||
      lin.edge_attr_values.size() != n * ne || lin.edge_attr_present.size() != n * ne ||
      lin.edge_attr_applies.size() != n * ne) {
    throw GraphError("linearized graph has misaligned sequences");
  }
  Arborescence arb;
  arb.add_node(ArbNode{"<root>", std::nullopt, 0, NodeKind::kRoot}, -1, "");
  for (std::size_t i = 0; i < n; ++i) {
    int head = lin.head_positions[i];
    if (head < 0 || head > static_cast<int>(i)) {
      throw GraphError("malformed sequence at position " + std::to_string(i) + ": head " + std::to_string(head) +
                       " does not precede the node");
    }
    if (lin.kinds[i] == NodeKind::kRoot) {
      throw GraphError("malformed sequence at position " + std::to_string(i) + ": ROOT inside sequence");
    }
    std::optional<int> source;
    if (lin.source_indices[i] > 0) source = lin.source_indices[i];
    arb.add_node(ArbNode{lin.node_tokens[i], source, lin.coindices[i], lin.kinds[i]}, head, lin.edge_labels[i],
                 read_row(i, lin.node_attr_names, lin.node_attr_values, lin.node_attr_present,
                          lin.node_attr_applies),
                 read_row(i, lin.edge_attr_names, lin.edge_attr_values, lin.edge_attr_present,
                          lin.edge_attr_applies));
  }
  arb.validate();
  return arb;
}

UDSGraph recover_dag(const Arborescence& arb) {
  if (arb.size() == 0 || arb.nodes[0].kind != NodeKind::kRoot) {
    throw GraphError("arborescence must start with a ROOT node");
  }
  std::map<int, std::size_t> slot;  // coindex -> graph node index
  std::vector<int> first_of;        // graph node index -> first arborescence index
  UDSGraph g;
  for (std::size_t i = 1; i < arb.size(); ++i) {
    const auto& node = arb.nodes[i];
    if (node.kind != NodeKind::kSemantic) continue;
    auto it = slot.find(node.coindex);
    if (it == slot.end()) {
      if (!node.source_index) {
        throw GraphError("semantic node at " + std::to_string(i) + " has no source token");
      }
      slot.emplace(node.coindex, g.nodes.size());
      first_of.push_back(static_cast<int>(i));
      g.nodes.push_back(SemanticNode{"n" + std::to_string(node.coindex), *node.source_index, arb.node_attrs[i]});
    } else {
      const auto& first = arb.nodes[first_of[it->second]];
      if (first.label != node.label || first.source_index != node.source_index) {
        throw GraphError("coindex " + std::to_string(node.coindex) + " has conflicting labels '" + first.label +
                         "' and '" + node.label + "'");
      }
      for (const auto& [k, v] : arb.node_attrs[i]) g.nodes[it->second].attributes.emplace(k, v);
    }
  }
  std::set<std::pair<std::string, std::string>> seen;
  std::set<std::string> root_set;
  for (std::size_t i = 1; i < arb.size(); ++i) {
    const auto& node = arb.nodes[i];
    if (node.kind != NodeKind::kSemantic) continue;
    const std::string& dst = g.nodes[slot.at(node.coindex)].id;
    const auto& par = arb.nodes[arb.parent[i]];
    if (par.kind == NodeKind::kRoot) {
      if (root_set.insert(dst).second) g.roots.push_back(dst);
      continue;
    }
    if (par.kind != NodeKind::kSemantic) {
      throw GraphError("semantic node at " + std::to_string(i) + " hangs under a syntactic node");
    }
    const std::string& src = g.nodes[slot.at(par.coindex)].id;
    if (src == dst) throw GraphError("coindex " + std::to_string(node.coindex) + " is its own parent");
    if (!seen.emplace(src, dst).second) continue;
    g.edges.push_back(SemanticEdge{src, dst, arb.edge_label[i], arb.edge_attrs[i]});
  }
  g.validate();
  return g;
}

namespace {

struct EdgeKey {
  std::string label;
  AttributeMap attrs;
  bool operator<(const EdgeKey& o) const {
    if (label != o.label) return label < o.label;
    return std::lexicographical_compare(attrs.begin(), attrs.end(), o.attrs.begin(), o.attrs.end(),
                                        [](const auto& x, const auto& y) {
                                          return std::tie(x.first, x.second.value, x.second.applies) <
                                                 std::tie(y.first, y.second.value, y.second.applies);
                                        });
  }
  bool operator==(const EdgeKey& o) const { return label == o.label && attrs == o.attrs; }
};

struct Signature {
  int head_token;
  bool root;
  AttributeMap attrs;
  std::vector<EdgeKey> in;
  std::vector<EdgeKey> out;
  bool operator==(const Signature&) const = default;
};

std::vector<Signature> signatures(const UDSGraph& g, const std::unordered_map<std::string, std::size_t>& index) {
  std::vector<Signature> sig(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    sig[i].head_token = g.nodes[i].head_token;
    sig[i].attrs = g.nodes[i].attributes;
    sig[i].root = std::find(g.roots.begin(), g.roots.end(), g.nodes[i].id) != g.roots.end();
  }
  for (const auto& e : g.edges) {
    sig[index.at(e.src)].out.push_back({e.label, e.attributes});
    sig[index.at(e.dst)].in.push_back({e.label, e.attributes});
  }
  for (auto& s : sig) {
    std::sort(s.in.begin(), s.in.end());
    std::sort(s.out.begin(), s.out.end());
  }
  return sig;
}

}  // namespace

bool isomorphic(const UDSGraph& a, const UDSGraph& b) {
  if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size() || a.roots.size() != b.roots.size()) {
    return false;
  }
  std::unordered_map<std::string, std::size_t> ia, ib;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) ia.emplace(a.nodes[i].id, i);
  for (std::size_t i = 0; i < b.nodes.size(); ++i) ib.emplace(b.nodes[i].id, i);
  const auto sa = signatures(a, ia);
  const auto sb = signatures(b, ib);

  const std::size_t n = a.nodes.size();
  std::vector<std::vector<std::size_t>> candidates(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (sa[i] == sb[j]) candidates[i].push_back(j);
    }
    if (candidates[i].empty()) return false;
  }
  std::map<std::pair<std::size_t, std::size_t>, EdgeKey> eb;
  for (const auto& e : b.edges) eb.emplace(std::make_pair(ib.at(e.src), ib.at(e.dst)), EdgeKey{e.label, e.attributes});
  std::vector<std::tuple<std::size_t, std::size_t, EdgeKey>> ea;
  for (const auto& e : a.edges) ea.emplace_back(ia.at(e.src), ia.at(e.dst), EdgeKey{e.label, e.attributes});

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return candidates[x].size() < candidates[y].size(); });

  std::vector<long> map(n, -1);
  std::vector<bool> used(n, false);
  auto consistent = [&](std::size_t u) {
    for (const auto& [s, d, key] : ea) {
      if (s != u && d != u) continue;
      if (map[s] < 0 || map[d] < 0) continue;
      auto it = eb.find({static_cast<std::size_t>(map[s]), static_cast<std::size_t>(map[d])});
      if (it == eb.end() || !(it->second == key)) return false;
    }
    return true;
  };
  std::function<bool(std::size_t)> search = [&](std::size_t k) {
    if (k == n) return true;
    std::size_t u = order[k];
    for (std::size_t v : candidates[u]) {
      if (used[v]) continue;
      map[u] = static_cast<long>(v);
      used[v] = true;
      if (consistent(u) && search(k + 1)) return true;
      used[v] = false;
      map[u] = -1;
    }
    return false;
  };
  return search(0);
}

}  // namespace udsp
