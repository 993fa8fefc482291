#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace udsp {

// One input token. Besides the fields the parser uses, the remaining
// CoNLL-U columns are carried verbatim so treebanks round-trip.
struct Token {
  int index = 0;  // 1-based
  std::string form;
  std::string upos;
  std::string lemma = "_";
  std::string xpos = "_";
  std::string feats = "_";
  std::string deps = "_";
  std::string misc = "_";

  bool operator==(const Token&) const = default;
};

// Lexicalized dependency tree. heads[i] is the head of token i+1; 0 is ROOT.
struct UDTree {
  std::vector<Token> tokens;
  std::vector<int> heads;
  std::vector<std::string> deprels;
  std::vector<std::string> comments;  // CoNLL-U "#" lines, without the "# "

  std::size_t size() const { return tokens.size(); }
  const std::string& form(int token_index) const { return tokens.at(token_index - 1).form; }

  // Throws GraphError unless the tree satisfies every structural invariant.
  void validate() const;

  bool operator==(const UDTree&) const = default;
};

constexpr double kAttributeMin = -3.0;
constexpr double kAttributeMax = 3.0;

struct AttributeValue {
  double value = 0.0;
  bool applies = true;

  bool operator==(const AttributeValue&) const = default;
};

using AttributeMap = std::map<std::string, AttributeValue>;

struct SemanticNode {
  std::string id;
  int head_token = 0;  // instance link into the sentence, 1-based
  AttributeMap attributes;

  bool operator==(const SemanticNode&) const = default;
};

// Edges carry an optional label; files that omit it get kDefaultEdgeLabel.
inline const std::string kDefaultEdgeLabel = "sem";

struct SemanticEdge {
  std::string src;
  std::string dst;
  std::string label = kDefaultEdgeLabel;
  AttributeMap attributes;

  bool operator==(const SemanticEdge&) const = default;
};

struct UDSGraph {
  std::vector<SemanticNode> nodes;
  std::vector<SemanticEdge> edges;
  std::vector<std::string> roots;

  bool empty() const { return nodes.empty(); }
  const SemanticNode* find(const std::string& id) const;

  // Checks ids, edge endpoints, acyclicity and reachability from the roots.
  // `sentence_length` bounds the instance links when nonzero.
  void validate(std::size_t sentence_length = 0) const;
};

enum class NodeKind { kRoot, kSemantic, kSyntactic };

const char* to_string(NodeKind kind);

struct ArbNode {
  std::string label;
  std::optional<int> source_index;
  int coindex = 0;
  NodeKind kind = NodeKind::kSemantic;

  bool operator==(const ArbNode&) const = default;
};

// Syntactic attachment edges are labelled with this prefix followed by the
// token's UD relation, which keeps node kind recoverable from labels alone.
inline const std::string kSyntaxEdgePrefix = "syn:";
inline const std::string kRootEdgeLabel = "root";

// Tree-shaped view of a UDS graph. Node 0 is the virtual ROOT. The edge into
// node i is (parent[i] -> i) with label edge_label[i] and attributes
// edge_attrs[i]. Re-entrant nodes appear once per parent; copies share a
// coindex and only the first occurrence carries node attributes.
struct Arborescence {
  std::vector<ArbNode> nodes;
  std::vector<int> parent;
  std::vector<std::string> edge_label;
  std::vector<AttributeMap> node_attrs;
  std::vector<AttributeMap> edge_attrs;

  std::size_t size() const { return nodes.size(); }
  int add_node(ArbNode node, int parent_index, std::string label,
               AttributeMap node_attributes = {}, AttributeMap edge_attributes = {});
  std::vector<std::vector<int>> children() const;
  void validate() const;
};

// Pre-order linearization. Positions are 1-based: position p describes
// nodes (p-1) of each sequence, and head_positions[p-1] is the position of
// its parent, 0 for ROOT. Attribute matrices are row-major, one row per
// position, one column per attribute name.
struct LinearizedGraph {
  std::vector<std::string> node_tokens;
  std::vector<int> source_indices;  // 0 when the node has no source token
  std::vector<NodeKind> kinds;
  std::vector<int> coindices;
  std::vector<int> head_positions;
  std::vector<std::string> edge_labels;

  std::vector<std::string> node_attr_names;
  std::vector<double> node_attr_values;
  std::vector<char> node_attr_present;
  std::vector<char> node_attr_applies;

  std::vector<std::string> edge_attr_names;
  std::vector<double> edge_attr_values;
  std::vector<char> edge_attr_present;
  std::vector<char> edge_attr_applies;

  std::size_t size() const { return node_tokens.size(); }

  bool operator==(const LinearizedGraph&) const = default;
};

// When `node_ids` is given it receives, per arborescence node, the id of the
// semantic node it was made from ("" for ROOT and syntactic nodes).
Arborescence uds_to_arborescence(const UDSGraph& graph, const UDTree& tree, bool semantics_only,
                                 std::vector<std::string>* node_ids = nullptr);

// Arborescence node indices in linearization order (ROOT excluded).
std::vector<int> linearization_order(const Arborescence& arb);

LinearizedGraph linearize(const Arborescence& arb);

Arborescence delinearize(const LinearizedGraph& lin);

UDSGraph recover_dag(const Arborescence& arb);

// Exact isomorphism test: node correspondence may relabel ids, but instance
// links, attributes, edge labels, edge attributes and root sets must agree.
bool isomorphic(const UDSGraph& a, const UDSGraph& b);

// Clamps into the annotation scale; returns true when the value changed.
bool clamp_attribute(double& value);

}  // namespace udsp
