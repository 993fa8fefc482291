#include "udsp/io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "udsp/error.hpp"

namespace udsp {

using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    long v = std::stol(s, &pos);
    if (pos != s.size()) return false;
    out = static_cast<int>(v);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", 0);
  return in;
}

}  // namespace

std::string read_file(const std::string& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// CoNLL-U
// ---------------------------------------------------------------------------

std::vector<UDTree> read_conllu(std::istream& in) {
  std::vector<UDTree> trees;
  UDTree cur;
  std::size_t block_start = 0;
  bool open = false;
  std::size_t lineno = 0;
  std::string line;

  auto flush = [&]() {
    if (!open) return;
    if (!cur.tokens.empty()) {
      try {
        cur.validate();
      } catch (const GraphError& e) {
        throw ParseError(std::string("validation error in sentence: ") + e.what(), block_start);
      }
      trees.push_back(std::move(cur));
    }
    cur = UDTree{};
    open = false;
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (!open) {
      open = true;
      block_start = lineno;
    }
    if (line[0] == '#') {
      cur.comments.push_back(line.substr(1));
      continue;
    }
    auto cols = split(line, '\t');
    if (cols.size() != 10) {
      throw ParseError("expected 10 tab-separated columns, found " + std::to_string(cols.size()), lineno);
    }
    if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos) continue;
    int id = 0;
    if (!parse_int(cols[0], id)) throw ParseError("non-integer token id '" + cols[0] + "'", lineno);
    if (id != static_cast<int>(cur.tokens.size()) + 1) {
      throw ParseError("token id " + cols[0] + " out of sequence", lineno);
    }
    int head = 0;
    if (!parse_int(cols[6], head)) throw ParseError("non-integer head field '" + cols[6] + "'", lineno);
    Token tok;
    tok.index = id;
    tok.form = cols[1];
    tok.lemma = cols[2];
    tok.upos = cols[3];
    tok.xpos = cols[4];
    tok.feats = cols[5];
    tok.deps = cols[8];
    tok.misc = cols[9];
    cur.tokens.push_back(std::move(tok));
    cur.heads.push_back(head);
    cur.deprels.push_back(cols[7]);
  }
  flush();
  return trees;
}

std::vector<UDTree> read_conllu_file(const std::string& path) {
  auto in = open_input(path);
  return read_conllu(in);
}

void write_conllu(std::ostream& out, const std::vector<UDTree>& trees) {
  for (const auto& t : trees) {
    for (const auto& c : t.comments) out << '#' << c << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto& tok = t.tokens[i];
      out << tok.index << '\t' << tok.form << '\t' << tok.lemma << '\t' << tok.upos << '\t' << tok.xpos << '\t'
          << tok.feats << '\t' << t.heads[i] << '\t' << t.deprels[i] << '\t' << tok.deps << '\t' << tok.misc
          << '\n';
    }
    out << '\n';
  }
}

void write_conllu_file(const std::string& path, const std::vector<UDTree>& trees) {
  std::ostringstream ss;
  write_conllu(ss, trees);
  write_file_atomic(path, ss.str());
}

// ---------------------------------------------------------------------------
// UDS JSON-lines
// ---------------------------------------------------------------------------

bool Corpus::has_semantics() const {
  return std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.graph.has_value(); });
}

namespace {

// Field access that reports the JSON path on failure.
class Reader {
 public:
  Reader(std::size_t line, std::vector<std::string>& warnings) : line_(line), warnings_(warnings) {}

  const json& field(const json& obj, const std::string& key, const std::string& path) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing field");
    return *it;
  }
  std::string string(const json& v, const std::string& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }
  int integer(const json& v, const std::string& path) const {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<int>();
  }
  double number(const json& v, const std::string& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }
  const json& array(const json& v, const std::string& path) const {
    if (!v.is_array()) fail(path, "expected an array");
    return v;
  }

  AttributeMap attributes(const json& obj, const std::string& path) const {
    AttributeMap attrs;
    auto it = obj.find("attributes");
    if (it == obj.end()) return attrs;
    if (!it->is_object()) fail(path + ".attributes", "expected an object");
    for (const auto& [name, spec] : it->items()) {
      std::string p = path + ".attributes." + name;
      AttributeValue v;
      v.value = number(field(spec, "value", p), p + ".value");
      auto ap = spec.find("applies");
      if (ap != spec.end()) {
        if (!ap->is_boolean()) fail(p + ".applies", "expected a boolean");
        v.applies = ap->get<bool>();
      }
      double before = v.value;
      if (clamp_attribute(v.value)) {
        std::ostringstream w;
        w << "line " << line_ << ": " << p << " value " << before << " clamped to " << v.value;
        warnings_.push_back(w.str());
      }
      attrs.emplace(name, v);
    }
    return attrs;
  }

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    throw ParseError(path + ": " + msg, line_);
  }

 private:
  std::size_t line_;
  std::vector<std::string>& warnings_;
};

CorpusEntry parse_entry(const json& j, const Reader& r) {
  CorpusEntry e;
  e.id = r.string(r.field(j, "id", "$"), "$.id");
  const auto& toks = r.array(r.field(j, "tokens", "$"), "$.tokens");
  for (std::size_t i = 0; i < toks.size(); ++i) {
    std::string p = "$.tokens[" + std::to_string(i) + "]";
    Token t;
    t.index = static_cast<int>(i) + 1;
    t.form = r.string(r.field(toks[i], "form", p), p + ".form");
    auto up = toks[i].find("upos");
    t.upos = up == toks[i].end() ? "_" : r.string(*up, p + ".upos");
    e.tree.tokens.push_back(std::move(t));
  }
  const auto& ud = r.field(j, "ud", "$");
  const auto& heads = r.array(r.field(ud, "heads", "$.ud"), "$.ud.heads");
  const auto& rels = r.array(r.field(ud, "deprels", "$.ud"), "$.ud.deprels");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    e.tree.heads.push_back(r.integer(heads[i], "$.ud.heads[" + std::to_string(i) + "]"));
  }
  for (std::size_t i = 0; i < rels.size(); ++i) {
    e.tree.deprels.push_back(r.string(rels[i], "$.ud.deprels[" + std::to_string(i) + "]"));
  }
  try {
    e.tree.validate();
  } catch (const GraphError& err) {
    r.fail("$.ud", err.what());
  }

  auto nodes_it = j.find("nodes");
  if (nodes_it == j.end() || (nodes_it->is_array() && nodes_it->empty())) return e;
  const auto& nodes = r.array(*nodes_it, "$.nodes");
  UDSGraph g;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::string p = "$.nodes[" + std::to_string(i) + "]";
    SemanticNode n;
    n.id = r.string(r.field(nodes[i], "id", p), p + ".id");
    n.head_token = r.integer(r.field(nodes[i], "head_token", p), p + ".head_token");
    n.attributes = r.attributes(nodes[i], p);
    g.nodes.push_back(std::move(n));
  }
  auto edges_it = j.find("edges");
  if (edges_it != j.end()) {
    const auto& edges = r.array(*edges_it, "$.edges");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      std::string p = "$.edges[" + std::to_string(i) + "]";
      SemanticEdge se;
      se.src = r.string(r.field(edges[i], "src", p), p + ".src");
      se.dst = r.string(r.field(edges[i], "dst", p), p + ".dst");
      auto lab = edges[i].find("label");
      if (lab != edges[i].end()) se.label = r.string(*lab, p + ".label");
      se.attributes = r.attributes(edges[i], p);
      g.edges.push_back(std::move(se));
    }
  }
  const auto& roots = r.array(r.field(j, "roots", "$"), "$.roots");
  for (std::size_t i = 0; i < roots.size(); ++i) g.roots.push_back(r.string(roots[i], "$.roots[" + std::to_string(i) + "]"));
  try {
    g.validate(e.tree.size());
  } catch (const GraphError& err) {
    r.fail("$.nodes", err.what());
  }
  e.graph = std::move(g);
  return e;
}

json attributes_json(const AttributeMap& attrs) {
  json out = json::object();
  for (const auto& [k, v] : attrs) out[k] = {{"value", v.value}, {"applies", v.applies}};
  return out;
}

}  // namespace

Corpus read_uds_jsonl(std::istream& in) {
  Corpus corpus;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    Reader r(lineno, corpus.warnings);
    auto entry = parse_entry(j, r);
    if (!ids.insert(entry.id).second) throw ParseError("$.id: duplicate sentence id '" + entry.id + "'", lineno);
    corpus.entries.push_back(std::move(entry));
  }
  return corpus;
}

Corpus read_uds_jsonl_file(const std::string& path) {
  auto in = open_input(path);
  return read_uds_jsonl(in);
}

void write_uds_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto& e : corpus.entries) {
    json j;
    j["id"] = e.id;
    j["tokens"] = json::array();
    for (const auto& t : e.tree.tokens) j["tokens"].push_back({{"form", t.form}, {"upos", t.upos}});
    j["ud"] = {{"heads", e.tree.heads}, {"deprels", e.tree.deprels}};
    j["nodes"] = json::array();
    j["edges"] = json::array();
    j["roots"] = json::array();
    if (e.graph) {
      for (const auto& n : e.graph->nodes) {
        j["nodes"].push_back({{"id", n.id}, {"head_token", n.head_token}, {"attributes", attributes_json(n.attributes)}});
      }
      for (const auto& ed : e.graph->edges) {
        j["edges"].push_back({{"src", ed.src},
                              {"dst", ed.dst},
                              {"label", ed.label},
                              {"attributes", attributes_json(ed.attributes)}});
      }
      j["roots"] = e.graph->roots;
    }
    out << j.dump() << '\n';
  }
}

void write_uds_jsonl_file(const std::string& path, const Corpus& corpus) {
  std::ostringstream ss;
  write_uds_jsonl(ss, corpus);
  write_file_atomic(path, ss.str());
}

Corpus read_corpus_file(const std::string& path) {
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".conllu" || ext == ".conll") {
    Corpus c;
    auto trees = read_conllu_file(path);
    for (std::size_t i = 0; i < trees.size(); ++i) {
      c.entries.push_back(CorpusEntry{"s" + std::to_string(i + 1), std::move(trees[i]), std::nullopt});
    }
    return c;
  }
  return read_uds_jsonl_file(path);
}

// ---------------------------------------------------------------------------
// PP-attachment pairs
// ---------------------------------------------------------------------------

const char* to_string(PPDirection d) {
  return d == PPDirection::kNounToVerb ? "noun_to_verb" : "verb_to_noun";
}

std::vector<PPPair> read_pp_pairs(std::istream& in) {
  std::vector<PPPair> pairs;
  std::vector<std::string> warnings;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    Reader r(lineno, warnings);
    auto block = [&](const char* key) {
      std::string text = r.string(r.field(j, key, "$"), std::string("$.") + key);
      std::istringstream ss(text);
      std::vector<UDTree> trees;
      try {
        trees = read_conllu(ss);
      } catch (const ParseError& e) {
        r.fail(std::string("$.") + key, e.what());
      }
      if (trees.size() != 1) r.fail(std::string("$.") + key, "expected exactly one CoNLL-U sentence");
      return trees.front();
    };
    PPPair p;
    p.original = block("original");
    p.altered = block("altered");
    std::string dir = r.string(r.field(j, "direction", "$"), "$.direction");
    if (dir == "noun_to_verb") {
      p.direction = PPDirection::kNounToVerb;
    } else if (dir == "verb_to_noun") {
      p.direction = PPDirection::kVerbToNoun;
    } else {
      r.fail("$.direction", "unknown direction tag '" + dir + "'");
    }
    p.pp_token = r.integer(r.field(j, "pp_token", "$"), "$.pp_token");
    if (p.pp_token < 1 || p.pp_token > static_cast<int>(p.original.size()) ||
        p.pp_token > static_cast<int>(p.altered.size())) {
      r.fail("$.pp_token", "token " + std::to_string(p.pp_token) + " out of bounds");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<PPPair> read_pp_pairs_file(const std::string& path) {
  auto in = open_input(path);
  return read_pp_pairs(in);
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

SymbolTable::SymbolTable() {
  for (const char* s : {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>", "<root>"}) add(s);
}

void SymbolTable::add(const std::string& symbol) {
  if (ids_.count(symbol)) return;
  ids_.emplace(symbol, static_cast<int>(symbols_.size()));
  symbols_.push_back(symbol);
}

int SymbolTable::id(const std::string& symbol) const {
  auto it = ids_.find(symbol);
  return it == ids_.end() ? kUnk : it->second;
}

SymbolTable SymbolTable::from_counts(const std::map<std::string, std::size_t>& counts, std::size_t min_count) {
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  SymbolTable t;
  for (const auto& [s, c] : items) {
    if (c >= min_count) t.add(s);
  }
  return t;
}

std::string Vocabulary::fingerprint() const {
  // 64-bit FNV-1a over a length-prefixed rendering of every table.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    std::string rec = std::to_string(s.size()) + ":" + s;
    for (unsigned char c : rec) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto* table : {&tokens, &upos, &relations, &edge_labels}) {
    mix("|table");
    for (const auto& s : table->symbols()) mix(s);
  }
  mix("|node_attributes");
  for (const auto& s : node_attributes) mix(s);
  mix("|edge_attributes");
  for (const auto& s : edge_attributes) mix(s);
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

nlohmann::json vocab_to_json(const Vocabulary& vocab) {
  return {{"tokens", vocab.tokens.symbols()},         {"upos", vocab.upos.symbols()},
          {"relations", vocab.relations.symbols()},   {"edge_labels", vocab.edge_labels.symbols()},
          {"node_attributes", vocab.node_attributes}, {"edge_attributes", vocab.edge_attributes}};
}

Vocabulary vocab_from_json(const nlohmann::json& j) {
  auto table = [&](const char* key) {
    SymbolTable t;
    for (const auto& s : j.at(key)) t.add(s.get<std::string>());
    return t;
  };
  Vocabulary v;
  v.tokens = table("tokens");
  v.upos = table("upos");
  v.relations = table("relations");
  v.edge_labels = table("edge_labels");
  v.node_attributes = j.at("node_attributes").get<std::vector<std::string>>();
  v.edge_attributes = j.at("edge_attributes").get<std::vector<std::string>>();
  return v;
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> tok, pos, rel, edge;
  std::set<std::string> node_attrs, edge_attrs;
  for (const auto& e : corpus.entries) {
    for (std::size_t i = 0; i < e.tree.size(); ++i) {
      ++tok[e.tree.tokens[i].form];
      ++pos[e.tree.tokens[i].upos];
      ++rel[e.tree.deprels[i]];
      ++edge[kSyntaxEdgePrefix + e.tree.deprels[i]];
    }
    if (!e.graph) continue;
    for (const auto& n : e.graph->nodes) {
      for (const auto& [k, v] : n.attributes) node_attrs.insert(k);
    }
    for (const auto& ed : e.graph->edges) {
      for (const auto& [k, v] : ed.attributes) edge_attrs.insert(k);
    }
    auto arb = uds_to_arborescence(*e.graph, e.tree, false);
    for (std::size_t i = 1; i < arb.size(); ++i) ++edge[arb.edge_label[i]];
  }
  Vocabulary v;
  v.tokens = SymbolTable::from_counts(tok, std::max<std::size_t>(min_count, 1));
  v.upos = SymbolTable::from_counts(pos, 1);
  v.relations = SymbolTable::from_counts(rel, 1);
  v.edge_labels = SymbolTable::from_counts(edge, 1);
  v.node_attributes.assign(node_attrs.begin(), node_attrs.end());
  v.edge_attributes.assign(edge_attrs.begin(), edge_attrs.end());
  return v;
}

}  // namespace udsp
