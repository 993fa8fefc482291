#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "udsp/graph.hpp"

namespace udsp {

// ---------------------------------------------------------------------------
// CoNLL-U
// ---------------------------------------------------------------------------

// Reads every sentence block. Multiword-token ranges ("1-2") and empty nodes
// ("1.1") are skipped; comment lines are kept in UDTree::comments.
std::vector<UDTree> read_conllu(std::istream& in);
std::vector<UDTree> read_conllu_file(const std::string& path);

void write_conllu(std::ostream& out, const std::vector<UDTree>& trees);
void write_conllu_file(const std::string& path, const std::vector<UDTree>& trees);

// ---------------------------------------------------------------------------
// UDS JSON-lines
// ---------------------------------------------------------------------------

struct CorpusEntry {
  std::string id;
  UDTree tree;
  std::optional<UDSGraph> graph;  // absent for UD-only sentences
};

struct Corpus {
  std::vector<CorpusEntry> entries;
  std::vector<std::string> warnings;

  std::size_t size() const { return entries.size(); }
  bool has_semantics() const;
};

// One JSON object per line:
//   {"id", "tokens":[{"form","upos"}...], "ud":{"heads":[...],"deprels":[...]},
//    "nodes":[{"id","head_token","attributes":{name:{"value":r,"applies":b}}}],
//    "edges":[{"src","dst","label"?,"attributes":{...}}], "roots":[...]}
// A line without "nodes" (or with an empty list) is a UD-only sentence.
Corpus read_uds_jsonl(std::istream& in);
Corpus read_uds_jsonl_file(const std::string& path);

void write_uds_jsonl(std::ostream& out, const Corpus& corpus);
void write_uds_jsonl_file(const std::string& path, const Corpus& corpus);

// Loads a training corpus by extension: ".conllu" gives UD-only entries,
// anything else is parsed as UDS JSON-lines.
Corpus read_corpus_file(const std::string& path);

// ---------------------------------------------------------------------------
// PP-attachment pairs
// ---------------------------------------------------------------------------

enum class PPDirection { kNounToVerb, kVerbToNoun };

const char* to_string(PPDirection d);

struct PPPair {
  UDTree original;
  UDTree altered;
  PPDirection direction = PPDirection::kNounToVerb;
  int pp_token = 0;
};

// JSON-lines: {"original": "<CoNLL-U block>", "altered": "<CoNLL-U block>",
//              "direction": "noun_to_verb" | "verb_to_noun", "pp_token": k}
std::vector<PPPair> read_pp_pairs(std::istream& in);
std::vector<PPPair> read_pp_pairs_file(const std::string& path);

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

// Dense symbol ids. The first kNumSpecials ids are reserved in every table.
class SymbolTable {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr int kRoot = 5;
  static constexpr int kNumSpecials = 6;

  SymbolTable();

  // Adds symbols in the given order; already-present symbols are ignored.
  void add(const std::string& symbol);
  int id(const std::string& symbol) const;  // kUnk when absent
  bool contains(const std::string& symbol) const { return ids_.count(symbol) != 0; }
  const std::string& symbol(int id) const { return symbols_.at(id); }
  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  // Builds a table from counts: ids by (frequency desc, symbol asc); symbols
  // rarer than min_count are left out and so map to UNK.
  static SymbolTable from_counts(const std::map<std::string, std::size_t>& counts, std::size_t min_count);

  bool operator==(const SymbolTable& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> ids_;
};

struct Vocabulary {
  SymbolTable tokens;
  SymbolTable upos;
  SymbolTable relations;    // UD relation labels
  SymbolTable edge_labels;  // arborescence edge labels
  std::vector<std::string> node_attributes;
  std::vector<std::string> edge_attributes;

  // Stable content hash (hex) over all tables.
  std::string fingerprint() const;

  bool operator==(const Vocabulary& o) const = default;
};

nlohmann::json vocab_to_json(const Vocabulary& vocab);
Vocabulary vocab_from_json(const nlohmann::json& j);

// Counts symbols over the corpus (including the arborescence edge labels of
// both the full and the semantics-only conversion) and assigns ids.
Vocabulary build_vocab(const Corpus& corpus, std::size_t min_count);

// Spelled-out special symbols as they appear in node-token sequences.
inline const std::string kSepSymbol = "<sep>";
inline const std::string kEosSymbol = "<eos>";

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace udsp
