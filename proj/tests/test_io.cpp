#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "udsp/error.hpp"
#include "udsp/io.hpp"
#include "udsp/synthetic.hpp"

namespace udsp {
namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

TEST(Conllu, TwoTokenBlock) {
  std::istringstream in("1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n2\t!\t_\tPUNCT\t_\t_\t1\tpunct\t_\t_\n\n");
  auto trees = read_conllu(in);
  ASSERT_EQ(trees.size(), 1u);
  EXPECT_EQ(trees[0].heads, (std::vector<int>{0, 1}));
  EXPECT_EQ(trees[0].deprels, (std::vector<std::string>{"root", "punct"}));
  EXPECT_EQ(trees[0].tokens[1].upos, "PUNCT");
}

TEST(Conllu, HeadOutOfRangeIsRejected) {
  std::istringstream in("1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n2\t!\t_\tPUNCT\t_\t_\t3\tpunct\t_\t_\n\n");
  EXPECT_THROW(read_conllu(in), ParseError);
}

TEST(Conllu, NonIntegerHeadReportsLine) {
  std::istringstream in("1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n2\t!\t_\tPUNCT\t_\t_\tx\tpunct\t_\t_\n\n");
  try {
    read_conllu(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Conllu, SkipsRangesAndEmptyNodesKeepsComments) {
  auto trees = read_conllu_file(testing::data_path("sample.conllu"));
  ASSERT_EQ(trees.size(), 3u);
  EXPECT_EQ(trees[0].comments.size(), 2u);
  EXPECT_EQ(trees[0].comments[0], " sent_id = s1");
  EXPECT_EQ(trees[1].size(), 5u);
  EXPECT_EQ(trees[1].tokens[1].form, "ca");
  EXPECT_EQ(trees[1].tokens[3].deps, "4:root");
}

TEST(Conllu, RoundTripReproducesRetainedLines) {
  const std::string path = testing::data_path("sample.conllu");
  std::ostringstream out;
  write_conllu(out, read_conllu_file(path));
  std::vector<std::string> retained;
  for (const auto& line : lines_of(read_file(path))) {
    const auto id = line.substr(0, line.find('\t'));
    if (!line.empty() && line[0] != '#' && (id.find('-') != std::string::npos || id.find('.') != std::string::npos)) continue;
    retained.push_back(line);
  }
  EXPECT_EQ(lines_of(out.str()), retained);
}

TEST(Conllu, WriterEdgeCases) {
  std::ostringstream empty;
  write_conllu(empty, {});
  EXPECT_EQ(empty.str(), "");

  UDTree t;
  t.tokens = {Token{1, "yes", "INTJ"}};
  t.heads = {0};
  t.deprels = {"not-a-known-relation"};
  std::ostringstream one;
  write_conllu(one, {t});
  EXPECT_EQ(one.str(), "1\tyes\t_\tINTJ\t_\t_\t0\tnot-a-known-relation\t_\t_\n\n");
}

TEST(Jsonl, ReadsFixture) {
  auto corpus = read_uds_jsonl_file(testing::data_path("sample.jsonl"));
  ASSERT_EQ(corpus.size(), 4u);
  EXPECT_TRUE(corpus.warnings.empty());
  EXPECT_FALSE(corpus.entries[2].graph.has_value());
  const auto& single = *corpus.entries[3].graph;
  ASSERT_EQ(single.nodes.size(), 1u);
  EXPECT_EQ(single.nodes[0].attributes.at("factuality"), (AttributeValue{2.2, true}));
  const auto& diamond = *corpus.entries[1].graph;
  EXPECT_EQ(diamond.edges[0].label, kDefaultEdgeLabel);
}

TEST(Jsonl, ValueWithoutAppliesDefaultsTrueAndClamps) {
  std::istringstream in(
      R"({"id":"a","tokens":[{"form":"x","upos":"X"}],"ud":{"heads":[0],"deprels":["root"]},)"
      R"("nodes":[{"id":"n","head_token":1,"attributes":{"factuality":{"value":4.0}}}],"roots":["n"]})"
      "\n");
  auto corpus = read_uds_jsonl(in);
  const auto& v = corpus.entries[0].graph->nodes[0].attributes.at("factuality");
  EXPECT_EQ(v.value, 3.0);
  EXPECT_TRUE(v.applies);
  ASSERT_EQ(corpus.warnings.size(), 1u);
  EXPECT_NE(corpus.warnings[0].find("clamped"), std::string::npos);
}

TEST(Jsonl, SchemaErrorsNameLineAndPath) {
  std::istringstream in(
      R"({"id":"a","tokens":[{"form":"x"}],"ud":{"heads":[0],"deprels":["root"]}})"
      "\n"
      R"({"id":"b","tokens":[{"form":"x"}],"ud":{"heads":["0"],"deprels":["root"]}})"
      "\n");
  try {
    read_uds_jsonl(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("$.ud.heads[0]"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, DanglingNodeIsRejected) {
  std::istringstream in(
      R"({"id":"a","tokens":[{"form":"x"}],"ud":{"heads":[0],"deprels":["root"]},)"
      R"("nodes":[{"id":"n","head_token":2}],"roots":["n"]})"
      "\n");
  EXPECT_THROW(read_uds_jsonl(in), ParseError);
}

TEST(Jsonl, DuplicateIdsAreRejected) {
  const std::string line = R"({"id":"a","tokens":[{"form":"x"}],"ud":{"heads":[0],"deprels":["root"]}})";
  std::istringstream in(line + "\n" + line + "\n");
  EXPECT_THROW(read_uds_jsonl(in), ParseError);
}

TEST(Jsonl, GeneratedCorpusCountAndRoundTrip) {
  auto corpus = synthetic_corpus({.sentences = 40}, 5);
  std::ostringstream out;
  write_uds_jsonl(out, corpus);
  EXPECT_EQ(lines_of(out.str()).size(), 40u);
  std::istringstream in(out.str());
  auto back = read_uds_jsonl(in);
  ASSERT_EQ(back.size(), 40u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.entries[i].id, corpus.entries[i].id);
    EXPECT_EQ(back.entries[i].tree.heads, corpus.entries[i].tree.heads);
    ASSERT_TRUE(back.entries[i].graph.has_value());
    EXPECT_TRUE(isomorphic(*back.entries[i].graph, *corpus.entries[i].graph));
  }
  std::ostringstream again;
  write_uds_jsonl(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Jsonl, ConlluCorpusIsUdOnly) {
  auto corpus = read_corpus_file(testing::data_path("sample.conllu"));
  EXPECT_EQ(corpus.size(), 3u);
  EXPECT_FALSE(corpus.has_semantics());
}

Corpus token_corpus(const std::vector<std::string>& words) {
  Corpus c;
  for (std::size_t i = 0; i < words.size(); ++i) {
    CorpusEntry e;
    e.id = std::to_string(i);
    e.tree.tokens = {Token{1, words[i], "X"}};
    e.tree.heads = {0};
    e.tree.deprels = {"root"};
    c.entries.push_back(e);
  }
  return c;
}

TEST(Vocab, FrequencyThenLexicographicIds) {
  auto v = build_vocab(token_corpus({"b", "a", "a"}), 1);
  ASSERT_TRUE(v.tokens.contains("a"));
  ASSERT_TRUE(v.tokens.contains("b"));
  EXPECT_LT(v.tokens.id("a"), v.tokens.id("b"));
  EXPECT_EQ(v.tokens.id("a"), SymbolTable::kNumSpecials);
  auto tie = build_vocab(token_corpus({"d", "c"}), 1);
  EXPECT_LT(tie.tokens.id("c"), tie.tokens.id("d"));
}

TEST(Vocab, MinCountMapsRareToUnk) {
  auto v = build_vocab(token_corpus({"a", "a", "b"}), 2);
  EXPECT_TRUE(v.tokens.contains("a"));
  EXPECT_EQ(v.tokens.id("b"), SymbolTable::kUnk);
}

TEST(Vocab, SpecialsAreReservedAndIdsDense) {
  auto v = build_vocab(synthetic_corpus({}, 1), 1);
  for (const auto* table : {&v.tokens, &v.upos, &v.relations, &v.edge_labels}) {
    ASSERT_GE(table->size(), SymbolTable::kNumSpecials);
    for (int i = 0; i < table->size(); ++i) EXPECT_EQ(table->id(table->symbol(i)), i);
  }
  EXPECT_TRUE(v.edge_labels.contains("root"));
  EXPECT_TRUE(v.edge_labels.contains("arg0"));
}

TEST(Vocab, DeterministicAcrossBuildsAndSerialization) {
  auto corpus = synthetic_corpus({}, 9);
  auto a = build_vocab(corpus, 1);
  auto b = build_vocab(corpus, 1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  auto c = vocab_from_json(vocab_to_json(a));
  EXPECT_EQ(c, a);
  EXPECT_EQ(c.fingerprint(), a.fingerprint());
  auto other = build_vocab(synthetic_corpus({}, 10), 1);
  EXPECT_NE(other.fingerprint(), a.fingerprint());
}

TEST(PPPairs, ReadsFixture) {
  auto pairs = read_pp_pairs_file(testing::data_path("pp_pairs.jsonl"));
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0].direction, PPDirection::kVerbToNoun);
  EXPECT_EQ(pairs[1].direction, PPDirection::kNounToVerb);
  EXPECT_EQ(pairs[0].pp_token, 6);
  // A reworded PP may change the token count.
  EXPECT_NE(pairs[1].original.size(), pairs[1].altered.size());
}

TEST(PPPairs, MissingAlteredBlockIsSchemaError) {
  std::istringstream in(R"({"original":"1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n","direction":"noun_to_verb","pp_token":1})"
                        "\n");
  try {
    read_pp_pairs(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("altered"), std::string::npos);
  }
}

TEST(PPPairs, UnknownDirectionIsRejected) {
  const std::string block = R"(1\tHi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n)";
  std::istringstream in(R"({"original":")" + block + R"(","altered":")" + block +
                        R"(","direction":"X","pp_token":1})" + "\n");
  EXPECT_THROW(read_pp_pairs(in), ParseError);
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
  const auto dir = std::filesystem::temp_directory_path() / "udsp_io_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = (dir / "out.txt").string();
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  EXPECT_EQ(read_file(path), "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& entry : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace udsp
