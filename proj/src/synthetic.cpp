#include "udsp/synthetic.hpp"

#include <algorithm>
#include <string>

namespace udsp {

namespace {

const std::vector<std::string> kNouns = {"dog",  "cat",   "bird", "fish",  "man",  "woman",  "child",
                                         "teacher", "farmer", "doctor", "apple", "bread", "ball", "book",
                                         "car",  "house", "park", "river", "table", "garden"};
const std::vector<std::string> kVerbs = {"chased", "saw",  "ate",   "found",   "liked", "took",  "gave",   "made",
                                         "wanted", "heard", "helped", "visited", "kept",  "moved", "watched"};
const std::vector<std::string> kAdjectives = {"big", "small", "red", "old", "happy"};
const std::vector<std::string> kDeterminers = {"the", "a", "this", "that", "every"};
const std::vector<std::string> kAdpositions = {"in", "on", "with", "near"};
const std::string kConjunction = "and";

// Fixed per-word value in [-2.5, 2.5], spread over the lexicon.
double word_value(const std::string& form) {
  const auto& lex = synthetic_lexicon();
  const auto idx = static_cast<std::size_t>(std::find(lex.begin(), lex.end(), form) - lex.begin());
  return -2.5 + 5.0 * static_cast<double>((idx * 37) % 50) / 49.0;
}

double clamped(double v) {
  clamp_attribute(v);
  return v;
}

struct Item {
  std::string form;
  std::string upos;
  std::string rel;
  int head = -1;  // item index, -1 for ROOT
};

struct NounPhrase {
  int noun = 0;
  std::string det;
};

class SentenceBuilder {
 public:
  SentenceBuilder(Rng& rng, const SyntheticOptions& o) : rng_(rng), opts_(o) {}

  int push(const std::string& form, const std::string& upos) {
    items.push_back({form, upos, "", -1});
    return static_cast<int>(items.size()) - 1;
  }

  void attach(int dep, int head, const std::string& rel) {
    items[dep].head = head;
    items[dep].rel = rel;
  }

  NounPhrase noun_phrase() {
    NounPhrase np;
    np.det = pick(kDeterminers);
    const int det = push(np.det, "DET");
    int adj = -1;
    if (rng_.uniform() < opts_.adjective_rate) adj = push(pick(kAdjectives), "ADJ");
    np.noun = push(pick(kNouns), "NOUN");
    attach(det, np.noun, "det");
    if (adj >= 0) attach(adj, np.noun, "amod");
    return np;
  }

  const std::string& pick(const std::vector<std::string>& words) { return words[rng_.below(words.size())]; }

  std::vector<Item> items;

 private:
  Rng& rng_;
  const SyntheticOptions& opts_;
};

AttributeValue applies(double v) { return AttributeValue{clamped(v), true}; }
AttributeValue absent() { return AttributeValue{0.0, false}; }

}  // namespace

const std::vector<std::string>& synthetic_lexicon() {
  static const std::vector<std::string> lex = [] {
    std::vector<std::string> out;
    for (const auto* list : {&kNouns, &kVerbs, &kAdjectives, &kDeterminers, &kAdpositions}) {
      out.insert(out.end(), list->begin(), list->end());
    }
    out.push_back(kConjunction);
    return out;
  }();
  return lex;
}

Corpus synthetic_corpus(const SyntheticOptions& options, std::uint64_t seed) {
  Rng rng(seed);
  Corpus corpus;
  for (std::size_t s = 0; s < options.sentences; ++s) {
    SentenceBuilder b(rng, options);
    const NounPhrase subj = b.noun_phrase();
    const int verb = b.push(b.pick(kVerbs), "VERB");
    b.attach(subj.noun, verb, "nsubj");
    const NounPhrase obj = b.noun_phrase();
    b.attach(obj.noun, verb, "obj");

    struct SemEdge {
      int src, dst;
      std::string label;
    };
    std::vector<SemEdge> edges = {{verb, subj.noun, "arg0"}, {verb, obj.noun, "arg1"}};
    std::vector<int> in_pp;
    std::vector<NounPhrase> nps = {subj, obj};

    if (rng.uniform() < options.pp_rate) {
      const int adp = b.push(b.pick(kAdpositions), "ADP");
      const NounPhrase pn = b.noun_phrase();
      b.attach(adp, pn.noun, "case");
      const bool on_verb = rng.uniform() < 0.5;
      b.attach(pn.noun, on_verb ? verb : obj.noun, on_verb ? "obl" : "nmod");
      edges.push_back({on_verb ? verb : obj.noun, pn.noun, "mod"});
      in_pp.push_back(pn.noun);
      nps.push_back(pn);
    }

    std::vector<int> roots = {verb};
    int second = -1;
    if (rng.uniform() < options.coordination_rate) {
      const int cc = b.push(kConjunction, "CCONJ");
      second = b.push(b.pick(kVerbs), "VERB");
      b.attach(cc, second, "cc");
      b.attach(second, verb, "conj");
      const NounPhrase obj2 = b.noun_phrase();
      b.attach(obj2.noun, second, "obj");
      // The shared subject is re-entrant: an argument of both verbs.
      edges.push_back({second, subj.noun, "arg0"});
      edges.push_back({second, obj2.noun, "arg1"});
      roots.push_back(second);
      nps.push_back(obj2);
    }
    b.attach(verb, -1, "root");

    CorpusEntry entry;
    entry.id = "syn-" + std::to_string(s + 1);
    for (std::size_t i = 0; i < b.items.size(); ++i) {
      const auto& it = b.items[i];
      Token t;
      t.index = static_cast<int>(i) + 1;
      t.form = it.form;
      t.upos = it.upos;
      entry.tree.tokens.push_back(t);
      entry.tree.heads.push_back(it.head + 1);
      entry.tree.deprels.push_back(it.rel);
    }

    UDSGraph g;
    auto id_of = [](int item) { return "n" + std::to_string(item + 1); };
    auto add_node = [&](int item, AttributeMap attrs) {
      g.nodes.push_back({id_of(item), item + 1, std::move(attrs)});
    };
    for (int v : {verb, second}) {
      if (v < 0) continue;
      const double ctx = v == second ? -1.0 : 0.5;
      add_node(v, {{"factuality", applies(word_value(b.items[v].form) + ctx)},
                   {"genericity", absent()}});
    }
    for (const auto& np : nps) {
      const bool generic_det = np.det == "a" || np.det == "every";
      const bool pp = std::count(in_pp.begin(), in_pp.end(), np.noun) > 0;
      add_node(np.noun,
               {{"factuality", absent()},
                {"genericity", pp ? absent() : applies(0.6 * word_value(b.items[np.noun].form) + (generic_det ? 1.2 : -0.6))}});
    }
    std::sort(g.nodes.begin(), g.nodes.end(),
              [](const SemanticNode& a, const SemanticNode& c) { return a.head_token < c.head_token; });
    for (const auto& e : edges) {
      const double sv = word_value(b.items[e.src].form);
      const double dv = word_value(b.items[e.dst].form);
      AttributeMap attrs;
      if (e.label == "arg0") {
        attrs = {{"volition", applies(0.5 * sv + 0.5 * dv)}, {"awareness", applies(0.5 - 0.7 * sv)}};
      } else if (e.label == "arg1") {
        attrs = {{"volition", absent()}, {"awareness", applies(0.8 * dv)}};
      } else {
        attrs = {{"volition", absent()}, {"awareness", absent()}};
      }
      g.edges.push_back({id_of(e.src), id_of(e.dst), e.label, std::move(attrs)});
    }
    for (int r : roots) g.roots.push_back(id_of(r));
    entry.graph = std::move(g);
    corpus.entries.push_back(std::move(entry));
  }
  return corpus;
}

UDTree random_tree(std::size_t n, Rng& rng) {
  static const std::vector<std::string> upos = {"NOUN", "VERB", "ADJ", "DET", "ADP"};
  static const std::vector<std::string> rels = {"nsubj", "obj", "det", "amod", "obl", "nmod"};
  const auto& lex = synthetic_lexicon();
  UDTree t;
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i) + 1;
  rng.shuffle(order);
  t.heads.assign(n, 0);
  t.deprels.assign(n, "root");
  for (std::size_t k = 1; k < n; ++k) {
    const int dep = order[k];
    t.heads[dep - 1] = order[rng.below(k)];
    t.deprels[dep - 1] = rels[rng.below(rels.size())];
  }
  for (std::size_t i = 0; i < n; ++i) {
    Token tok;
    tok.index = static_cast<int>(i) + 1;
    tok.form = lex[rng.below(lex.size())];
    tok.upos = upos[rng.below(upos.size())];
    t.tokens.push_back(tok);
  }
  return t;
}

RandomGraph random_graph(std::size_t max_nodes, double reentrancy, Rng& rng) {
  static const std::vector<std::string> labels = {"arg0", "arg1", "mod"};
  RandomGraph out;
  const std::size_t k = 1 + rng.below(max_nodes);
  const std::size_t T = k + rng.below(4);
  out.tree = random_tree(T, rng);
  std::vector<int> heads(T);
  for (std::size_t i = 0; i < T; ++i) heads[i] = static_cast<int>(i) + 1;
  rng.shuffle(heads);

  auto random_attrs = [&](const std::vector<std::string>& names) {
    AttributeMap m;
    for (const auto& name : names) {
      if (rng.uniform() < 0.2) continue;
      m[name] = AttributeValue{rng.uniform(-3.0, 3.0), rng.uniform() < 0.7};
    }
    return m;
  };
  auto id_of = [](std::size_t i) { return "n" + std::to_string(i); };

  auto& g = out.graph;
  for (std::size_t i = 0; i < k; ++i) {
    g.nodes.push_back({id_of(i), heads[i], random_attrs({"factuality", "genericity"})});
  }
  // Nodes are created in a topological order; parents always come earlier.
  for (std::size_t i = 0; i < k; ++i) {
    if (i == 0 || rng.uniform() < 0.15) {
      g.roots.push_back(id_of(i));
      continue;
    }
    const std::size_t p = rng.below(i);
    g.edges.push_back({id_of(p), id_of(i), labels[rng.below(labels.size())], random_attrs({"volition"})});
    if (i >= 2 && rng.uniform() < reentrancy) {
      std::size_t q = rng.below(i - 1);
      if (q >= p) ++q;
      g.edges.push_back({id_of(q), id_of(i), labels[rng.below(labels.size())], random_attrs({"volition"})});
    }
  }
  rng.shuffle(g.nodes);
  rng.shuffle(g.edges);
  return out;
}

}  // namespace udsp
