#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "support.hpp"
#include "udsp/model.hpp"
#include "udsp/synthetic.hpp"

// Model-level invariant checks shared by the unit tests and the acceptance
// runner. Each returns an empty string on success, otherwise a description
// of the first violation.
namespace udsp::testing {

inline bool bit_equal(const ad::Tensor& a, const ad::Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline std::vector<double> row_sums(const ad::Tensor& t) {
  std::vector<double> s(t.rows(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) s[i] += t.at(i, j);
  }
  return s;
}

inline std::vector<double> row_norms(const ad::Tensor& t) {
  std::vector<double> s(t.rows(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) s[i] += t.at(i, j) * t.at(i, j);
    s[i] = std::sqrt(s[i]);
  }
  return s;
}

struct ModelFixture {
  Corpus corpus;
  Vocabulary vocab;
};

inline ModelFixture shared_subject_fixture() {
  ModelFixture f;
  f.corpus.entries.push_back(shared_subject_entry());
  f.vocab = build_vocab(f.corpus, 1);
  return f;
}

// Gradient check of the full multitask loss over an evenly spaced subset of
// every parameter tensor.
inline GradCheck full_loss_gradcheck(Mode mode, std::uint64_t seed, std::size_t per_tensor = 6) {
  auto fx = shared_subject_fixture();
  ModelConfig cfg = tiny_config(mode);
  cfg.weights = {1.0, 0.7, 1.3, 0.9, 0.5, 1.1};
  Parser parser(cfg, fx.vocab, seed);
  const Example ex = make_example(fx.corpus.entries[0], fx.vocab, cfg);
  std::vector<ad::Tensor> params;
  for (auto& [name, t] : parser.params().all()) {
    if (t.requires_grad()) params.push_back(t);
  }
  auto loss = [&] { return parser.compute_loss({&ex}, false).total; };
  return gradcheck(loss, params, per_tensor);
}

// A random small configuration for a decoding mode.
inline ModelConfig random_config(Rng& rng) {
  static const Mode modes[] = {Mode::kBase, Mode::kCb, Mode::kCa, Mode::kEn, Mode::kIn};
  ModelConfig c;
  c.mode = modes[rng.below(5)];
  c.layers = 1 + static_cast<int>(rng.below(3));
  c.heads = 1 << rng.below(3);
  c.d_model = c.heads * (2 + 2 * static_cast<int>(rng.below(4)));
  c.d_ff = 4 + static_cast<int>(rng.below(28));
  c.d_head = 2 + static_cast<int>(rng.below(12));
  c.d_type = 2 + static_cast<int>(rng.below(6));
  c.d_attr = 2 + static_cast<int>(rng.below(12));
  c.init_scale = std::vector<double>{1.0, 4.0, 32.0, 128.0, 512.0}[rng.below(5)];
  c.semantics_only = rng.below(2) == 0;
  return c;
}

// Decoder causality (bit-exact), batched vs incremental equality (1e-12),
// normalization of every softmax and of the label mixture (1e-9) and the
// ScaleNorm law on encoder and decoder outputs (1e-9) for one random
// configuration and sentence.
inline std::string invariant_check(std::uint64_t seed) {
  Rng rng(seed);
  ModelConfig cfg = random_config(rng);
  Corpus corpus = synthetic_corpus({.sentences = 4}, seed);
  const Vocabulary vocab = build_vocab(corpus, 1);
  Parser parser(cfg, vocab, seed);
  const auto& entry = corpus.entries[rng.below(corpus.size())];
  const Example ex = make_example(entry, vocab, cfg);
  const std::string where = " (seed " + std::to_string(seed) + ", mode " + to_string(cfg.mode) + ")";

  ad::NoGradGuard guard;
  const ad::Tensor enc = parser.encode(ex.tokens, ex.upos, false);
  const double enc_gain = parser.params().at("encoder.norm_final").item();
  for (double n : row_norms(enc)) {
    if (std::abs(n - std::abs(enc_gain)) > 1e-9) return "encoder ScaleNorm law violated" + where;
  }
  const SyntacticParse parse = parser.syntactic_biaffine(enc, false);
  const ad::Tensor arcs = ad::softmax_rows(parse.scores, self_attachment_mask(ex.tokens.size()));
  for (double s : row_sums(arcs)) {
    if (std::abs(s - 1.0) > 1e-9) return "arc distribution does not sum to 1" + where;
  }
  const ad::Tensor mem = parser.memory(enc, &parse);

  const auto& inputs = ex.target.inputs;
  const std::size_t S = inputs.size();
  const ad::Tensor z = parser.decode_all(mem, inputs, false);
  const double dec_gain = parser.params().at("decoder.norm_final").item();
  for (double n : row_norms(z)) {
    if (std::abs(n - std::abs(dec_gain)) > 1e-9) return "decoder ScaleNorm law violated" + where;
  }

  // Changing inputs after step i leaves rows <= i untouched.
  for (std::size_t i = 0; i + 1 < S; ++i) {
    auto altered = inputs;
    for (std::size_t j = i + 1; j < S; ++j) {
      altered[j].token = static_cast<int>(rng.below(vocab.tokens.size()));
      altered[j].coindex = static_cast<int>(rng.below(S));
      altered[j].head_token = static_cast<int>(rng.below(vocab.tokens.size()));
      altered[j].edge_label = static_cast<int>(rng.below(vocab.edge_labels.size()));
    }
    const ad::Tensor z2 = parser.decode_all(mem, altered, false);
    if (std::memcmp(z.data().data(), z2.data().data(), (i + 1) * z.cols() * sizeof(double)) != 0) {
      return "decoder row " + std::to_string(i) + " depends on later inputs" + where;
    }
  }

  DecoderState st = parser.start_decoder(mem);
  for (const auto& in : inputs) parser.decode_step(st, in);
  if (max_abs_diff(st.z, z) > 1e-12) return "incremental decoding differs from the batched pass" + where;

  const LabelDistribution dist = parser.label_distribution(z, mem);
  for (const ad::Tensor* t : {&dist.switch_probs, &dist.generate, &dist.source, &dist.mixture}) {
    for (double s : row_sums(*t)) {
      if (std::abs(s - 1.0) > 1e-9) return "distribution row does not sum to 1" + where;
    }
  }
  const auto target_sums = row_sums(dist.target);
  for (std::size_t i = 0; i < target_sums.size(); ++i) {
    const double expected = i == 0 ? 0.0 : 1.0;
    if (std::abs(target_sums[i] - expected) > 1e-9) return "target-copy row has wrong mass" + where;
  }
  if (S > 0 && dist.switch_probs.at(0, 2) != 0.0) return "target copy possible before any node" + where;
  return "";
}

}  // namespace udsp::testing
