#include <gtest/gtest.h>

#include <filesystem>

#include "checks.hpp"
#include "support.hpp"
#include "udsp/error.hpp"
#include "udsp/model.hpp"

namespace udsp {
namespace {

using testing::bit_equal;

struct Tiny {
  testing::ModelFixture fx = testing::shared_subject_fixture();
  ModelConfig cfg;
  Parser parser;
  Example ex;

  explicit Tiny(Mode mode, std::uint64_t seed = 1)
      : cfg(testing::tiny_config(mode)), parser(cfg, fx.vocab, seed), ex(make_example(fx.corpus.entries[0], fx.vocab, cfg)) {}
};

TEST(Config, JsonRoundTripAndValidation) {
  ModelConfig c = testing::tiny_config(Mode::kIn);
  c.weights.edge = 0.25;
  c.frozen_encoder_layers = 1;
  auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_THROW(config_from_json({{"no_such_field", 1}}), ConfigError);
  ModelConfig bad = c;
  bad.d_model = 15;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.frozen_encoder_layers = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.weights.node = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(parse_mode("en"), Mode::kEn);
  EXPECT_THROW(parse_mode("xx"), ConfigError);
}

TEST(Encoder, OutputShape) {
  Tiny t(Mode::kEn);
  std::vector<int> toks(t.ex.tokens.begin(), t.ex.tokens.begin() + 5);
  std::vector<int> upos(t.ex.upos.begin(), t.ex.upos.begin() + 5);
  auto enc = t.parser.encode(toks, upos, false);
  EXPECT_EQ(enc.shape(), (ad::Shape{5, 16}));
  EXPECT_THROW(t.parser.encode({}, {}, false), Error);
}

TEST(Encoder, FrozenLayersGetNoGradient) {
  Tiny t(Mode::kEn);
  t.parser.freeze_encoder_layers(2);
  t.parser.params().zero_grad();
  ad::backward(t.parser.compute_loss({&t.ex}, false).total);
  for (const auto& [name, p] : t.parser.params().all()) {
    if (name.rfind("encoder.layer", 0) == 0) {
      EXPECT_FALSE(p.requires_grad()) << name;
      EXPECT_EQ(t.parser.params().grad_norm(name), 0.0) << name;
    }
  }
  EXPECT_GT(t.parser.params().grad_norm("encoder.embed."), 0.0);
}

TEST(Encoder, PartialFreezeKeepsUpperLayersTrainable) {
  Tiny t(Mode::kEn);
  t.parser.freeze_encoder_layers(1);
  ad::backward(t.parser.compute_loss({&t.ex}, false).total);
  EXPECT_EQ(t.parser.params().grad_norm("encoder.layer0."), 0.0);
  EXPECT_GT(t.parser.params().grad_norm("encoder.layer1."), 0.0);
  EXPECT_THROW(t.parser.freeze_encoder_layers(3), ConfigError);
}

TEST(Encoder, PositionSensitive) {
  Tiny t(Mode::kEn);
  auto toks = t.ex.tokens, upos = t.ex.upos;
  auto a = t.parser.encode(toks, upos, false);
  std::swap(toks[1], toks[2]);
  std::swap(upos[1], upos[2]);
  auto b = t.parser.encode(toks, upos, false);
  // Without positions, b row 1 would equal a row 2.
  for (auto [i, j] : {std::pair{1, 2}, std::pair{2, 1}}) {
    double diff = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) diff += std::abs(b.at(i, c) - a.at(j, c));
    EXPECT_GT(diff, 1e-6);
  }
}

TEST(Biaffine, SingleTokenAttachesToRoot) {
  Tiny t(Mode::kBi);
  auto enc = t.parser.encode({t.ex.tokens[0]}, {t.ex.upos[0]}, false);
  auto parse = t.parser.syntactic_biaffine(enc, false);
  ASSERT_EQ(parse.scores.shape(), (ad::Shape{1, 2}));
  auto probs = ad::softmax_rows(parse.scores, self_attachment_mask(1));
  EXPECT_EQ(probs.at(0, 0), 1.0);
  EXPECT_EQ(probs.at(0, 1), 0.0);
}

TEST(Fusion, MatchesLoopOracle) {
  Tiny t(Mode::kIn);
  auto enc = t.parser.encode(t.ex.tokens, t.ex.upos, false);
  auto parse = t.parser.syntactic_biaffine(enc, false);
  auto fused = t.parser.intermediate_fusion(enc, parse);
  const std::size_t T = enc.rows(), d = enc.cols(), dh = parse.head.cols(), dt = parse.head_type.cols();
  ASSERT_EQ(fused.shape(), (ad::Shape{T, d}));
  const auto& W = t.parser.params().at("fusion.w");
  for (std::size_t i = 0; i < T; ++i) {
    // Soft head distribution with the self column excluded.
    std::vector<double> p(T + 1, 0.0);
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j <= T; ++j) {
      if (j != i + 1) mx = std::max(mx, parse.scores.at(i, j));
    }
    for (std::size_t j = 0; j <= T; ++j) {
      if (j != i + 1) z += p[j] = std::exp(parse.scores.at(i, j) - mx);
    }
    std::vector<double> row(d + dh + dt, 0.0);
    for (std::size_t c = 0; c < d; ++c) row[c] = enc.at(i, c);
    for (std::size_t j = 0; j <= T; ++j) {
      for (std::size_t c = 0; c < dh; ++c) row[d + c] += p[j] / z * parse.head.at(j, c);
      for (std::size_t c = 0; c < dt; ++c) row[d + dh + c] += p[j] / z * parse.head_type.at(j, c);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) s += row[k] * W.at(k, c);
      EXPECT_NEAR(fused.at(i, c), s, 1e-12);
    }
  }
}

TEST(Fusion, OneHotAndUniformHeads) {
  Tiny t(Mode::kIn);
  auto enc = t.parser.encode(t.ex.tokens, t.ex.upos, false);
  auto parse = t.parser.syntactic_biaffine(enc, false);
  const std::size_t T = enc.rows(), d = enc.cols();
  const auto& W = t.parser.params().at("fusion.w");
  auto expect_rows = [&](const ad::Tensor& fused, auto weight_of) {
    auto head_part = ad::Tensor::zeros(T, parse.head.cols() + parse.head_type.cols());
    auto hp = head_part.mutable_data();
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j <= T; ++j) {
        const double w = weight_of(i, j);
        for (std::size_t c = 0; c < parse.head.cols(); ++c) hp[i * head_part.cols() + c] += w * parse.head.at(j, c);
        for (std::size_t c = 0; c < parse.head_type.cols(); ++c) {
          hp[i * head_part.cols() + parse.head.cols() + c] += w * parse.head_type.at(j, c);
        }
      }
    }
    auto expected = ad::matmul(ad::concat_cols({enc, head_part}), W);
    EXPECT_LT(testing::max_abs_diff(fused, expected), 1e-12);
    EXPECT_EQ(fused.shape(), (ad::Shape{T, d}));
  };

  // Head of token i is token (i+1) mod T + 1; scores far apart give exact one-hot rows.
  std::vector<double> onehot(T * (T + 1), 0.0);
  auto head_of = [&](std::size_t i) { return (i + 1) % T + 1; };
  for (std::size_t i = 0; i < T; ++i) onehot[i * (T + 1) + head_of(i)] = 1000.0;
  parse.scores = ad::Tensor::from(T, T + 1, onehot);
  expect_rows(t.parser.intermediate_fusion(enc, parse),
              [&](std::size_t i, std::size_t j) { return j == head_of(i) ? 1.0 : 0.0; });

  parse.scores = ad::Tensor::zeros(T, T + 1);
  expect_rows(t.parser.intermediate_fusion(enc, parse),
              [&](std::size_t i, std::size_t j) { return j == i + 1 ? 0.0 : 1.0 / static_cast<double>(T); });
}

TEST(Fusion, OnlyInInMode) {
  Tiny t(Mode::kEn);
  auto enc = t.parser.encode(t.ex.tokens, t.ex.upos, false);
  auto parse = t.parser.syntactic_biaffine(enc, false);
  EXPECT_THROW(t.parser.intermediate_fusion(enc, parse), ConfigError);
}

TEST(Decoder, InvariantsOnRandomConfigs) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) EXPECT_EQ(testing::invariant_check(seed), "");
}

TEST(Decoder, FirstStepConsumesBos) {
  Tiny t(Mode::kEn);
  auto enc = t.parser.encode(t.ex.tokens, t.ex.upos, false);
  auto st = t.parser.start_decoder(enc);
  auto z = t.parser.decode_step(st, DecoderInput{});
  EXPECT_EQ(z.shape(), (ad::Shape{1, 16}));
  for (double v : z.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Decoder, StepBeyondMaximumLengthThrows) {
  Tiny t(Mode::kEn);
  t.cfg.max_decode_factor = 0;
  t.cfg.max_decode_extra = 2;
  Parser p(t.cfg, t.fx.vocab, 3);
  auto enc = p.encode(t.ex.tokens, t.ex.upos, false);
  auto st = p.start_decoder(enc);
  for (int i = 0; i < 3; ++i) p.decode_step(st, DecoderInput{});
  EXPECT_THROW(p.decode_step(st, DecoderInput{}), Error);
}

TEST(LabelDistribution, MixtureMatchesWeightedSum) {
  Tiny t(Mode::kEn);
  auto enc = t.parser.encode(t.ex.tokens, t.ex.upos, false);
  auto z = t.parser.decode_all(enc, t.ex.target.inputs, false);
  auto dist = t.parser.label_distribution(z, enc);
  const std::size_t S = z.rows(), V = t.fx.vocab.tokens.size(), T = enc.rows();
  ASSERT_EQ(dist.mixture.cols(), V + T + S - 1);
  // Switch probabilities recomputed from the parameters.
  const auto& w = t.parser.params().at("decoder.switch.w");
  const auto& b = t.parser.params().at("decoder.switch.b");
  for (std::size_t i = 0; i < S; ++i) {
    double logit[3];
    for (int k = 0; k < 3; ++k) {
      logit[k] = b.at(0, k);
      for (std::size_t c = 0; c < z.cols(); ++c) logit[k] += z.at(i, c) * w.at(c, k);
    }
    const int used = i == 0 ? 2 : 3;
    double mx = *std::max_element(logit, logit + used), zsum = 0.0;
    double sw[3] = {0, 0, 0};
    for (int k = 0; k < used; ++k) zsum += sw[k] = std::exp(logit[k] - mx);
    for (int k = 0; k < used; ++k) sw[k] /= zsum;
    for (std::size_t j = 0; j < V; ++j) EXPECT_NEAR(dist.mixture.at(i, j), sw[0] * dist.generate.at(i, j), 1e-15);
    for (std::size_t j = 0; j < T; ++j) EXPECT_NEAR(dist.mixture.at(i, V + j), sw[1] * dist.source.at(i, j), 1e-15);
    for (std::size_t j = 0; j + 1 < S; ++j) {
      EXPECT_NEAR(dist.mixture.at(i, V + T + j), sw[2] * dist.target.at(i, j), 1e-15);
      if (j >= i) {
        EXPECT_EQ(dist.target.at(i, j), 0.0);
      }
    }
  }
}

TEST(LabelDistribution, ForcedGenerationEqualsVocabularySoftmax) {
  Tiny t(Mode::kEn);
  auto& b = t.parser.params().at("decoder.switch.b");
  b.mutable_data()[0] = 1e4;
  auto enc = t.parser.encode(t.ex.tokens, t.ex.upos, false);
  auto z = t.parser.decode_all(enc, t.ex.target.inputs, false);
  auto dist = t.parser.label_distribution(z, enc);
  const std::size_t V = t.fx.vocab.tokens.size();
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < dist.mixture.cols(); ++j) {
      EXPECT_EQ(dist.mixture.at(i, j), j < V ? dist.generate.at(i, j) : 0.0);
    }
  }
}

TEST(Loss, TotalIsWeightedSumOfComponents) {
  for (Mode mode : {Mode::kBase, Mode::kBi, Mode::kCb, Mode::kCa, Mode::kEn, Mode::kIn}) {
    Tiny t(mode);
    t.cfg.weights = {0.3, 1.7, 0.0, 2.5, 0.8, 1.2};
    Parser p(t.cfg, t.fx.vocab, 4);
    auto out = p.compute_loss({&t.ex, &t.ex}, false);
    const auto& w = t.cfg.weights;
    const auto& c = out.components;
    const double expected = w.node * c.at("node") + w.edge * c.at("edge") + w.label * c.at("label") +
                            w.syntax * c.at("syntax") + w.attr_value * c.at("attr_value") +
                            w.attr_mask * c.at("attr_mask");
    EXPECT_NEAR(out.total.item(), expected, 1e-12) << to_string(mode);
  }
}

TEST(Loss, NoApplicableAttributesGivesZeroValueLoss) {
  auto fx = testing::shared_subject_fixture();
  auto entry = fx.corpus.entries[0];
  for (auto& n : entry.graph->nodes) {
    for (auto& [k, v] : n.attributes) v.applies = false;
  }
  for (auto& e : entry.graph->edges) {
    for (auto& [k, v] : e.attributes) v.applies = false;
  }
  auto cfg = testing::tiny_config(Mode::kEn);
  Parser p(cfg, fx.vocab, 2);
  auto ex = make_example(entry, fx.vocab, cfg);
  auto out = p.compute_loss({&ex}, false);
  EXPECT_EQ(out.components.at("attr_value"), 0.0);
  EXPECT_GT(out.components.at("attr_mask"), 0.0);
}

TEST(Loss, SaturatedNodeLossApproachesZero) {
  // Only the node component is weighted; training on one sentence drives it down.
  auto fx = testing::shared_subject_fixture();
  auto cfg = testing::tiny_config(Mode::kBase);
  cfg.weights = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  Parser p(cfg, fx.vocab, 5);
  auto ex = make_example(fx.corpus.entries[0], fx.vocab, cfg);
  Adam adam;
  const double before = p.compute_loss({&ex}, false).components.at("node");
  for (long step = 1; step <= 300; ++step) {
    p.params().zero_grad();
    ad::backward(p.compute_loss({&ex}, true).total);
    adam.step(p.params(), 0.01);
  }
  const double after = p.compute_loss({&ex}, false).components.at("node");
  EXPECT_LT(after, 0.01);
  EXPECT_LT(after, before);
}

TEST(Loss, MissingSupervisionIsConfigError) {
  auto fx = testing::shared_subject_fixture();
  CorpusEntry ud_only = fx.corpus.entries[0];
  ud_only.graph.reset();
  auto cfg = testing::tiny_config(Mode::kBase);
  Parser p(cfg, fx.vocab, 1);
  auto ex = make_example(ud_only, fx.vocab, cfg);
  EXPECT_THROW(p.compute_loss({&ex}, false), ConfigError);
}

class FullLossGradcheck : public ::testing::TestWithParam<Mode> {};

TEST_P(FullLossGradcheck, CentralDifferences) {
  auto r = testing::full_loss_gradcheck(GetParam(), 7);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Modes, FullLossGradcheck,
                         ::testing::Values(Mode::kBase, Mode::kBi, Mode::kCb, Mode::kCa, Mode::kEn, Mode::kIn),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(EdgeAttributes, BilinearPathGradcheckAndZeroInput) {
  Tiny t(Mode::kEn);
  Rng rng(12);
  auto zh = testing::random_tensor(3, 16, rng);
  auto zd = testing::random_tensor(3, 16, rng);
  auto f = [&] {
    auto pred = t.parser.edge_attributes(zh, zd);
    return ad::add(ad::sum(pred.value), ad::sum(ad::sigmoid(pred.mask)));
  };
  EXPECT_LE(testing::gradcheck(f, {zh, zd}).max_rel_error, 1e-4);

  auto same = t.parser.edge_attributes(zh, zh);
  for (double v : same.value.data()) EXPECT_TRUE(std::isfinite(v));

  // Zero inputs leave only the biases.
  auto zero = ad::Tensor::zeros(1, 16);
  auto pred = t.parser.edge_attributes(zero, zero);
  auto b = ad::relu(t.parser.params().at("decoder.edge_attr.bilinear.b"));
  auto h = ad::relu(ad::add(ad::matmul(b, t.parser.params().at("decoder.edge_attr.value.hidden.w")),
                            t.parser.params().at("decoder.edge_attr.value.hidden.b")));
  auto expected = ad::add(ad::matmul(h, t.parser.params().at("decoder.edge_attr.value.out.w")),
                          t.parser.params().at("decoder.edge_attr.value.out.b"));
  EXPECT_LT(testing::max_abs_diff(pred.value, expected), 1e-15);
}

TEST(ModeSeparation, BaseHasNoSyntaxGradientAndBiNoDecoder) {
  Tiny base(Mode::kBase);
  ad::backward(base.parser.compute_loss({&base.ex}, false).total);
  EXPECT_EQ(base.parser.params().grad_norm("syntax."), 0.0);
  EXPECT_GT(base.parser.params().grad_norm("decoder."), 0.0);

  Tiny bi(Mode::kBi);
  ad::backward(bi.parser.compute_loss({&bi.ex}, false).total);
  EXPECT_EQ(bi.parser.params().grad_norm("decoder."), 0.0);
  EXPECT_GT(bi.parser.params().grad_norm("syntax."), 0.0);
  for (const auto& [name, p] : bi.parser.params().all()) EXPECT_NE(name.rfind("decoder.", 0), 0u) << name;
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  Tiny t(Mode::kIn, 9);
  const auto path = (std::filesystem::temp_directory_path() / "udsp_model.ckpt").string();
  t.parser.save(path);
  Parser back = Parser::load(path);
  EXPECT_EQ(back.vocab(), t.parser.vocab());
  EXPECT_EQ(config_to_json(back.config()), config_to_json(t.parser.config()));
  ASSERT_EQ(back.params().size(), t.parser.params().size());
  for (const auto& [name, p] : t.parser.params().all()) EXPECT_TRUE(bit_equal(p, back.params().at(name))) << name;
  std::filesystem::remove(path);
}

TEST(Transfer, EncoderOnlyLeavesBiaffineFresh) {
  Tiny src(Mode::kEn, 1), dst(Mode::kEn, 2);
  transfer_init(dst.parser, src.parser, {Component::kEncoder});
  EXPECT_TRUE(bit_equal(dst.parser.params().at("encoder.layer0.attn.wq"), src.parser.params().at("encoder.layer0.attn.wq")));
  EXPECT_FALSE(bit_equal(dst.parser.params().at("syntax.arc_u"), src.parser.params().at("syntax.arc_u")));
  EXPECT_FALSE(bit_equal(dst.parser.params().at("decoder.switch.w"), src.parser.params().at("decoder.switch.w")));
}

TEST(Transfer, EncoderAndBiaffineReproduceSourceOutputs) {
  Tiny src(Mode::kEn, 1);
  auto cfg = testing::tiny_config(Mode::kBase);
  Parser dst(cfg, src.fx.vocab, 99);
  Parser bi(testing::tiny_config(Mode::kBi), src.fx.vocab, 98);
  transfer_init(bi, src.parser, {Component::kEncoder, Component::kSyntacticBiaffine});
  auto a = src.parser.encode(src.ex.tokens, src.ex.upos, false);
  auto b = bi.encode(src.ex.tokens, src.ex.upos, false);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_TRUE(bit_equal(src.parser.syntactic_biaffine(a, false).scores, bi.syntactic_biaffine(b, false).scores));
  transfer_init(dst, src.parser, {Component::kEncoder});
  EXPECT_TRUE(bit_equal(a, dst.encode(src.ex.tokens, src.ex.upos, false)));
}

TEST(Transfer, VocabularyMismatchRemapsByNameWithWarning) {
  Tiny src(Mode::kEn, 1);
  Corpus other = synthetic_corpus({.sentences = 6}, 3);
  other.entries.push_back(src.fx.corpus.entries[0]);
  auto vocab = build_vocab(other, 1);
  Parser dst(testing::tiny_config(Mode::kEn), vocab, 5);
  std::vector<std::string> warnings;
  transfer_init(dst, src.parser, {Component::kEncoder}, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  const auto& s = src.parser.params().at("encoder.embed.token");
  const auto& d = dst.params().at("encoder.embed.token");
  const int i = vocab.tokens.id("boy"), j = src.fx.vocab.tokens.id("boy");
  for (std::size_t c = 0; c < d.cols(); ++c) EXPECT_EQ(d.at(i, c), s.at(j, c));
}

TEST(Transfer, ShapeMismatchNamesParameter) {
  Tiny src(Mode::kEn, 1);
  auto cfg = testing::tiny_config(Mode::kEn);
  cfg.d_ff = 24;
  Parser dst(cfg, src.fx.vocab, 2);
  try {
    transfer_init(dst, src.parser, {Component::kEncoder});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.layer0.ff"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace udsp
