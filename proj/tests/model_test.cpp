#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "oracle.hpp"
#include "vulnir/model.hpp"
#include "vulnir/rng.hpp"

namespace {

using vulnir::Mat;
using vulnir::ModelConfig;
using vulnir::TransformerModel;

Mat<double> random_mat(vulnir::Rng& rng, std::int64_t rows, std::int64_t cols, double scale) {
  Mat<double> m(rows, cols);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m(r, c) = rng.uniform(-scale, scale);
  return m;
}

TEST(PositionalEncoding, RowZeroAlternatesZeroOne) {
  const auto pe = vulnir::positional_encoding<double>(3, 6);
  for (int c = 0; c < 6; c += 2) {
    EXPECT_DOUBLE_EQ(pe(0, c), 0.0);
    EXPECT_DOUBLE_EQ(pe(0, c + 1), 1.0);
  }
}

TEST(PositionalEncoding, KnownRowD4Pos1) {
  const auto pe = vulnir::positional_encoding<double>(2, 4);
  EXPECT_NEAR(pe(1, 0), 0.841471, 1e-5);
  EXPECT_NEAR(pe(1, 1), 0.540302, 1e-5);
  EXPECT_NEAR(pe(1, 2), 0.010000, 1e-5);
  EXPECT_NEAR(pe(1, 3), 0.999950, 1e-5);
}

TEST(PositionalEncoding, EntriesBoundedAndRowsDistinct) {
  const auto pe = vulnir::positional_encoding<double>(64, 16);
  EXPECT_LE(pe.maxCoeff(), 1.0);
  EXPECT_GE(pe.minCoeff(), -1.0);
  for (int a = 0; a < 64; ++a)
    for (int b = a + 1; b < 64; ++b)
      EXPECT_GT((pe.row(a) - pe.row(b)).norm(), 0.0) << a << " vs " << b;
}

TEST(PositionalEncoding, OddDimensionThrows) {
  EXPECT_THROW(vulnir::positional_encoding<double>(4, 5), vulnir::OddDimension);
}

TEST(Attention, SingleRowReturnsV) {
  Mat<double> q(1, 3), k(1, 3), v(1, 4);
  q << 0.3, -1.0, 2.0;
  k << 0.5, 0.5, 0.5;
  v << 1.0, 2.0, 3.0, 4.0;
  const auto res = vulnir::attention(q, k, v, {1});
  EXPECT_TRUE(res.output.isApprox(v));
  EXPECT_DOUBLE_EQ(res.probs(0, 0), 1.0);
}

TEST(Attention, ZeroQueriesGiveUniformMeanOfUnmasked) {
  vulnir::Rng rng(3);
  Mat<double> q = Mat<double>::Zero(4, 2);
  Mat<double> k = random_mat(rng, 4, 2, 1.0);
  Mat<double> v = random_mat(rng, 4, 3, 1.0);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1};
  const auto res = vulnir::attention(q, k, v, mask);
  const Mat<double> mean = (v.row(0) + v.row(1) + v.row(3)) / 3.0;
  for (int r = 0; r < 4; ++r) EXPECT_TRUE(res.output.row(r).isApprox(mean, 1e-12)) << r;
}

TEST(Attention, KnownTwoTokenValue) {
  Mat<double> q(2, 1), k(2, 1), v(2, 2);
  q << 1, 0;
  k << 1, 0;
  v << 1, 0, 0, 1;
  const auto res = vulnir::attention(q, k, v, {1, 1});
  EXPECT_NEAR(res.output(0, 0), 0.731059, 1e-5);
  EXPECT_NEAR(res.output(0, 1), 0.268941, 1e-5);
}

TEST(Attention, ShapeMismatchThrows) {
  Mat<double> q(2, 3), k(3, 3), v(3, 2);
  q.setZero();
  k.setZero();
  v.setZero();
  EXPECT_THROW(vulnir::attention(q, k, v, std::vector<std::uint8_t>(3, 1)),
               vulnir::ShapeMismatch);
  Mat<double> q2(3, 2);
  q2.setZero();
  EXPECT_THROW(vulnir::attention(q2, k, v, std::vector<std::uint8_t>(3, 1)),
               vulnir::ShapeMismatch);
  Mat<double> q3(3, 3);
  q3.setZero();
  EXPECT_THROW(vulnir::attention(q3, k, v, std::vector<std::uint8_t>(2, 1)),
               vulnir::ShapeMismatch);
}

// acceptance criterion C3 runs the same property; kept here so the module
// suite stands alone
TEST(Attention, HundredRandomShapesRowStochasticUnderMask) {
  vulnir::Rng rng(99);
  for (int iter = 0; iter < 100; ++iter) {
    const auto len = 1 + static_cast<std::int64_t>(rng.bounded(12));
    const auto dk = 1 + static_cast<std::int64_t>(rng.bounded(8));
    Mat<double> q = random_mat(rng, len, dk, 2.0);
    Mat<double> k = random_mat(rng, len, dk, 2.0);
    Mat<double> v = random_mat(rng, len, 3, 1.0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(len), 1);
    for (auto& m : mask)
      if (rng.bounded(4) == 0) m = 0;
    mask[rng.bounded(static_cast<std::uint64_t>(len))] = 1;  // at least one key attendable
    const auto res = vulnir::attention(q, k, v, mask);
    for (std::int64_t r = 0; r < len; ++r) {
      double unmasked_sum = 0.0;
      for (std::int64_t c = 0; c < len; ++c) {
        if (mask[static_cast<std::size_t>(c)]) {
          unmasked_sum += res.probs(r, c);
        } else {
          EXPECT_LE(res.probs(r, c), 1e-12);
        }
      }
      EXPECT_NEAR(unmasked_sum, 1.0, 1e-6);
    }
  }
}

TEST(MultiHeadAttention, OneHeadIdentityProjectionEqualsAttention) {
  vulnir::Rng rng(7);
  const int d = 6, len = 5;
  vulnir::EncoderBlockWeights<double> w;
  w.w_q = random_mat(rng, d, d, 0.5);
  w.w_k = random_mat(rng, d, d, 0.5);
  w.w_v = random_mat(rng, d, d, 0.5);
  w.w_o = Mat<double>::Identity(d, d);
  Mat<double> e = random_mat(rng, len, d, 1.0);
  const std::vector<std::uint8_t> mask(len, 1);
  const auto direct = vulnir::attention<double>(e * w.w_q, e * w.w_k, e * w.w_v, mask);
  const auto mha = vulnir::multi_head_attention(e, w, 1, mask);
  EXPECT_TRUE(mha.isApprox(direct.output, 1e-12));
}

TEST(MultiHeadAttention, ZeroProjectionsGiveZero) {
  vulnir::EncoderBlockWeights<double> w;
  const int d = 4;
  w.w_q = Mat<double>::Zero(d, d);
  w.w_k = Mat<double>::Zero(d, d);
  w.w_v = Mat<double>::Zero(d, d);
  w.w_o = Mat<double>::Zero(d, d);
  Mat<double> e = Mat<double>::Ones(3, d);
  const auto out = vulnir::multi_head_attention(e, w, 2, {1, 1, 1});
  EXPECT_DOUBLE_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MultiHeadAttention, TwoHeadsMatchPerHeadOracle) {
  vulnir::Rng rng(11);
  const int d = 4, len = 5;
  vulnir::EncoderBlockWeights<double> w;
  w.w_q = random_mat(rng, d, d, 0.5);
  w.w_k = random_mat(rng, d, d, 0.5);
  w.w_v = random_mat(rng, d, d, 0.5);
  w.w_o = random_mat(rng, d, d, 0.5);
  Mat<double> e = random_mat(rng, len, d, 1.0);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 1};
  const auto got = vulnir::multi_head_attention(e, w, 2, mask);
  const auto want = oracle::mha(oracle::from_eigen(e), w, 2, mask);
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < d; ++c)
      EXPECT_NEAR(got(r, c), want[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)],
                  1e-12);
}

vulnir::EncoderBlockWeights<double> random_block(vulnir::Rng& rng, int d, int dff) {
  vulnir::EncoderBlockWeights<double> w;
  w.w_q = random_mat(rng, d, d, 0.5);
  w.w_k = random_mat(rng, d, d, 0.5);
  w.w_v = random_mat(rng, d, d, 0.5);
  w.w_o = random_mat(rng, d, d, 0.5);
  w.ff_w1 = random_mat(rng, d, dff, 0.5);
  w.ff_b1 = random_mat(rng, 1, dff, 0.5);
  w.ff_w2 = random_mat(rng, dff, d, 0.5);
  w.ff_b2 = random_mat(rng, 1, d, 0.5);
  w.ln1_gain = random_mat(rng, 1, d, 0.2);
  w.ln1_gain.array() += 1.0;
  w.ln1_bias = random_mat(rng, 1, d, 0.2);
  w.ln2_gain = random_mat(rng, 1, d, 0.2);
  w.ln2_gain.array() += 1.0;
  w.ln2_bias = random_mat(rng, 1, d, 0.2);
  return w;
}

TEST(EncoderBlock, PreservesShape) {
  vulnir::Rng rng(13);
  const auto w = random_block(rng, 8, 16);
  Mat<double> e = random_mat(rng, 7, 8, 1.0);
  const auto out = vulnir::encoder_block(e, w, 2, std::vector<std::uint8_t>(7, 1));
  EXPECT_EQ(out.rows(), e.rows());
  EXPECT_EQ(out.cols(), e.cols());
}

TEST(EncoderBlock, UnitGainZeroBiasRowsAreNormalized) {
  vulnir::Rng rng(17);
  auto w = random_block(rng, 8, 16);
  w.ln2_gain = Mat<double>::Ones(1, 8);
  w.ln2_bias = Mat<double>::Zero(1, 8);
  Mat<double> e = random_mat(rng, 5, 8, 1.0);
  const auto out = vulnir::encoder_block(e, w, 2, std::vector<std::uint8_t>(5, 1));
  for (int r = 0; r < out.rows(); ++r) EXPECT_NEAR(out.row(r).mean(), 0.0, 1e-6);
}

TEST(EncoderBlock, MatchesStraightLineOracle) {
  vulnir::Rng rng(19);
  const auto w = random_block(rng, 4, 8);
  Mat<double> e = random_mat(rng, 6, 4, 1.0);
  const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 1};
  const auto got = vulnir::encoder_block(e, w, 2, mask);
  const auto want = oracle::encoder_block(oracle::from_eigen(e), w, 2, mask);
  for (int r = 0; r < got.rows(); ++r)
    for (int c = 0; c < got.cols(); ++c) {
      const double a = got(r, c);
      const double b = want[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      EXPECT_LE(std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}), 1e-10);
    }
}

TEST(Classify, ZeroHeadGivesEvenOdds) {
  std::vector<vulnir::FcLayer<double>> head(1);
  head[0].w = Mat<double>::Zero(4, 2);
  head[0].b = Mat<double>::Zero(1, 2);
  Mat<double> h = Mat<double>::Ones(3, 4);
  const auto res = vulnir::classify(h, head);
  EXPECT_DOUBLE_EQ(res.logits(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(res.logits(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(res.prob, 0.5);
}

TEST(Classify, SingleLayerIsAffineOnClsRow) {
  vulnir::Rng rng(23);
  std::vector<vulnir::FcLayer<double>> head(1);
  head[0].w = random_mat(rng, 4, 2, 1.0);
  head[0].b = random_mat(rng, 1, 2, 1.0);
  Mat<double> h = random_mat(rng, 3, 4, 1.0);
  const auto res = vulnir::classify(h, head);
  const Mat<double> expect = h.row(0) * head[0].w + head[0].b;
  EXPECT_TRUE(res.logits.isApprox(expect, 1e-14));
}

TEST(Classify, KnownSoftmaxValue) {
  const auto pr = vulnir::softmax2(2.0, 0.0);
  EXPECT_NEAR(pr.second, 0.119203, 1e-5);
  EXPECT_NEAR(pr.first + pr.second, 1.0, 1e-15);
}

TEST(Classify, LogitShiftLeavesProbUnchanged) {
  vulnir::Rng rng(29);
  for (int i = 0; i < 50; ++i) {
    const double l0 = rng.uniform(-5, 5), l1 = rng.uniform(-5, 5);
    const double shift = rng.uniform(-100, 100);
    const auto a = vulnir::softmax2(l0, l1);
    const auto b = vulnir::softmax2(l0 + shift, l1 + shift);
    EXPECT_NEAR(a.second, b.second, 1e-12);
  }
}

ModelConfig toy_config(std::int32_t vocab, int d, int heads, int layers, int nfc) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.n_layers = layers;
  cfg.d_ff = 2 * d;
  cfg.max_len = 8;
  cfg.n_fc_layers = nfc;
  cfg.fc_hidden = d;
  cfg.dropout_rate = 0.0;
  return cfg;
}

TEST(Embed, ZeroTableIsolatesPositionalEncoding) {
  TransformerModel<double> model(toy_config(10, 4, 2, 1, 1), 1);
  model.embedding.setZero();
  const auto e = vulnir::embed<double>({5}, model);
  EXPECT_TRUE(e.row(0).isApprox(model.pe.row(0), 1e-15));
}

TEST(Embed, PermutingIdsPermutesRows) {
  TransformerModel<double> model(toy_config(10, 4, 2, 1, 1), 2);
  const auto ab = vulnir::embed<double>({3, 7}, model);
  const auto ba = vulnir::embed<double>({7, 3}, model);
  const auto pe = model.pe;
  EXPECT_TRUE((ab.row(0) - pe.row(0)).isApprox(ba.row(1) - pe.row(1), 1e-14));
  EXPECT_TRUE((ab.row(1) - pe.row(1)).isApprox(ba.row(0) - pe.row(0), 1e-14));
}

TEST(Embed, IdOutOfRangeThrows) {
  TransformerModel<double> model(toy_config(10, 4, 2, 1, 1), 3);
  EXPECT_THROW(vulnir::embed<double>({10}, model), vulnir::IdOutOfRange);
}

TEST(Forward, DeterministicWithDropoutOff) {
  TransformerModel<double> model(toy_config(12, 8, 2, 2, 2), 5);
  const std::vector<std::int32_t> ids = {3, 2, 4, 9, 2};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1};
  const auto a = vulnir::forward(ids, mask, model);
  const auto b = vulnir::forward(ids, mask, model);
  EXPECT_EQ(a.logits(0, 0), b.logits(0, 0));
  EXPECT_EQ(a.logits(0, 1), b.logits(0, 1));
  EXPECT_EQ(a.prob, b.prob);
}

TEST(Forward, PadTailContentCannotLeak) {
  TransformerModel<double> model(toy_config(12, 8, 2, 2, 2), 6);
  const std::vector<std::int32_t> base = {3, 2, 4, 9, 2, 0, 0, 0};
  const std::vector<std::int32_t> garbage = {3, 2, 4, 9, 2, 7, 11, 5};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 0, 0, 0};
  const auto a = vulnir::forward(base, mask, model);
  const auto b = vulnir::forward(garbage, mask, model);
  EXPECT_NEAR(a.prob, b.prob, 1e-9);
  EXPECT_NEAR(a.logits(0, 0), b.logits(0, 0), 1e-9);
  EXPECT_NEAR(a.logits(0, 1), b.logits(0, 1), 1e-9);
}

TEST(Forward, ProbStrictlyInsideUnitInterval) {
  TransformerModel<double> model(toy_config(12, 8, 2, 2, 3), 7);
  vulnir::Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    std::vector<std::int32_t> ids = {3, 2};
    const auto extra = rng.bounded(5);
    for (std::uint64_t t = 0; t < extra; ++t)
      ids.push_back(static_cast<std::int32_t>(4 + rng.bounded(8)));
    ids.push_back(2);
    const std::vector<std::uint8_t> mask(ids.size(), 1);
    const auto res = vulnir::forward(ids, mask, model);
    EXPECT_GT(res.prob, 0.0);
    EXPECT_LT(res.prob, 1.0);
    EXPECT_TRUE(std::isfinite(res.logits(0, 0)));
    EXPECT_TRUE(std::isfinite(res.logits(0, 1)));
  }
}

// acceptance criterion C2 runs the same oracle at >= 20 inputs; the module
// suite keeps an independent copy with varied architectures
TEST(Forward, MatchesStraightLineOracleOnRandomToyModels) {
  vulnir::Rng rng(37);
  int checked = 0;
  for (int m = 0; m < 6; ++m) {
    const int d = (m % 2 == 0) ? 4 : 8;
    const int heads = (m % 3 == 0) ? 1 : 2;
    const int layers = 1 + (m % 2);
    const int nfc = 1 + (m % 3);
    TransformerModel<double> model(toy_config(12, d, heads, layers, nfc),
                                   1000 + static_cast<std::uint64_t>(m));
    for (int i = 0; i < 4; ++i) {
      std::vector<std::int32_t> ids = {3, 2};
      const auto extra = rng.bounded(4);
      for (std::uint64_t t = 0; t < extra; ++t)
        ids.push_back(static_cast<std::int32_t>(4 + rng.bounded(8)));
      ids.push_back(2);
      const std::size_t n = ids.size();
      std::vector<std::uint8_t> mask(n, 1);
      if (n > 3 && rng.bounded(2) == 0) mask[n - 1] = 0;
      const auto got = vulnir::forward(ids, mask, model);
      const auto want = oracle::forward(ids, mask, model);
      const auto rel = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
      };
      EXPECT_LE(rel(got.logits(0, 0), want.logit0), 1e-10);
      EXPECT_LE(rel(got.logits(0, 1), want.logit1), 1e-10);
      EXPECT_LE(rel(got.prob, want.prob), 1e-10);
      ++checked;
    }
  }
  EXPECT_GE(checked, 20);
}

TEST(ModelConfig, ValidationRejectsBadShapes) {
  ModelConfig cfg = toy_config(10, 8, 2, 1, 1);
  cfg.n_heads = 3;  // does not divide d_model
  EXPECT_THROW(cfg.validate(), vulnir::ConfigError);
  cfg = toy_config(10, 7, 1, 1, 1);  // odd d_model breaks the PE layout
  EXPECT_THROW(cfg.validate(), vulnir::ConfigError);
  cfg = toy_config(10, 8, 2, 1, 0);
  EXPECT_THROW(cfg.validate(), vulnir::ConfigError);
  cfg = toy_config(10, 8, 2, 1, 1);
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(cfg.validate(), vulnir::ConfigError);
}

TEST(ModelConfig, PresetsDifferOnlyInDepth) {
  const auto bert = ModelConfig::bert_like();
  const auto distil = ModelConfig::distilbert_like();
  EXPECT_EQ(bert.d_model, 128);
  EXPECT_EQ(bert.n_heads, 4);
  EXPECT_EQ(bert.d_ff, 256);
  EXPECT_EQ(bert.max_len, 512);
  EXPECT_EQ(bert.n_layers, 4);
  EXPECT_EQ(distil.n_layers, 2);
  EXPECT_EQ(distil.d_model, bert.d_model);
  EXPECT_EQ(distil.max_len, bert.max_len);
}

TEST(DropoutMask, InvertedScalingKeepsExpectation) {
  vulnir::Rng rng(41);
  vulnir::DropoutCtx ctx;
  ctx.rate = 0.25;
  ctx.rng = &rng;
  const auto mask = vulnir::draw_dropout_mask<double>(200, 50, ctx);
  double kept = 0;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c) {
      if (mask(r, c) != 0.0) {
        EXPECT_NEAR(mask(r, c), 1.0 / 0.75, 1e-12);
        kept += 1;
      }
    }
  EXPECT_NEAR(kept / (200.0 * 50.0), 0.75, 0.02);
}

}  // namespace
