#include <gtest/gtest.h>

#include <numeric>

#include "sudormrf/error.hpp"
#include "sudormrf/kernels.hpp"
#include "test_util.hpp"

namespace sudormrf {
namespace {

namespace kn = kernels;
using testing::max_abs_diff;
using testing::randn;

// Direct summation: y[o, l] = b[o] + sum_c sum_k w[o, c, k] x[c, S l + k - off].
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                           std::size_t stride, std::size_t groups, std::size_t off) {
  const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0), cg = w.dim(1), k = w.dim(2);
  const std::size_t lout = len / stride, og = cout / groups;
  Tensor<double> y(Shape{cout, lout});
  for (std::size_t o = 0; o < cout; ++o) {
    const std::size_t g = o / og;
    for (std::size_t l = 0; l < lout; ++l) {
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t c = 0; c < cg; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
          const long long t = static_cast<long long>(stride * l + j) - static_cast<long long>(off);
          if (t >= 0 && t < static_cast<long long>(len)) acc += w.at(o, c, j) * x.at(g * cg + c, t);
        }
      }
      y.at(o, l) = acc;
    }
  }
  (void)cin;
  return y;
}

TEST(Conv1d, WorkedStrideTwoExample) {
  const Tensor<double> x(Shape{1, 4}, {1, 2, 3, 4});
  const Tensor<double> w(Shape{1, 1, 2}, {1, 1});
  const Tensor<double> y = kn::conv1d(x, w, static_cast<const Tensor<double>*>(nullptr),
                                      kn::ConvGeom{2, 1, kn::Padding::kLookahead});
  ASSERT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], 7.0);
}

TEST(Conv1d, PaddingOffsets) {
  EXPECT_EQ(kn::pad_offset(kn::Padding::kSymmetric, 5), 2u);
  EXPECT_EQ(kn::pad_offset(kn::Padding::kSymmetric, 21), 10u);
  EXPECT_EQ(kn::pad_offset(kn::Padding::kCausal, 5), 4u);
  EXPECT_EQ(kn::pad_offset(kn::Padding::kLookahead, 5), 0u);
}

TEST(Conv1d, MatchesDirectSummationOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(1, 5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t groups = trial % 3 == 0 ? 2 : 1;
    const std::size_t cin = groups * pick(rng), cout = groups * pick(rng);
    const std::size_t k = pick(rng) + (trial % 4 == 0 ? 8 : 0), stride = pick(rng) % 3 + 1;
    const std::size_t len = stride * (pick(rng) + 2) + trial % 2;
    const auto pad = static_cast<kn::Padding>(trial % 3);
    const Tensor<double> x = randn(Shape{cin, len}, rng);
    const Tensor<double> w = randn(Shape{cout, cin / groups, k}, rng);
    const Tensor<double> b = randn(Shape{cout}, rng);
    const Tensor<double> y = kn::conv1d(x, w, &b, kn::ConvGeom{stride, groups, pad});
    const Tensor<double> ref = conv_oracle(x, w, &b, stride, groups, kn::pad_offset(pad, k));
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(y, ref), 1e-12) << "trial " << trial;
  }
}

TEST(Conv1d, BatchedInputMatchesPerItem) {
  std::mt19937_64 rng(3);
  const Tensor<double> x = randn(Shape{3, 2, 20}, rng);
  const Tensor<double> w = randn(Shape{4, 2, 3}, rng);
  const Tensor<double> y = kn::conv1d(x, w, static_cast<const Tensor<double>*>(nullptr), kn::ConvGeom{});
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor<double> xb(Shape{2, 20});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 20; ++t) xb.at(c, t) = x.at(b, c, t);
    const Tensor<double> ref = conv_oracle(xb, w, nullptr, 1, 1, 1);
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t t = 0; t < 20; ++t) EXPECT_DOUBLE_EQ(y.at(b, o, t), ref.at(o, t));
  }
}

TEST(Conv1d, RejectsMismatchedChannels) {
  const Tensor<double> x(Shape{3, 10});
  const Tensor<double> w(Shape{2, 2, 3});
  EXPECT_THROW(kn::conv1d(x, w, static_cast<const Tensor<double>*>(nullptr), kn::ConvGeom{}), ShapeError);
}

// Transposed conv as the explicit transpose of the conv matrix.
TEST(ConvTranspose1d, EqualsTransposedConvMatrix) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t groups = trial % 2 + 1, cin = 2 * groups, cout = groups, k = 3 + trial % 5;
    const std::size_t stride = 1 + trial % 3, len = stride * 6;
    const auto pad = static_cast<kn::Padding>(trial % 3);
    const std::size_t off = kn::pad_offset(pad, k);
    // conv: [cin, len] -> [cout, len / stride] with weight [cout, cin / groups, k].
    const Tensor<double> w = randn(Shape{cout, cin / groups, k}, rng);
    const std::size_t n_in = cin * len, n_out = cout * (len / stride);
    std::vector<double> m(n_out * n_in, 0.0);
    for (std::size_t i = 0; i < n_in; ++i) {
      Tensor<double> e(Shape{cin, len});
      e[i] = 1.0;
      const Tensor<double> col = conv_oracle(e, w, nullptr, stride, groups, off);
      for (std::size_t r = 0; r < n_out; ++r) m[r * n_in + i] = col[r];
    }
    const Tensor<double> v = randn(Shape{cout, len / stride}, rng);
    const Tensor<double> y =
        kn::conv_transpose1d_raw(v, w, static_cast<const Tensor<double>*>(nullptr), stride, groups, off, len);
    ASSERT_EQ(y.shape(), (Shape{cin, len}));
    for (std::size_t i = 0; i < n_in; ++i) {
      double ref = 0.0;
      for (std::size_t r = 0; r < n_out; ++r) ref += m[r * n_in + i] * v[r];
      EXPECT_NEAR(y[i], ref, 1e-12) << "trial " << trial << " index " << i;
    }
  }
}

TEST(ConvTranspose1d, DecoderGeometryOverlapAdds) {
  // One channel in, kernel 4, stride 2, no offset: frame l writes [2l, 2l + 4).
  const Tensor<double> x(Shape{1, 3}, {1, 10, 100});
  const Tensor<double> w(Shape{1, 1, 4}, {1, 2, 3, 4});
  const Tensor<double> y = kn::conv_transpose1d(x, w, static_cast<const Tensor<double>*>(nullptr),
                                                kn::ConvGeom{2, 1, kn::Padding::kLookahead});
  const std::vector<double> expect{1, 2, 13, 24, 130, 240};
  ASSERT_EQ(y.numel(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]);
}

TEST(DepthwiseConv1d, BitExactWithGroupedConv) {
  std::mt19937_64 rng(9);
  for (auto pad : {kn::Padding::kSymmetric, kn::Padding::kCausal}) {
    for (std::size_t stride : {1u, 2u}) {
      const Tensor<float> x = randn<float>(Shape{6, 37}, rng);
      const Tensor<float> w = randn<float>(Shape{6, 1, 5}, rng);
      const Tensor<float> b = randn<float>(Shape{6}, rng);
      const Tensor<float> a = kn::depthwise_conv1d(x, w, &b, stride, pad);
      const Tensor<float> g = kn::conv1d(x, w, &b, kn::ConvGeom{stride, 6, pad});
      EXPECT_TRUE(a == g);
    }
  }
}

TEST(Activations, ReluAndPrelu) {
  const Tensor<double> x(Shape{2, 3}, {-2, 0, 3, -1, 1, -4});
  const Tensor<double> r = kn::relu(x);
  EXPECT_EQ(r.data()[0], 0.0);
  EXPECT_EQ(r.data()[2], 3.0);
  const Tensor<double> shared = kn::prelu(x, Tensor<double>(Shape{1}, {0.25}));
  EXPECT_DOUBLE_EQ(shared[0], -0.5);
  EXPECT_DOUBLE_EQ(shared[4], 1.0);
  const Tensor<double> per = kn::prelu(x, Tensor<double>(Shape{2}, {0.5, 0.1}));
  EXPECT_DOUBLE_EQ(per[0], -1.0);
  EXPECT_DOUBLE_EQ(per[5], -0.4);
  EXPECT_THROW(kn::prelu(x, Tensor<double>(Shape{3}, 0.1)), ShapeError);
}

TEST(Normalization, GlobalNormHasZeroMeanUnitVariance) {
  std::mt19937_64 rng(4);
  const Tensor<double> x = randn(Shape{8, 50}, rng, 3.0);
  const Tensor<double> y =
      kn::global_layer_norm(x, Tensor<double>(Shape{8}, 1.0), Tensor<double>(Shape{8}, 0.0));
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 400.0;
  double var = 0.0;
  for (double v : y.data()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var / 400.0, 1.0, 1e-8);
}

TEST(Normalization, LayerNormIsPerChannelOverTime) {
  std::mt19937_64 rng(6);
  const Tensor<double> x = randn(Shape{16, 12}, rng, 2.0);
  const Tensor<double> y = kn::layer_norm(x, Tensor<double>(Shape{16}, 1.0), Tensor<double>(Shape{16}, 0.0));
  for (std::size_t c = 0; c < 16; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t t = 0; t < 12; ++t) m += y.at(c, t);
    m /= 12.0;
    for (std::size_t t = 0; t < 12; ++t) v += (y.at(c, t) - m) * (y.at(c, t) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 12.0, 1.0, 1e-8);
  }
}

TEST(Normalization, SingleChannelGlobalEqualsLayer) {
  std::mt19937_64 rng(7);
  const Tensor<double> x = randn(Shape{1, 40}, rng);
  const Tensor<double> g(Shape{1}, 1.5), s(Shape{1}, 0.2);
  EXPECT_TRUE(kn::layer_norm(x, g, s) == kn::global_layer_norm(x, g, s));
}

TEST(Normalization, AffineAppliesPerChannel) {
  std::mt19937_64 rng(8);
  const Tensor<double> x = randn(Shape{2, 30}, rng);
  const Tensor<double> plain = kn::global_layer_norm(x, Tensor<double>(Shape{2}, 1.0), Tensor<double>(Shape{2}));
  const Tensor<double> y =
      kn::global_layer_norm(x, Tensor<double>(Shape{2}, {2.0, -1.0}), Tensor<double>(Shape{2}, {0.5, 3.0}));
  for (std::size_t t = 0; t < 30; ++t) {
    EXPECT_NEAR(y.at(0, t), 2.0 * plain.at(0, t) + 0.5, 1e-12);
    EXPECT_NEAR(y.at(1, t), -plain.at(1, t) + 3.0, 1e-12);
  }
}

TEST(Interp, NearestRepeatsAndClamps) {
  const Tensor<double> x(Shape{1, 3}, {1, 2, 3});
  const Tensor<double> y = kn::nearest_interp(x, 2, 7);
  const std::vector<double> expect{1, 1, 2, 2, 3, 3, 3};
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(y[i], expect[i]);
  const Tensor<double> g = kn::nearest_interp_vjp(Tensor<double>(Shape{1, 7}, 1.0), 2, 3);
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[2], 3.0);
}

TEST(Softmax, MasksSumToOneAcrossSources) {
  std::mt19937_64 rng(12);
  const Tensor<double> z = randn(Shape{3, 4, 9}, rng, 5.0);
  const Tensor<double> m = kn::softmax_sources(z);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t t = 0; t < 9; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_GT(m.at(i, c, t), 0.0);
        s += m.at(i, c, t);
      }
      EXPECT_NEAR(s, 1.0, 1e-15);
    }
  }
}

TEST(Softmax, StableForLargeLogits) {
  const Tensor<double> z(Shape{2, 1, 1}, {1000.0, 999.0});
  const Tensor<double> m = kn::softmax_sources(z);
  EXPECT_TRUE(m.all_finite());
  EXPECT_NEAR(m[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(GroupAttention, UniformWeightsWithZeroProjections) {
  // Zero query/key projections give uniform weights: every group receives
  // the mean of all groups, scaled by the gain, added residually.
  std::mt19937_64 rng(2);
  const std::size_t g = 3, d = 2, len = 5;
  const Tensor<double> x = randn(Shape{g, d, len}, rng);
  const Tensor<double> zero_w(Shape{d, d}), zero_b(Shape{d});
  const Tensor<double> gain(Shape{d}, 1.0);
  const Tensor<double> y = kn::group_attention(x, zero_w, zero_b, zero_w, zero_b, gain);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t t = 0; t < len; ++t) {
      double mean = 0.0;
      for (std::size_t h = 0; h < g; ++h) mean += x.at(h, c, t) / g;
      for (std::size_t h = 0; h < g; ++h) EXPECT_NEAR(y.at(h, c, t), x.at(h, c, t) + mean, 1e-12);
    }
  }
}

TEST(Elementwise, MulBroadcastsOverBatch) {
  const Tensor<double> a(Shape{2, 1, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor<double> b(Shape{1, 3}, {10, 20, 30});
  const Tensor<double> y = kn::mul(a, b);
  EXPECT_EQ(y.at(1, 0, 2), 180.0);
  const Tensor<double> s = kn::add(a, a);
  EXPECT_EQ(s.at(1, 0, 0), 8.0);
  const Tensor<double> t = kn::transpose(Tensor<double>(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t.at(2, 1), 6.0);
}

}  // namespace
}  // namespace sudormrf
