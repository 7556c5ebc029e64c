#include <gtest/gtest.h>

#include "sudormrf/autodiff.hpp"
#include "sudormrf/gradcheck.hpp"
#include "sudormrf/kernels.hpp"
#include "test_util.hpp"

namespace sudormrf {
namespace {

namespace kn = kernels;
using testing::randn;

TEST(FlopCount, DenseConvClosedForm) {
  std::mt19937_64 rng(1);
  FlopRecorder rec;
  const Tensor<float> x = randn<float>(Shape{6, 40}, rng);
  const Tensor<float> w = randn<float>(Shape{8, 3, 5}, rng);
  const Tensor<float> b(Shape{8});
  kn::conv1d(x, w, &b, kn::ConvGeom{2, 2, kn::Padding::kSymmetric}, &rec);
  // C_out * (C_in / g) * K * L_out MACs plus one bias add per output.
  EXPECT_EQ(rec.macs(), 8u * 3 * 5 * 20);
  EXPECT_EQ(rec.elementwise(), 8u * 20);
  EXPECT_EQ(rec.tally(OpKind::kConv1d).calls, 1u);
}

TEST(FlopCount, DepthwiseUnderBothConventions) {
  FlopRecorder rec;
  const Tensor<float> x(Shape{512, 800});
  const Tensor<float> w(Shape{512, 1, 5});
  const Tensor<float> b(Shape{512});
  kn::depthwise_conv1d(x, w, &b, 2, kn::Padding::kSymmetric, &rec);
  const std::uint64_t macs = 512u * 5 * 400, bias = 512u * 400;
  EXPECT_EQ(rec.flops(), macs + bias);
  EXPECT_EQ(rec.flops(FlopConvention{2}), 2 * macs + bias);
}

TEST(FlopCount, ConvWithoutBiasHasNoElementwise) {
  FlopRecorder rec;
  kn::conv1d(Tensor<float>(Shape{1, 100}), Tensor<float>(Shape{4, 1, 21}), static_cast<const Tensor<float>*>(nullptr),
             kn::ConvGeom{10, 1, kn::Padding::kSymmetric}, &rec);
  EXPECT_EQ(rec.macs(), 4u * 21 * 10);
  EXPECT_EQ(rec.elementwise(), 0u);
}

TEST(FlopCount, ElementwiseWeights) {
  FlopRecorder rec;
  const Tensor<float> x(Shape{4, 10}, 1.0f);
  kn::relu(x, &rec);
  kn::global_layer_norm(x, Tensor<float>(Shape{4}, 1.0f), Tensor<float>(Shape{4}), &rec);
  kn::softmax_sources(Tensor<float>(Shape{2, 4, 10}), &rec);
  EXPECT_EQ(rec.tally(OpKind::kRelu).elementwise, 40u * op_cost::kRelu);
  EXPECT_EQ(rec.tally(OpKind::kGlobalLayerNorm).elementwise, 40u * op_cost::kNorm);
  EXPECT_EQ(rec.tally(OpKind::kSoftmax).elementwise, 80u * op_cost::kSoftmax);
  EXPECT_EQ(rec.macs(), 0u);
}

TEST(FlopCount, AttentionMatchesClosedForm) {
  FlopRecorder rec;
  const std::size_t g = 4, d = 3, len = 7;
  const Tensor<float> x(Shape{g, d, len}, 0.5f);
  const Tensor<float> w(Shape{d, d}, 0.1f), b(Shape{d}), gain(Shape{d}, 1.0f);
  kn::group_attention(x, w, b, w, b, gain, nullptr, &rec);
  EXPECT_EQ(rec.macs(), 2 * g * d * d + g * g * d + g * g * d * len);
  EXPECT_EQ(rec.macs(), kn::group_attention_macs(g, d, len));
  EXPECT_EQ(rec.elementwise(), kn::group_attention_elementwise(g, d, len));
}

TEST(FlopCount, RecorderMergeAndReset) {
  FlopRecorder a, b;
  a.record(OpKind::kAdd, 0, 5);
  b.record(OpKind::kConv1d, 7, 1);
  a += b;
  EXPECT_EQ(a.flops(), 13u);
  EXPECT_EQ(a.tally(OpKind::kConv1d).macs, 7u);
  a.reset();
  EXPECT_EQ(a.flops(), 0u);
}

TEST(Autodiff, ChainOfOpsMatchesHandDerivative) {
  // L = sum(relu(w * x) + x), with x constant and w a leaf.
  ad::Context<double> ctx(true);
  const Tensor<double> xv(Shape{1, 4}, {-1, 2, -3, 4});
  Tensor<double> wv(Shape{1, 4}, {2, 2, -1, 0.5});
  auto x = ctx.constant(xv);
  auto w = ctx.parameter(wv);
  auto y = ad::add(ctx, ad::relu(ctx, ad::mul(ctx, w, x)), x);
  double total = 0.0;
  for (double v : y->val().data()) total += v;
  auto loss = ad::scalar_objective<double>(ctx, y, total, [&](double up) {
    return Tensor<double>(Shape{1, 4}, up);
  });
  ad::backward(loss);
  // d/dw relu(w x) = x where w x > 0.
  const std::vector<double> expect{0, 2, -3, 4};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w->grad[i], expect[i]);
  EXPECT_TRUE(x->grad.empty());
}

TEST(Autodiff, FanOutAccumulates) {
  ad::Context<double> ctx(true);
  Tensor<double> av(Shape{1, 2}, {3, 5});
  auto a = ctx.parameter(av);
  auto y = ad::mul(ctx, a, a);  // a^2
  auto loss = ad::scalar_objective<double>(ctx, y, y->val()[0] + y->val()[1],
                                           [](double up) { return Tensor<double>(Shape{1, 2}, up); });
  ad::backward(loss);
  EXPECT_DOUBLE_EQ(a->grad[0], 6.0);
  EXPECT_DOUBLE_EQ(a->grad[1], 10.0);
}

TEST(Autodiff, NoGradContextKeepsNoParents) {
  ad::Context<double> ctx(false);
  auto a = ctx.input(Tensor<double>(Shape{1, 2}, 1.0));
  auto y = ad::relu(ctx, a);
  EXPECT_FALSE(a->requires_grad);
  EXPECT_TRUE(y->parents.empty());
}

TEST(Autodiff, BackwardFlopsCountedOnContextRecorder) {
  std::mt19937_64 rng(2);
  FlopRecorder rec;
  ad::Context<double> ctx(true, &rec);
  const Tensor<double> xv = randn(Shape{2, 16}, rng);
  Tensor<double> wv = randn(Shape{3, 2, 3}, rng);
  auto y = ad::conv1d(ctx, ctx.constant(xv), ctx.parameter(wv), ad::Var<double>{}, kn::ConvGeom{});
  const std::uint64_t fwd = rec.macs();
  auto loss = ad::scalar_objective<double>(ctx, y, 0.0, [](double up) { return Tensor<double>(Shape{3, 16}, up); });
  ad::backward(loss);
  // Only the weight needs a gradient: one extra pass of the same size.
  EXPECT_EQ(rec.macs(), 2 * fwd);
}

TEST(GradientSuite, KernelVjpsPassFiniteDifferences) {
  for (const auto& r : kernel_gradient_suite()) {
    EXPECT_TRUE(r.passed) << r.name << " rel " << r.max_rel_error << " skipped " << r.skipped;
    EXPECT_GT(r.checked, 0u) << r.name;
  }
}

TEST(GradientSuite, LossGradientsPassFiniteDifferences) {
  for (const auto& r : loss_gradient_suite()) EXPECT_TRUE(r.passed) << r.name << " rel " << r.max_rel_error;
}

TEST(GradientSuite, ConvAdjointResidual) { EXPECT_LT(conv_adjoint_residual(3, 100), 1e-10); }

TEST(GradientSuite, CheckerDetectsAWrongGradient) {
  // Sum of squares with a backward that drops the factor 2.
  std::vector<Tensor<double>> leaves{Tensor<double>(Shape{1, 3}, {0.5, -1.0, 2.0})};
  GraphFn wrong = [](ad::Context<double>& c, const std::vector<ad::Var<double>>& v) {
    const Tensor<double> val = kn::mul(v[0]->val(), v[0]->val());
    double s = 0.0;
    for (double x : val.data()) s += x;
    return ad::scalar_objective<double>(c, v[0], s, [&](double up) {
      return Tensor<double>(v[0]->val().shape(), up);
    });
  };
  EXPECT_FALSE(check_graph("wrong", leaves, wrong).passed);
}

}  // namespace
}  // namespace sudormrf
