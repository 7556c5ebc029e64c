#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "sudormrf/autodiff.hpp"
#include "sudormrf/model.hpp"
#include "sudormrf/params.hpp"

namespace sudormrf::testing {

// Small causal model with Q levels: B blocks of 8 -> 16 channels, C_E = 16.
inline ModelConfig probe_config(std::size_t depth, std::size_t blocks = 2) {
  ModelConfig cfg = default_config(Variant::kCausal, 0.25);
  cfg.depth = depth;
  cfg.num_blocks = blocks;
  cfg.block_channels = 8;
  cfg.expanded_channels = 16;
  cfg.enc_basis = 16;
  validate(cfg);
  return cfg;
}

// Support [first, last] of d y[:, n] / d x over a random input of `samples`
// samples. The encoder bias is raised so no ReLU is inactive and every
// structural path carries a nonzero gradient.
inline std::pair<std::int64_t, std::int64_t> gradient_support(const ModelConfig& cfg, std::size_t samples,
                                                              std::size_t n, std::uint64_t seed) {
  ParamStore<double> params = init_params(cfg, seed).cast<double>();
  for (auto& v : params.get("encoder.bias").data()) v = 50.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> x(Shape{1, samples});
  for (auto& v : x.data()) v = d(rng);

  ad::Context<double> ctx(true);
  BoundParams<double> bound(ctx, params);
  auto xv = ctx.input(x);
  auto y = model::forward(ctx, cfg, bound, xv);
  const std::size_t sources = y->val().dim(0), len = y->val().dim(1);
  double value = 0.0;
  for (std::size_t i = 0; i < sources; ++i) value += y->val().at(i, n);
  auto root = ad::scalar_objective<double>(ctx, y, value, [=](double up) {
    Tensor<double> g(Shape{sources, len});
    for (std::size_t i = 0; i < sources; ++i) g.at(i, n) = up;
    return g;
  });
  ad::backward(root);
  std::int64_t first = -1, last = -1;
  for (std::size_t t = 0; t < samples; ++t) {
    if (xv->grad[t] != 0.0) {
      if (first < 0) first = static_cast<std::int64_t>(t);
      last = static_cast<std::int64_t>(t);
    }
  }
  return {first, last};
}

}  // namespace sudormrf::testing
