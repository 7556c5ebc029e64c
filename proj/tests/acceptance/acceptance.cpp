// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "pit_oracle.hpp"
#include "probe.hpp"
#include "sudormrf/cost.hpp"
#include "sudormrf/gradcheck.hpp"
#include "sudormrf/losses.hpp"
#include "sudormrf/model.hpp"
#include "sudormrf/stream.hpp"
#include "sudormrf/toy_data.hpp"
#include "sudormrf/trainer.hpp"
#include "test_util.hpp"

namespace {

using namespace sudormrf;
using testing::randn;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Row {
  const char* name;
  double params;  // published, millions
  double gflops;  // published, T = 8000
  double param_band;
};

const Row kTable[] = {
    {"base_1.0x", 2.72, 2.45, 0.05},     {"base_0.5x", 1.42, 1.51, 0.05},     {"base_0.25x", 0.79, 1.04, 0.05},
    {"plusplus_1.0x", 2.72, 2.11, 0.05}, {"plusplus_gc_1.0x", 0.30, 0.69, 0.10},
};

Outcome params_reproduction() {
  bool ok = true;
  std::string d;
  for (const Row& r : kTable) {
    const double got = static_cast<double>(count_params(preset(r.name))) / 1e6;
    const double dev = got / r.params - 1.0;
    ok = ok && std::abs(dev) <= r.param_band;
    d += fmt("%s %.3fM (%+.1f%%) ", r.name, got, 100 * dev);
  }
  return {ok, d};
}

Outcome flops_reproduction() {
  bool ok = true;
  std::string d;
  std::mt19937_64 rng(1);
  for (const Row& r : kTable) {
    const ModelConfig cfg = preset(r.name);
    const std::uint64_t analytic = count_flops(cfg, 8000, Direction::kForward);
    FlopRecorder rec;
    run_forward(cfg, init_params(cfg, 1), randn<float>(Shape{1, 8000}, rng), &rec);
    const double got = static_cast<double>(analytic) / 1e9;
    const double dev = got / r.gflops - 1.0;
    const bool exact = rec.flops() == analytic;
    ok = ok && std::abs(dev) <= 0.15 && exact;
    d += fmt("%s %.3fG (%+.1f%%%s) ", r.name, got, 100 * dev, exact ? "" : ", instrumented differs");
  }
  return {ok, d + "instrumented forward == analytic"};
}

ModelParams randomized(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_params(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  for (auto& e : p.entries()) {
    if (e.role == ParamRole::kBias) e.tensor = randn<float>(e.tensor.shape(), rng, 0.1);
    if (e.role == ParamRole::kSlope) e.tensor = randn<float>(e.tensor.shape(), rng, 0.3);
  }
  return p;
}

Outcome causality() {
  const ModelConfig cfg = preset("causal_0.25x");
  const ModelParams p = randomized(cfg, 3);
  std::mt19937_64 rng(4);
  const std::size_t len = 8000;
  const Tensor<float> x = randn<float>(Shape{1, len}, rng);
  const Tensor<float> y = run_forward(cfg, p, x);
  std::uniform_int_distribution<std::size_t> at(1, len - 1);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = at(rng);
    Tensor<float> xp = x;
    std::normal_distribution<float> d(0.0f, 2.0f);
    for (std::size_t t = k; t < len; ++t) xp[t] += d(rng);
    const Tensor<float> yp = run_forward(cfg, p, xp);
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t t = 0; t < k; ++t) violations += y.at(i, t) != yp.at(i, t);
  }
  return {violations == 0, fmt("causal_0.25x, 100 trials, %zu changed samples before the perturbation", violations)};
}

Outcome streaming() {
  const ModelConfig cfg = preset("causal_0.25x");
  const ModelParams p = randomized(cfg, 5);
  const std::size_t len = 4 * cfg.sample_rate, hop = cfg.length_multiple();
  const ToyMixture m = standardized(make_toy_mixture(6, len, 0.0));
  Tensor<float> x(Shape{1, len});
  for (std::size_t t = 0; t < len; ++t) x[t] = static_cast<float>(m.mixture[t]);
  const Tensor<float> batch = run_forward(cfg, p, x);
  StreamSession s(cfg, p, hop);
  double worst = 0.0, peak = 0.0;
  for (std::size_t k = 0; k < len / hop; ++k) {
    const Tensor<float> y = s.push(x.data().subspan(k * hop, hop));
    for (std::size_t i = 0; i < y.dim(0); ++i) {
      for (std::size_t t = 0; t < hop; ++t) {
        worst = std::max(worst, std::abs(static_cast<double>(y.at(i, t)) - batch.at(i, k * hop + t)));
        peak = std::max(peak, std::abs(static_cast<double>(batch.at(i, k * hop + t))));
      }
    }
  }
  return {worst < 1e-4, fmt("4 s clip, hop %zu: max |stream - batch| = %.2e (output peak %.2f)", hop, worst, peak)};
}

Outcome gradients() {
  bool ok = true;
  double worst = 0.0;
  std::size_t checks = 0;
  std::string failed;
  auto take = [&](const GradCheckResult& r) {
    ++checks;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) {
      ok = false;
      failed += " " + r.name;
    }
  };
  for (const auto& r : kernel_gradient_suite()) take(r);
  for (const auto& r : loss_gradient_suite()) take(r);
  for (Variant v : {Variant::kBase, Variant::kPlusPlus, Variant::kPlusPlusGC, Variant::kCausal})
    take(model_gradient_check(tiny_config(v)));
  const double adj = conv_adjoint_residual(1, 200);
  ok = ok && adj < 1e-10;
  return {ok, fmt("%zu checks, max rel error %.2e; adjoint residual %.2e", checks, worst, adj) +
                  (failed.empty() ? "" : "; failed:" + failed)};
}

Outcome pit_oracles() {
  std::mt19937_64 rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 3, len = 64;
    const Tensor<double> s = randn(Shape{n, len}, rng);
    Tensor<double> e = randn(Shape{n, len}, rng, 0.8);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < len; ++t) e.at((i + trial) % n, t) += s.at(i, t);
    const PITResult a = pit_loss_fixed(s, e), b = testing::fixed_oracle(s, e);
    mismatches += a.loss != b.loss || a.perm != b.perm;

    const std::size_t active = 1 + trial % n;
    Tensor<double> sv = s;
    for (std::size_t i = active; i < n; ++i)
      for (std::size_t t = 0; t < len; ++t) sv.at(i, t) = 0.0;
    std::vector<double> mix(len, 0.0);
    for (std::size_t i = 0; i < active; ++i)
      for (std::size_t t = 0; t < len; ++t) mix[t] += sv.at(i, t);
    const PITResult c = loss_variable_sources(sv, e, active, std::span<const double>(mix));
    const PITResult d = testing::variable_oracle(sv, e, active, mix);
    mismatches += c.loss != d.loss || c.perm != d.perm;
  }
  return {mismatches == 0, fmt("200 instances per loss, N in 2..4: %zu mismatches", mismatches)};
}

Outcome masks_and_scale() {
  const ModelConfig cfg = preset("base_0.25x");
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const ModelParams p = randomized(cfg, 10 + trial);
    ad::Context<float> ctx(false);
    BoundParams<float> bound(ctx, p);
    auto vx = model::encode(ctx, cfg, bound, ctx.constant(randn<float>(Shape{1, 1600}, rng, 1.0 + trial)));
    const auto masked = model::apply_masks(ctx, cfg, vx, model::separator(ctx, cfg, bound, vx));
    const Tensor<float>& v = masked->val();
    for (std::size_t c = 0; c < v.dim(1); ++c) {
      for (std::size_t t = 0; t < v.dim(2); ++t) {
        float sum = 0.0f;
        for (std::size_t i = 0; i < v.dim(0); ++i) sum += v.at(i, c, t);
        worst = std::max(worst, static_cast<double>(std::abs(sum - vx->val().at(c, t))));
      }
    }
  }
  double drift = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor<double> s = randn(Shape{1, 1000}, rng);
    Tensor<double> e = randn(Shape{1, 1000}, rng, 0.5);
    for (std::size_t t = 0; t < 1000; ++t) e[t] += s[t];
    const double base = si_sdr<double>(s.data(), e.data(), 1e-9);
    for (double k : {1e-2, 0.3, 7.0, 1e2}) {
      Tensor<double> ek = e;
      for (double& x : ek.data()) x *= k;
      drift = std::max(drift, std::abs(si_sdr<double>(s.data(), ek.data(), 1e-9) - base));
    }
  }
  return {worst <= 1e-5 && drift <= 1e-3,
          fmt("max |sum_i v_i - v_x| = %.2e; SI-SDR scale drift %.2e dB", worst, drift)};
}

Outcome toy_overfit() {
  const ModelConfig cfg = toy_config();
  const auto data = toy_dataset(100, 4, 4000);
  TrainOptions opts;
  opts.epochs = 2000;  // 4 mixtures at batch 4: one step per epoch
  opts.threads = 1;
  opts.target_si_sdri = 10.0;
  const auto start = std::chrono::steady_clock::now();
  const auto res = train_toy<float>(cfg, data, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double final_sdri = dataset_si_sdri(cfg, res.params, data);
  return {final_sdri >= 10.0 && res.steps <= 2000,
          fmt("train-set SI-SDRi %.2f dB after %zu steps (%.1f s, %.3g training FLOPs)", final_sdri, res.steps, secs,
              static_cast<double>(res.records.back().flops))};
}

Outcome real_time() {
  const ModelConfig cfg = preset("causal_0.25x");
  const ModelParams p = init_params(cfg, 1);
  const LatencyStats batch = measure_latency(cfg, p, cfg.sample_rate, 5);
  const LatencyStats stream = measure_stream_latency(cfg, p, cfg.sample_rate, cfg.length_multiple(), 3);
  return {batch.real_time_factor() < 1.0,
          fmt("causal_0.25x, 1 s at 8 kHz: median %.3f s (RTF %.3f, p95 %.3f s); streaming RTF %.3f",
              batch.median, batch.real_time_factor(), batch.p95, stream.real_time_factor())};
}

Outcome receptive_fields() {
  bool ok = true;
  std::string d;
  for (std::size_t q : {2u, 4u, 7u}) {
    const ModelConfig cfg = testing::probe_config(q, 4);
    const std::size_t rf = receptive_field(cfg), mult = cfg.length_multiple();
    const std::size_t len = (2 * rf / mult + 4) * mult;
    std::int64_t worst = 0;
    for (std::size_t n : {len / 2, len / 2 + 3, len / 2 + 7}) {
      const auto probe = testing::gradient_support(cfg, len, n, 11);
      const auto analytic = receptive_interval(cfg, static_cast<std::int64_t>(n));
      worst = std::max({worst, std::abs(probe.first - analytic.first), std::abs(probe.second - analytic.second)});
    }
    ok = ok && worst <= static_cast<std::int64_t>(cfg.enc_stride());
    d += fmt("Q=%zu rf=%zu max edge gap %lld; ", q, rf, static_cast<long long>(worst));
  }
  return {ok, d + "tolerance one encoder hop"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"parameter counts", params_reproduction},
      {"forward FLOPs", flops_reproduction},
      {"causality", causality},
      {"streaming equals batch", streaming},
      {"gradient suite", gradients},
      {"PIT oracle equivalence", pit_oracles},
      {"mask completeness and scale invariance", masks_and_scale},
      {"toy overfit", toy_overfit},
      {"real-time factor", real_time},
      {"receptive field", receptive_fields},
  };
  int failures = 0, index = 0;
  for (const auto& [name, run] : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
