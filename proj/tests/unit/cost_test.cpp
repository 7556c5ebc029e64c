#include <gtest/gtest.h>

#include <json.hpp>

#include "sudormrf/cost.hpp"
#include "sudormrf/model.hpp"
#include "probe.hpp"
#include "test_util.hpp"

namespace sudormrf {
namespace {

const char* const kPresets[] = {"base_1.0x",        "base_0.5x",  "base_0.25x",  "plusplus_1.0x",
                                "plusplus_gc_1.0x", "causal_0.5x", "causal_0.25x"};

TEST(Cost, ParamsEqualInitializedTensors) {
  for (const char* name : kPresets) {
    const ModelConfig cfg = preset(name);
    EXPECT_EQ(count_params(cfg), init_params(cfg, 1).total_elements()) << name;
  }
}

TEST(Cost, AnalyticFlopsEqualInstrumentedForward) {
  std::mt19937_64 rng(2);
  for (const char* name : kPresets) {
    const ModelConfig cfg = preset(name);
    const ModelParams p = init_params(cfg, 1);
    for (std::size_t len : {800u, 8000u}) {
      FlopRecorder rec;
      run_forward(cfg, p, testing::randn<float>(Shape{1, len}, rng), &rec);
      EXPECT_EQ(count_flops(cfg, len, Direction::kForward), rec.flops()) << name << " T=" << len;
      EXPECT_EQ(count_flops(cfg, len, Direction::kForward, FlopConvention{2}), rec.flops(FlopConvention{2}))
          << name;
    }
  }
}

TEST(Cost, AnalyticBackwardEqualsInstrumentedTrainingStep) {
  std::mt19937_64 rng(3);
  const ModelConfig cfg = testing::probe_config(2);
  for (Variant v : {Variant::kBase, Variant::kPlusPlusGC, Variant::kCausal}) {
    ModelConfig c = cfg;
    c.variant = v;
    c.gc_groups = 4;
    const ModelParams p = init_params(c, 1);
    FlopRecorder rec;
    ad::Context<float> ctx(true, &rec);
    BoundParams<float> bound(ctx, p);
    auto y = model::forward(ctx, c, bound, ctx.constant(testing::randn<float>(Shape{1, 400}, rng)));
    const std::uint64_t fwd = rec.flops();
    auto root = ad::scalar_objective<float>(ctx, y, 0.0f, [&](float up) { return Tensor<float>(y->val().shape(), up); });
    ad::backward(root);
    EXPECT_EQ(count_flops(c, 400, Direction::kForward), fwd) << variant_name(v);
    EXPECT_EQ(count_flops(c, 400, Direction::kBackward), rec.flops()) << variant_name(v);
  }
}

TEST(Cost, TotalsAreSumsOfLayers) {
  for (const char* name : kPresets) {
    const CostReport r = analyze(preset(name), 8000);
    std::uint64_t params = 0, fwd = 0, bwd = 0;
    for (const auto& l : r.layers) {
      params += l.params;
      fwd += l.flops(Direction::kForward, r.convention);
      bwd += l.flops(Direction::kBackward, r.convention);
    }
    EXPECT_EQ(params, r.params_total) << name;
    EXPECT_EQ(fwd, r.flops_forward) << name;
    EXPECT_EQ(bwd, r.flops_backward) << name;
    EXPECT_GE(r.flops_backward, r.flops_forward);
  }
}

TEST(Cost, FlopsAreLinearInTime) {
  for (const char* name : kPresets) {
    const ModelConfig cfg = preset(name);
    const double ratio = static_cast<double>(count_flops(cfg, 16000, Direction::kForward)) /
                         static_cast<double>(count_flops(cfg, 8000, Direction::kForward));
    EXPECT_GE(ratio, 1.9) << name;
    EXPECT_LE(ratio, 2.1) << name;
  }
}

TEST(Cost, MemoryOrdering) {
  for (Variant v : {Variant::kBase, Variant::kCausal}) {
    for (Direction d : {Direction::kForward, Direction::kBackward}) {
      const auto q = estimate_peak_memory(default_config(v, 0.25), 8000, d, 4);
      const auto h = estimate_peak_memory(default_config(v, 0.5), 8000, d, 4);
      const auto f = estimate_peak_memory(default_config(v, 1.0), 8000, d, 4);
      EXPECT_LT(q, h);
      EXPECT_LT(h, f);
    }
  }
  for (const char* name : kPresets) {
    const ModelConfig cfg = preset(name);
    const auto fwd = estimate_peak_memory(cfg, 8000, Direction::kForward, 4);
    EXPECT_GT(estimate_peak_memory(cfg, 8000, Direction::kBackward, 4), fwd) << name;
    // Doubling T at most doubles the activation part.
    const auto params = 4 * count_params(cfg);
    const auto fwd2 = estimate_peak_memory(cfg, 16000, Direction::kForward, 4);
    EXPECT_LE(fwd2 - params, 2 * (fwd - params)) << name;
    EXPECT_EQ(estimate_peak_memory(cfg, 8000, Direction::kForward, 8) - 8 * count_params(cfg), 2 * (fwd - params));
  }
}

TEST(Cost, ReceptiveFieldGrowsWithDepthAndBlocks) {
  ModelConfig cfg = preset("plusplus_1.0x");
  std::size_t prev = 0;
  for (std::size_t q = 1; q <= 6; ++q) {
    cfg.depth = q;
    const std::size_t rf = receptive_field(cfg);
    EXPECT_GT(rf, prev) << "Q=" << q;
    prev = rf;
  }
  cfg = preset("causal_0.25x");
  prev = 0;
  for (std::size_t b = 1; b <= 8; ++b) {
    cfg.num_blocks = b;
    const std::size_t rf = receptive_field(cfg);
    EXPECT_GT(rf, prev) << "B=" << b;
    prev = rf;
  }
}

TEST(Cost, ReceptiveIntervalMatchesGradientProbe) {
  for (std::size_t q : {1u, 3u, 5u}) {
    const ModelConfig cfg = testing::probe_config(q, 3);
    const std::size_t mult = cfg.length_multiple();
    const std::size_t len = (2 * receptive_field(cfg) / mult + 4) * mult;
    for (std::size_t n : {len / 2, len / 2 + 1, len / 2 + 9}) {
      const auto probe = testing::gradient_support(cfg, len, n, 4);
      const auto analytic = receptive_interval(cfg, static_cast<std::int64_t>(n));
      EXPECT_EQ(probe, analytic) << "Q=" << q << " n=" << n;
    }
  }
}

TEST(Cost, CausalIntervalEndsAtTheOutputSample) {
  const ModelConfig cfg = preset("causal_0.25x");
  for (std::int64_t n : {50000, 50005, 50009}) EXPECT_LE(receptive_interval(cfg, n).second, n);
}

TEST(Cost, ReportSerializesStableKeys) {
  const CostReport r = analyze(preset("base_0.25x"), 8000);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("params_total").get<std::uint64_t>(), r.params_total);
  EXPECT_EQ(j.at("flops_forward").get<std::uint64_t>(), r.flops_forward);
  EXPECT_EQ(j.at("receptive_field").get<std::size_t>(), r.receptive_field);
  EXPECT_TRUE(j.at("layers").contains("encoder"));
  EXPECT_NE(r.to_text().find("params_total"), std::string::npos);
}

TEST(Latency, StatsOrdering) {
  const LatencyStats one = summarize_latency({0.3}, 1.0);
  EXPECT_EQ(one.median, 0.3);
  EXPECT_EQ(one.p95, 0.3);
  const LatencyStats many = summarize_latency({0.5, 0.1, 0.4, 0.2, 0.3}, 2.0);
  EXPECT_EQ(many.median, 0.3);
  EXPECT_EQ(many.p95, 0.5);
  EXPECT_DOUBLE_EQ(many.real_time_factor(), 0.15);
}

TEST(Latency, MeasuresSmallModel) {
  const ModelConfig cfg = testing::probe_config(2);
  const ModelParams p = init_params(cfg, 1);
  const LatencyStats s = measure_latency(cfg, p, 800, 3);
  EXPECT_EQ(s.seconds.size(), 3u);
  EXPECT_LE(s.median, s.p95);
  EXPECT_DOUBLE_EQ(s.audio_seconds, 0.1);
  const LatencyStats st = measure_stream_latency(cfg, p, 800, cfg.length_multiple(), 2);
  EXPECT_LE(st.median, st.p95);
}

}  // namespace
}  // namespace sudormrf
