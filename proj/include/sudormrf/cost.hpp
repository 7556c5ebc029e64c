#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sudormrf/config.hpp"
#include "sudormrf/flops.hpp"
#include "sudormrf/params.hpp"

namespace sudormrf {

enum class Direction { kForward, kBackward };

struct LayerCost {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;         // forward
  std::uint64_t elementwise = 0;  // forward
  std::uint64_t vjp_macs = 0;     // reverse pass only
  std::uint64_t vjp_elementwise = 0;
  std::uint64_t activations = 0;  // elements produced by the forward pass

  std::uint64_t flops(Direction dir, FlopConvention c) const;
};

struct CostReport {
  ModelConfig cfg;
  std::size_t samples = 0;
  std::size_t bytes_per_value = 4;
  FlopConvention convention;
  std::vector<LayerCost> layers;
  std::uint64_t params_total = 0;
  std::uint64_t flops_forward = 0;
  std::uint64_t flops_backward = 0;  // includes the forward pass
  std::uint64_t peak_mem_forward = 0;   // bytes
  std::uint64_t peak_mem_backward = 0;  // bytes
  std::size_t receptive_field = 0;      // samples

  std::string to_text() const;
  // Flat key/value JSON object; keys are listed in the README.
  std::string to_json() const;
};

struct CostOptions {
  std::size_t bytes_per_value = 4;
  FlopConvention convention{};
};

// Walks the architecture symbolically; nothing is allocated or executed.
CostReport analyze(const ModelConfig& cfg, std::size_t samples, CostOptions opts = {});

std::uint64_t count_params(const ModelConfig& cfg);
std::uint64_t count_flops(const ModelConfig& cfg, std::size_t samples, Direction dir, FlopConvention c = {});
std::uint64_t estimate_peak_memory(const ModelConfig& cfg, std::size_t samples, Direction dir,
                                   std::size_t bytes_per_value);

// Convolutional receptive field: normalization statistics and pooled group
// attention span the whole clip and are not part of it. Interior output
// sample n depends on input samples [first, second].
std::pair<std::int64_t, std::int64_t> receptive_interval(const ModelConfig& cfg, std::int64_t n);
// Largest interval width over all output phases, in samples.
std::size_t receptive_field(const ModelConfig& cfg);

struct LatencyStats {
  std::vector<double> seconds;  // one per repeat
  double median = 0.0;
  double p95 = 0.0;
  double audio_seconds = 0.0;
  double real_time_factor() const { return audio_seconds > 0.0 ? median / audio_seconds : 0.0; }
};

// Wall time of a batch forward over `samples` samples after one warmup run.
LatencyStats measure_latency(const ModelConfig& cfg, const ModelParams& params, std::size_t samples,
                             std::size_t repeats);
// Wall time of processing `samples` samples through the streaming path in
// pushes of `hop` samples (causal variant only).
LatencyStats measure_stream_latency(const ModelConfig& cfg, const ModelParams& params, std::size_t samples,
                                    std::size_t hop, std::size_t repeats);

LatencyStats summarize_latency(std::vector<double> seconds, double audio_seconds);

}  // namespace sudormrf
