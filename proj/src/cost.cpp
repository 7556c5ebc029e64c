#include "sudormrf/cost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sudormrf/error.hpp"
#include "sudormrf/kernels.hpp"
#include "sudormrf/model.hpp"
#include "sudormrf/stream.hpp"

namespace sudormrf {
namespace {

using u64 = std::uint64_t;

// Mirrors the forward pass op by op, accumulating per-layer counts and a
// live-activation schedule.
class Tracer {
 public:
  void layer(std::string name) {
    layers_.push_back(LayerCost{});
    layers_.back().name = std::move(name);
  }
  void params(u64 n) { layers_.back().params += n; }

  // A conv-like op: `passes` is how many operands need a gradient.
  u64 conv(u64 macs, u64 bias_elems, u64 passes, u64 out) {
    LayerCost& l = layers_.back();
    l.macs += macs;
    l.elementwise += bias_elems;
    l.vjp_macs += passes * macs;
    l.vjp_elementwise += bias_elems;
    return produce(out);
  }
  u64 elementwise(u64 count, u64 out) {
    LayerCost& l = layers_.back();
    l.elementwise += count;
    l.vjp_elementwise += count;
    return produce(out);
  }
  // Data movement without arithmetic (copies such as transpose or select).
  u64 copy(u64 out) { return produce(out); }

  void release(u64 n) { live_ -= n; }
  void hold_input(u64 n) {
    live_ += n;
    input_ = n;
    peak_ = std::max(peak_, live_);
  }

  std::vector<LayerCost> take_layers() { return std::move(layers_); }
  u64 peak() const { return peak_; }
  u64 retained() const {
    u64 n = input_;
    for (const auto& l : layers_) n += l.activations;
    return n;
  }

 private:
  u64 produce(u64 out) {
    layers_.back().activations += out;
    live_ += out;
    peak_ = std::max(peak_, live_);
    return out;
  }

  std::vector<LayerCost> layers_;
  u64 live_ = 0;
  u64 peak_ = 0;
  u64 input_ = 0;
};

void trace_norm(Tracer& tr, const ModelConfig& cfg, u64 channels, u64 elems, u64* cur) {
  if (!cfg.has_norms()) return;
  tr.params(2 * channels);
  tr.elementwise(op_cost::kNorm * elems, elems);
  tr.release(*cur);
  *cur = elems;
}

void trace_act(Tracer& tr, const ModelConfig& cfg, u64 channels, u64 elems, u64* cur) {
  tr.params(cfg.per_channel_slopes() ? channels : 1);
  tr.elementwise(op_cost::kPRelu * elems, elems);
  tr.release(*cur);
  *cur = elems;
}

void trace_attention(Tracer& tr, u64 groups, u64 width, u64 len, u64* cur) {
  tr.params(2 * (width * width + width) + width);
  const u64 macs = kernels::group_attention_macs(groups, width, len);
  const u64 elem = kernels::group_attention_elementwise(groups, width, len);
  tr.conv(macs, 0, 2, groups * width * len);
  tr.elementwise(elem, 0);
  tr.release(*cur);
  *cur = groups * width * len;
}

void trace_block(Tracer& tr, const ModelConfig& cfg, std::size_t b, u64 len) {
  tr.layer("blocks." + std::to_string(b));
  const u64 g = cfg.groups();
  const u64 co = cfg.block_channels / g, ci = cfg.expanded_channels / g;
  const u64 wide = cfg.expanded_channels * len;
  const u64 k = cfg.dw_kernel, s = cfg.dw_stride;
  // expand
  tr.params(ci * co + ci);
  u64 cur = tr.conv(g * ci * len * co, wide, 2, wide);
  if (g > 1) trace_attention(tr, g, ci, len, &cur);
  trace_norm(tr, cfg, ci, wide, &cur);
  trace_act(tr, cfg, ci, wide, &cur);
  // resolution levels; each level's activation stays alive for fusion
  std::vector<u64> lens;
  std::vector<u64> kept;
  u64 l = len;
  for (std::size_t i = 0; i <= cfg.depth; ++i) {
    if (i > 0) l /= s;
    lens.push_back(l);
    const u64 e = cfg.expanded_channels * l;
    tr.params(ci * k + ci);
    u64 lv = tr.conv(e * k, e, 2, e);
    if (i == 0) tr.release(cur);
    trace_norm(tr, cfg, ci, e, &lv);
    trace_act(tr, cfg, ci, e, &lv);
    kept.push_back(lv);
  }
  u64 u = kept.back();
  for (std::size_t i = cfg.depth; i-- > 0;) {
    const u64 e = cfg.expanded_channels * lens[i];
    tr.copy(e);  // upsampled
    tr.release(u);
    tr.elementwise(op_cost::kAdd * e, e);
    tr.release(e);
    tr.release(kept[i]);
    u = e;
  }
  cur = u;
  trace_norm(tr, cfg, ci, wide, &cur);
  trace_act(tr, cfg, ci, wide, &cur);
  // contract
  const u64 narrow = cfg.block_channels * len;
  tr.params(co * ci + co);
  tr.conv(g * co * len * ci, narrow, 2, narrow);
  tr.release(cur);
  cur = narrow;
  if (g > 1) trace_attention(tr, g, co, len, &cur);
  trace_norm(tr, cfg, co, narrow, &cur);
  tr.elementwise(op_cost::kAdd * narrow, narrow);
  tr.release(cur);
  cur = narrow;
  trace_act(tr, cfg, cfg.block_channels, narrow, &cur);
  tr.release(narrow);  // block input
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

struct Interval {
  std::int64_t lo, hi;
};

// Input frames of a U-ConvBlock that output frame t depends on.
Interval block_span(const ModelConfig& cfg, std::int64_t t) {
  const auto k = static_cast<std::int64_t>(cfg.dw_kernel);
  const auto s = static_cast<std::int64_t>(cfg.dw_stride);
  const auto off = static_cast<std::int64_t>(kernels::pad_offset(cfg.padding(), cfg.dw_kernel));
  Interval out{t, t};
  std::int64_t scale = 1;
  for (std::size_t i = 0; i <= cfg.depth; ++i) {
    if (i > 0) scale *= s;
    const std::int64_t j = floor_div(t, scale);
    Interval iv{j, j};
    for (std::size_t m = i; m > 0; --m) iv = {s * iv.lo - off, s * iv.hi - off + k - 1};
    iv = {iv.lo - off, iv.hi - off + k - 1};  // stride-1 level
    out.lo = std::min(out.lo, iv.lo);
    out.hi = std::max(out.hi, iv.hi);
  }
  return out;
}

}  // namespace

std::uint64_t LayerCost::flops(Direction dir, FlopConvention c) const {
  u64 f = c.flops_per_mac * macs + elementwise;
  if (dir == Direction::kBackward) f += c.flops_per_mac * vjp_macs + vjp_elementwise;
  return f;
}

CostReport analyze(const ModelConfig& cfg, std::size_t samples, CostOptions opts) {
  validate(cfg);
  if (samples < cfg.enc_kernel) {
    throw ValidationError("samples: " + std::to_string(samples) + " is shorter than one encoder window");
  }
  Tracer tr;
  const u64 ce = cfg.enc_basis, n = cfg.num_sources, ke = cfg.enc_kernel;
  const u64 len = samples / cfg.enc_stride();
  const u64 out_len = len * cfg.enc_stride();
  {
    std::size_t min_len = 1;
    for (std::size_t i = 0; i < cfg.depth; ++i) min_len *= cfg.dw_stride;
    if (len < min_len) throw ValidationError("samples: too short for " + std::to_string(cfg.depth) + " downsamplings");
  }

  tr.layer("encoder");
  tr.hold_input(samples);
  tr.params(ce * ke + ce);
  u64 cur = tr.conv(ce * len * ke, ce * len, 1, ce * len);
  tr.release(samples);
  tr.elementwise(op_cost::kRelu * ce * len, ce * len);
  tr.release(cur);
  const u64 vx = ce * len;

  tr.layer("bottleneck");
  cur = vx;
  if (cfg.has_norms()) {
    tr.params(2 * ce);
    tr.elementwise(op_cost::kNorm * ce * len, ce * len);
  }
  tr.params(cfg.block_channels * ce + cfg.block_channels);
  tr.conv(cfg.block_channels * len * ce, cfg.block_channels * len, 2, cfg.block_channels * len);
  if (cfg.has_norms()) tr.release(ce * len);
  if (!cfg.masks()) tr.release(vx);

  for (std::size_t b = 0; b < cfg.num_blocks; ++b) trace_block(tr, cfg, b, len);
  // trace_block releases its input; the last block's output is live here
  const u64 y = cfg.block_channels * len;

  tr.layer("head");
  if (cfg.masks()) {
    tr.params(ce * cfg.block_channels + ce);
    tr.conv(ce * len * cfg.block_channels, ce * len, 2, ce * len);
    tr.release(y);
    tr.copy(ce * len);  // frame-major copy
    tr.release(ce * len);
    for (u64 i = 0; i < n; ++i) {
      tr.params((ce + 1) + 1);
      tr.conv(len * ce * (ce + 1), len * ce, 2, len * ce);
      tr.copy(ce * len);  // back to channel-major
      tr.release(ce * len);
    }
    tr.release(ce * len);
    tr.copy(n * ce * len);  // stacked
    tr.release(n * ce * len);

    tr.layer("masks");
    tr.elementwise(op_cost::kSoftmax * n * ce * len, n * ce * len);
    tr.release(n * ce * len);
    tr.elementwise(op_cost::kMul * n * ce * len, n * ce * len);
    tr.release(n * ce * len);
    tr.release(vx);

    tr.layer("decoder");
    for (u64 i = 0; i < n; ++i) {
      tr.params(ce * ke + 1);
      tr.copy(ce * len);  // selected source
      tr.conv(ce * len * ke, out_len, 2, out_len);
      tr.release(ce * len);
    }
    tr.release(n * ce * len);
    tr.copy(n * out_len);
    tr.release(n * out_len);
  } else {
    tr.params(n * ce * cfg.block_channels + n * ce);
    tr.conv(n * ce * len * cfg.block_channels, n * ce * len, 2, n * ce * len);
    tr.release(y);

    tr.layer("decoder");
    tr.params(ce * ke + 1);
    tr.conv(n * ce * len * ke, n * out_len, 2, n * out_len);
    tr.release(n * ce * len);
  }

  CostReport r;
  r.cfg = cfg;
  r.samples = samples;
  r.bytes_per_value = opts.bytes_per_value;
  r.convention = opts.convention;
  const u64 peak = tr.peak();
  const u64 retained = tr.retained();
  r.layers = tr.take_layers();
  for (const auto& l : r.layers) {
    r.params_total += l.params;
    r.flops_forward += l.flops(Direction::kForward, opts.convention);
    r.flops_backward += l.flops(Direction::kBackward, opts.convention);
  }
  r.peak_mem_forward = (r.params_total + peak) * opts.bytes_per_value;
  r.peak_mem_backward = (2 * r.params_total + retained) * opts.bytes_per_value;
  r.receptive_field = receptive_field(cfg);
  return r;
}

std::uint64_t count_params(const ModelConfig& cfg) {
  return analyze(cfg, std::max<std::size_t>(cfg.length_multiple(), cfg.enc_kernel)).params_total;
}

std::uint64_t count_flops(const ModelConfig& cfg, std::size_t samples, Direction dir, FlopConvention c) {
  const CostReport r = analyze(cfg, samples, CostOptions{4, c});
  return dir == Direction::kForward ? r.flops_forward : r.flops_backward;
}

std::uint64_t estimate_peak_memory(const ModelConfig& cfg, std::size_t samples, Direction dir,
                                   std::size_t bytes_per_value) {
  const CostReport r = analyze(cfg, samples, CostOptions{bytes_per_value, {}});
  return dir == Direction::kForward ? r.peak_mem_forward : r.peak_mem_backward;
}

std::pair<std::int64_t, std::int64_t> receptive_interval(const ModelConfig& cfg, std::int64_t n) {
  validate(cfg);
  const auto se = static_cast<std::int64_t>(cfg.enc_stride());
  const auto ke = static_cast<std::int64_t>(cfg.enc_kernel);
  const auto off_d = static_cast<std::int64_t>(kernels::pad_offset(cfg.decoder_padding(), cfg.enc_kernel));
  const auto off_e = static_cast<std::int64_t>(kernels::pad_offset(cfg.padding(), cfg.enc_kernel));
  // decoder frames writing sample n
  Interval f{-floor_div(-(n + off_d - ke + 1), se), floor_div(n + off_d, se)};
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) f = {block_span(cfg, f.lo).lo, block_span(cfg, f.hi).hi};
  return {se * f.lo - off_e, se * f.hi - off_e + ke - 1};
}

std::size_t receptive_field(const ModelConfig& cfg) {
  const auto period = static_cast<std::int64_t>(cfg.length_multiple());
  const std::int64_t base = period * 1000000;
  std::int64_t best = 0;
  for (std::int64_t n = base; n < base + period; ++n) {
    const auto [lo, hi] = receptive_interval(cfg, n);
    best = std::max(best, hi - lo + 1);
  }
  return static_cast<std::size_t>(best);
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << "config: " << describe(cfg) << "\n";
  os << "samples: " << samples << "\n";
  os << "layer                params        fwd_flops        bwd_flops\n";
  for (const auto& l : layers) {
    os << l.name;
    for (std::size_t i = l.name.size(); i < 16; ++i) os << ' ';
    os << ' ' << std::string(std::max<int>(0, 10 - static_cast<int>(std::to_string(l.params).size())), ' ')
       << l.params << ' ' << std::string(std::max<int>(0, 16 - static_cast<int>(std::to_string(l.flops(Direction::kForward, convention)).size())), ' ')
       << l.flops(Direction::kForward, convention) << ' '
       << std::string(std::max<int>(0, 16 - static_cast<int>(std::to_string(l.flops(Direction::kBackward, convention)).size())), ' ')
       << l.flops(Direction::kBackward, convention) << "\n";
  }
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "params_total: " << params_total << " (" << params_total / 1e6 << "e6)\n";
  os << "flops_forward: " << flops_forward << " (" << flops_forward / 1e9 << " GFLOPs, " << convention.flops_per_mac
     << " FLOP per MAC)\n";
  os << "flops_backward: " << flops_backward << " (" << flops_backward / 1e9 << " GFLOPs)\n";
  os << "peak_mem_forward: " << peak_mem_forward << " bytes\n";
  os << "peak_mem_backward: " << peak_mem_backward << " bytes\n";
  os << "receptive_field: " << receptive_field << " samples\n";
  return os.str();
}

std::string CostReport::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = std::string(variant_name(cfg.variant));
  j["num_blocks"] = cfg.num_blocks;
  j["samples"] = samples;
  j["flops_per_mac"] = convention.flops_per_mac;
  j["bytes_per_value"] = bytes_per_value;
  j["params_total"] = params_total;
  j["flops_forward"] = flops_forward;
  j["flops_backward"] = flops_backward;
  j["peak_mem_forward"] = peak_mem_forward;
  j["peak_mem_backward"] = peak_mem_backward;
  j["receptive_field"] = receptive_field;
  nlohmann::ordered_json layers_json = nlohmann::ordered_json::object();
  for (const auto& l : layers) {
    layers_json[l.name] = {{"params", l.params},
                           {"flops_forward", l.flops(Direction::kForward, convention)},
                           {"flops_backward", l.flops(Direction::kBackward, convention)}};
  }
  j["layers"] = layers_json;
  return j.dump();
}

LatencyStats summarize_latency(std::vector<double> seconds, double audio_seconds) {
  if (seconds.empty()) throw ValidationError("repeats: must be positive");
  LatencyStats s;
  s.audio_seconds = audio_seconds;
  s.seconds = seconds;
  std::sort(seconds.begin(), seconds.end());
  const std::size_t n = seconds.size();
  s.median = seconds[(n - 1) / 2];
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = seconds[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

namespace {
Tensor<float> noise_clip(std::size_t samples) {
  std::mt19937_64 rng(7);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  Tensor<float> x(Shape{1, samples});
  for (auto& v : x.data()) v = dist(rng);
  return x;
}

template <typename F>
double time_once(F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}
}  // namespace

LatencyStats measure_latency(const ModelConfig& cfg, const ModelParams& params, std::size_t samples,
                             std::size_t repeats) {
  if (repeats == 0) throw ValidationError("repeats: must be positive");
  const Tensor<float> x = noise_clip(samples);
  run_forward(cfg, params, x);  // warmup
  std::vector<double> times;
  for (std::size_t r = 0; r < repeats; ++r) times.push_back(time_once([&] { run_forward(cfg, params, x); }));
  return summarize_latency(std::move(times), static_cast<double>(samples) / static_cast<double>(cfg.sample_rate));
}

LatencyStats measure_stream_latency(const ModelConfig& cfg, const ModelParams& params, std::size_t samples,
                                    std::size_t hop, std::size_t repeats) {
  if (repeats == 0) throw ValidationError("repeats: must be positive");
  if (hop == 0 || samples % hop != 0) throw ValidationError("hop: must divide the measured length");
  const Tensor<float> x = noise_clip(samples);
  auto run = [&] {
    StreamSession session(cfg, params, hop);
    for (std::size_t start = 0; start < samples; start += hop) {
      session.push(std::span<const float>(x.ptr() + start, hop));
    }
  };
  run();
  std::vector<double> times;
  for (std::size_t r = 0; r < repeats; ++r) times.push_back(time_once(run));
  return summarize_latency(std::move(times), static_cast<double>(samples) / static_cast<double>(cfg.sample_rate));
}

}  // namespace sudormrf
