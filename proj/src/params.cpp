#include "sudormrf/params.hpp"

#include <cmath>
#include <random>

#include "sudormrf/error.hpp"

namespace sudormrf {

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::kKernel: return "kernel";
    case ParamRole::kBias: return "bias";
    case ParamRole::kGain: return "gain";
    case ParamRole::kShift: return "shift";
    case ParamRole::kSlope: return "slope";
  }
  return "unknown";
}

template <typename T>
void ParamStore<T>::add(std::string name, ParamRole role, Tensor<T> tensor) {
  if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), role, std::move(tensor)});
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("missing parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("missing parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
  ParamStore out;
  for (const auto& e : entries_) out.add(e.name, e.role, Tensor<T>(e.tensor.shape()));
  return out;
}

namespace {

class LayoutBuilder {
 public:
  explicit LayoutBuilder(const ModelConfig& cfg) : cfg_(cfg) {}

  void conv(const std::string& prefix, std::size_t out, std::size_t in_per_group, std::size_t k) {
    add(prefix + ".weight", ParamRole::kKernel, Shape{out, in_per_group, k}, in_per_group * k);
    add(prefix + ".bias", ParamRole::kBias, Shape{out}, 0);
  }
  // Transposed conv: weight [C_in, C_out, K], bias [C_out].
  void deconv(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    add(prefix + ".weight", ParamRole::kKernel, Shape{in, out, k}, out * k);
    add(prefix + ".bias", ParamRole::kBias, Shape{out}, 0);
  }
  void norm(const std::string& prefix, std::size_t ch) {
    if (!cfg_.has_norms()) return;
    add(prefix + ".gain", ParamRole::kGain, Shape{ch}, 0);
    add(prefix + ".shift", ParamRole::kShift, Shape{ch}, 0);
  }
  void act(const std::string& prefix, std::size_t ch) {
    add(prefix + ".slope", ParamRole::kSlope, Shape{cfg_.per_channel_slopes() ? ch : 1}, 0);
  }
  void attention(const std::string& prefix, std::size_t width) {
    add(prefix + ".query.weight", ParamRole::kKernel, Shape{width, width}, width);
    add(prefix + ".query.bias", ParamRole::kBias, Shape{width}, 0);
    add(prefix + ".key.weight", ParamRole::kKernel, Shape{width, width}, width);
    add(prefix + ".key.bias", ParamRole::kBias, Shape{width}, 0);
    add(prefix + ".gain", ParamRole::kGain, Shape{width}, 0);
  }
  void add(std::string name, ParamRole role, Shape shape, std::size_t fan_in) {
    specs_.push_back({std::move(name), role, shape, fan_in});
  }
  std::vector<ParamSpec> take() { return std::move(specs_); }

 private:
  const ModelConfig& cfg_;
  std::vector<ParamSpec> specs_;
};

}  // namespace

std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  validate(cfg);
  LayoutBuilder lb(cfg);
  const std::size_t ce = cfg.enc_basis, n = cfg.num_sources;
  const std::size_t g = cfg.groups();
  const std::size_t co = cfg.block_channels / g, ci = cfg.expanded_channels / g;
  lb.conv("encoder", ce, 1, cfg.enc_kernel);
  lb.norm("bottleneck.norm", ce);
  lb.conv("bottleneck.conv", cfg.block_channels, ce, 1);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b);
    lb.conv(p + ".expand", ci, co, 1);
    if (g > 1) lb.attention(p + ".expand.attn", ci);
    lb.norm(p + ".expand.norm", ci);
    lb.act(p + ".expand.act", ci);
    for (std::size_t i = 0; i <= cfg.depth; ++i) {
      const std::string lv = p + ".level" + std::to_string(i);
      lb.conv(lv + ".conv", ci, 1, cfg.dw_kernel);
      lb.norm(lv + ".norm", ci);
      lb.act(lv + ".act", ci);
    }
    lb.norm(p + ".fuse.norm", ci);
    lb.act(p + ".fuse.act", ci);
    lb.conv(p + ".contract", co, ci, 1);
    if (g > 1) lb.attention(p + ".contract.attn", co);
    lb.norm(p + ".contract.norm", co);
    lb.act(p + ".out.act", cfg.block_channels);
  }
  if (cfg.masks()) {
    lb.conv("head.proj", ce, cfg.block_channels, 1);
    for (std::size_t i = 0; i < n; ++i) lb.conv("head.source" + std::to_string(i), 1, 1, ce + 1);
    for (std::size_t i = 0; i < n; ++i) lb.deconv("decoder." + std::to_string(i), ce, 1, cfg.enc_kernel);
  } else {
    lb.conv("head", n * ce, cfg.block_channels, 1);
    lb.deconv("decoder", ce, 1, cfg.enc_kernel);
  }
  return lb.take();
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Explicit mapping so values do not depend on the standard library's
  // distribution implementation.
  auto uniform = [&rng](double bound) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return static_cast<float>((2.0 * u - 1.0) * bound);
  };
  ModelParams params;
  for (const ParamSpec& s : param_layout(cfg)) {
    Tensor<float> t(s.shape);
    switch (s.role) {
      case ParamRole::kKernel: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
        for (auto& v : t.data()) v = uniform(bound);
        break;
      }
      case ParamRole::kGain: t = Tensor<float>(s.shape, 1.0f); break;
      case ParamRole::kSlope: t = Tensor<float>(s.shape, 0.25f); break;
      case ParamRole::kBias:
      case ParamRole::kShift: break;
    }
    params.add(s.name, s.role, std::move(t));
  }
  return params;
}

template <typename T>
void check_layout(const ModelConfig& cfg, const ParamStore<T>& params) {
  const auto layout = param_layout(cfg);
  for (const ParamSpec& s : layout) {
    if (!params.contains(s.name)) throw ValidationError("missing parameter '" + s.name + "'");
    const Shape& got = params.get(s.name).shape();
    if (!(got == s.shape)) {
      throw ValidationError("parameter '" + s.name + "' has shape " + got.str() + ", config expects " + s.shape.str());
    }
  }
  if (params.size() != layout.size()) {
    for (const auto& e : params.entries()) {
      bool known = false;
      for (const ParamSpec& s : layout) known = known || s.name == e.name;
      if (!known) throw ValidationError("unexpected parameter '" + e.name + "'");
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void check_layout(const ModelConfig&, const ParamStore<float>&);
template void check_layout(const ModelConfig&, const ParamStore<double>&);

}  // namespace sudormrf
