#include "sudormrf/model.hpp"

#include <cmath>
#include <vector>

#include "sudormrf/error.hpp"

namespace sudormrf {

namespace kn = kernels;
using ad::Var;

template <typename T>
BoundParams<T>::BoundParams(ad::Context<T>& ctx, const ParamStore<T>& params) : params_(&params) {
  for (const auto& e : params.entries()) vars_.emplace(e.name, ctx.parameter(e.tensor));
}

template <typename T>
const Var<T>& BoundParams<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
ParamStore<T> BoundParams<T>::grads() const {
  if (!params_) throw ValidationError("grads: parameters were bound without a store");
  ParamStore<T> out;
  for (const auto& e : params_->entries()) {
    const auto& g = vars_.at(e.name)->grad;
    out.add(e.name, e.role, g.empty() ? Tensor<T>(e.tensor.shape()) : g);
  }
  return out;
}

namespace model {
namespace {

template <typename T>
struct Builder {
  ad::Context<T>& ctx;
  const ModelConfig& cfg;
  const BoundParams<T>& p;

  Var<T> pointwise(const Var<T>& x, const std::string& name) {
    return ad::conv1d(ctx, x, p[name + ".weight"], p[name + ".bias"], kn::ConvGeom{});
  }
  Var<T> norm(const Var<T>& x, const std::string& name) {
    if (!cfg.has_norms()) return x;
    return ad::normalize(ctx, x, p[name + ".gain"], p[name + ".shift"], cfg.norm_kind());
  }
  Var<T> act(const Var<T>& x, const std::string& name) { return ad::prelu(ctx, x, p[name + ".slope"]); }
  Var<T> attention(const Var<T>& x, const std::string& name) {
    return ad::group_attention(ctx, x, p[name + ".query.weight"], p[name + ".query.bias"], p[name + ".key.weight"],
                               p[name + ".key.bias"], p[name + ".gain"]);
  }
  Var<T> depthwise(const Var<T>& x, const std::string& name, std::size_t stride) {
    const std::size_t ch = x->shape()[x->shape().rank() - 2];
    return ad::conv1d(ctx, x, p[name + ".weight"], p[name + ".bias"], kn::ConvGeom{stride, ch, cfg.padding()});
  }
};

}  // namespace

template <typename T>
Var<T> encode(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const Var<T>& x) {
  const Shape& s = x->shape();
  if (s.rank() != 2 || s[0] != 1) throw ShapeError("encode: expected a [1, T] waveform, got " + s.str());
  if (s[1] < cfg.enc_kernel) {
    throw ShapeError("encode: input of " + std::to_string(s[1]) + " samples is shorter than one encoder window (" +
                     std::to_string(cfg.enc_kernel) + ")");
  }
  auto v = ad::conv1d(ctx, x, p["encoder.weight"], p["encoder.bias"],
                      kn::ConvGeom{cfg.enc_stride(), 1, cfg.padding()});
  return ad::relu(ctx, v);
}

template <typename T>
Var<T> uconv_block(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, std::size_t block,
                   const Var<T>& y) {
  Builder<T> bl{ctx, cfg, p};
  const std::string pre = "blocks." + std::to_string(block);
  const Shape in_shape = y->shape();
  if (in_shape.rank() != 2 || in_shape[0] != cfg.block_channels) {
    throw ShapeError("uconv_block: expected [" + std::to_string(cfg.block_channels) + ", L], got " + in_shape.str());
  }
  const std::size_t len = in_shape[1];
  std::size_t min_len = 1;
  for (std::size_t i = 0; i < cfg.depth; ++i) min_len *= cfg.dw_stride;
  if (len < min_len) {
    throw ShapeError("uconv_block: " + std::to_string(len) + " frames cannot be downsampled " +
                     std::to_string(cfg.depth) + " times by " + std::to_string(cfg.dw_stride));
  }
  const std::size_t g = cfg.groups();
  Var<T> x = y;
  if (g > 1) x = ad::reshape(ctx, x, Shape{g, cfg.block_channels / g, len});

  x = bl.pointwise(x, pre + ".expand");
  if (g > 1) x = bl.attention(x, pre + ".expand.attn");
  x = bl.act(bl.norm(x, pre + ".expand.norm"), pre + ".expand.act");

  std::vector<Var<T>> levels;
  levels.reserve(cfg.depth + 1);
  for (std::size_t i = 0; i <= cfg.depth; ++i) {
    const std::string lv = pre + ".level" + std::to_string(i);
    const Var<T>& src = i == 0 ? x : levels.back();
    auto d = bl.depthwise(src, lv + ".conv", i == 0 ? 1 : cfg.dw_stride);
    levels.push_back(bl.act(bl.norm(d, lv + ".norm"), lv + ".act"));
  }
  // Coarse to fine: upsample and add the next finer resolution.
  Var<T> u = levels.back();
  for (std::size_t i = cfg.depth; i-- > 0;) {
    const Var<T>& fine = levels[i];
    auto up = ad::nearest_interp(ctx, u, cfg.dw_stride, fine->shape().back());
    u = ad::add(ctx, fine, up);
  }
  levels.clear();

  auto o = bl.act(bl.norm(u, pre + ".fuse.norm"), pre + ".fuse.act");
  o = bl.pointwise(o, pre + ".contract");
  if (g > 1) o = bl.attention(o, pre + ".contract.attn");
  o = bl.norm(o, pre + ".contract.norm");
  if (g > 1) o = ad::reshape(ctx, o, in_shape);
  return bl.act(ad::add(ctx, y, o), pre + ".out.act");
}

template <typename T>
Var<T> separator(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const Var<T>& vx) {
  Builder<T> bl{ctx, cfg, p};
  auto y = bl.pointwise(bl.norm(vx, "bottleneck.norm"), "bottleneck.conv");
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) y = uconv_block(ctx, cfg, p, b, y);
  const std::size_t ce = cfg.enc_basis, len = vx->shape().back(), n = cfg.num_sources;
  if (!cfg.masks()) {
    auto z = bl.pointwise(y, "head");
    return ad::reshape(ctx, z, Shape{n, ce, len});
  }
  // Shared projection to the latent width, then per source a convolution
  // along the channel axis of each frame.
  auto h = bl.pointwise(y, "head.proj");
  auto frames = ad::reshape(ctx, ad::transpose(ctx, h), Shape{len, 1, ce});
  std::vector<Var<T>> zs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = "head.source" + std::to_string(i);
    auto zi = ad::conv1d(ctx, frames, p[name + ".weight"], p[name + ".bias"], kn::ConvGeom{});
    zs.push_back(ad::transpose(ctx, ad::reshape(ctx, zi, Shape{len, ce})));
  }
  return ad::stack<T>(ctx, zs);
}

template <typename T>
Var<T> apply_masks(ad::Context<T>& ctx, const ModelConfig& cfg, const Var<T>& vx, const Var<T>& z) {
  if (!cfg.masks()) throw ValidationError("apply_masks: variant " + std::string(variant_name(cfg.variant)) + " estimates latents directly");
  return ad::mul(ctx, ad::softmax_sources(ctx, z), vx);
}

template <typename T>
Var<T> decode(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const Var<T>& latents) {
  const Shape& s = latents->shape();
  if (s.rank() != 3 || s[0] != cfg.num_sources || s[1] != cfg.enc_basis) {
    throw ShapeError("decode: expected [" + std::to_string(cfg.num_sources) + ", " + std::to_string(cfg.enc_basis) +
                     ", L] latents, got " + s.str());
  }
  const kn::ConvGeom geom{cfg.enc_stride(), 1, cfg.decoder_padding()};
  const std::size_t out_len = s[2] * cfg.enc_stride();
  if (cfg.shared_decoder()) {
    auto w = ad::conv_transpose1d(ctx, latents, p["decoder.weight"], p["decoder.bias"], geom);
    return ad::reshape(ctx, w, Shape{s[0], out_len});
  }
  std::vector<Var<T>> outs;
  for (std::size_t i = 0; i < s[0]; ++i) {
    const std::string name = "decoder." + std::to_string(i);
    outs.push_back(ad::conv_transpose1d(ctx, ad::select(ctx, latents, i), p[name + ".weight"], p[name + ".bias"], geom));
  }
  return ad::reshape(ctx, ad::stack<T>(ctx, outs), Shape{s[0], out_len});
}

template <typename T>
Var<T> forward(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const Var<T>& x) {
  auto vx = encode(ctx, cfg, p, x);
  auto z = separator(ctx, cfg, p, vx);
  auto latents = cfg.masks() ? apply_masks(ctx, cfg, vx, z) : z;
  auto out = decode(ctx, cfg, p, latents);
  require_finite(out->val(), "model forward");
  return out;
}

}  // namespace model

template <typename T>
Tensor<T> run_forward(const ModelConfig& cfg, const ParamStore<T>& params, const Tensor<T>& x, FlopRecorder* rec) {
  ad::Context<T> ctx(false, rec);
  BoundParams<T> bp(ctx, params);
  Tensor<T> in = x.rank() == 1 ? x.reshaped(Shape{1, x.numel()}) : x;
  auto out = model::forward(ctx, cfg, bp, ctx.constant(std::move(in)));
  return out->val();
}

Tensor<float> separate_clip(const ModelConfig& cfg, const ModelParams& params, const std::vector<float>& clip) {
  if (clip.empty()) throw ValidationError("separate: empty clip");
  double mean = 0.0;
  for (float v : clip) mean += v;
  mean /= static_cast<double>(clip.size());
  double var = 0.0;
  for (float v : clip) var += (v - mean) * (v - mean);
  const double stdev = std::sqrt(var / static_cast<double>(clip.size()));
  const double scale = stdev > 1e-8 ? stdev : 1.0;
  const std::size_t mult = cfg.length_multiple();
  const std::size_t padded = std::max<std::size_t>((clip.size() + mult - 1) / mult, 1) * mult;
  std::vector<float> x(padded, 0.0f);
  for (std::size_t i = 0; i < clip.size(); ++i) x[i] = static_cast<float>((clip[i] - mean) / scale);
  Tensor<float> est = run_forward(cfg, params, Tensor<float>(Shape{1, padded}, std::move(x)));
  const std::size_t n = est.dim(0);
  Tensor<float> out(Shape{n, clip.size()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < clip.size(); ++t) out.at(i, t) = static_cast<float>(est.at(i, t) * scale);
  }
  return out;
}

#define SUDORMRF_INSTANTIATE(T)                                                                                 \
  template class BoundParams<T>;                                                                                \
  template Var<T> model::encode(ad::Context<T>&, const ModelConfig&, const BoundParams<T>&, const Var<T>&);     \
  template Var<T> model::uconv_block(ad::Context<T>&, const ModelConfig&, const BoundParams<T>&, std::size_t,   \
                                     const Var<T>&);                                                            \
  template Var<T> model::separator(ad::Context<T>&, const ModelConfig&, const BoundParams<T>&, const Var<T>&);  \
  template Var<T> model::apply_masks(ad::Context<T>&, const ModelConfig&, const Var<T>&, const Var<T>&);        \
  template Var<T> model::decode(ad::Context<T>&, const ModelConfig&, const BoundParams<T>&, const Var<T>&);     \
  template Var<T> model::forward(ad::Context<T>&, const ModelConfig&, const BoundParams<T>&, const Var<T>&);    \
  template Tensor<T> run_forward(const ModelConfig&, const ParamStore<T>&, const Tensor<T>&, FlopRecorder*);

SUDORMRF_INSTANTIATE(float)
SUDORMRF_INSTANTIATE(double)
#undef SUDORMRF_INSTANTIATE

}  // namespace sudormrf
