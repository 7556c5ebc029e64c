#include "sudormrf/stream.hpp"

#include <algorithm>
#include <string>

#include "sudormrf/error.hpp"
#include "sudormrf/kernels.hpp"

namespace sudormrf {

namespace kn = kernels;

StreamSession::StreamSession(const ModelConfig& cfg, const ModelParams& params, std::size_t hop)
    : cfg_(cfg), params_(&params), hop_(hop) {
  validate(cfg_);
  if (!cfg_.causal()) {
    throw ValidationError("variant: streaming needs the causal variant, got " + std::string(variant_name(cfg_.variant)));
  }
  if (hop_ == 0 || hop_ % cfg_.length_multiple() != 0) {
    throw ValidationError("hop: " + std::to_string(hop_) + " is not a positive multiple of " +
                          std::to_string(cfg_.length_multiple()));
  }
  check_layout(cfg_, params);
  reset();
}

void StreamSession::reset() {
  state_ = StreamState{};
  state_.encoder.assign(cfg_.enc_kernel - 1, 0.0f);
  state_.levels.assign(cfg_.num_blocks * (cfg_.depth + 1),
                       std::vector<float>(cfg_.expanded_channels * (cfg_.dw_kernel - 1), 0.0f));
  state_.decoder_tail.assign(cfg_.num_sources * (cfg_.enc_kernel - cfg_.enc_stride()), 0.0f);
}

Tensor<float> StreamSession::causal_depthwise(const Tensor<float>& x, std::size_t level_index,
                                              const std::string& name, std::size_t stride) {
  const std::size_t ch = x.dim(0), frames = x.dim(1), ctx = cfg_.dw_kernel - 1;
  std::vector<float>& buf = state_.levels[level_index];
  Tensor<float> joined(Shape{ch, ctx + frames});
  for (std::size_t c = 0; c < ch; ++c) {
    std::copy(buf.begin() + c * ctx, buf.begin() + (c + 1) * ctx, joined.ptr() + c * (ctx + frames));
    std::copy(x.ptr() + c * frames, x.ptr() + (c + 1) * frames, joined.ptr() + c * (ctx + frames) + ctx);
    std::copy(joined.ptr() + (c + 1) * (ctx + frames) - ctx, joined.ptr() + (c + 1) * (ctx + frames),
              buf.begin() + c * ctx);
  }
  const ModelParams& p = *params_;
  return kn::conv1d_raw(joined, p.get(name + ".weight"), &p.get(name + ".bias"), stride, ch, 0, frames / stride);
}

Tensor<float> StreamSession::push(std::span<const float> chunk) {
  if (chunk.size() != hop_) {
    throw ValidationError("hop: chunk of " + std::to_string(chunk.size()) + " samples, session hop is " +
                          std::to_string(hop_));
  }
  const ModelParams& p = *params_;
  const ModelConfig& c = cfg_;
  const kn::ConvGeom pw{};

  // encoder over [past K_E - 1 samples, chunk]
  const std::size_t ectx = c.enc_kernel - 1;
  Tensor<float> joined(Shape{1, ectx + hop_});
  std::copy(state_.encoder.begin(), state_.encoder.end(), joined.ptr());
  std::copy(chunk.begin(), chunk.end(), joined.ptr() + ectx);
  std::copy(joined.ptr() + hop_, joined.ptr() + hop_ + ectx, state_.encoder.begin());
  const std::size_t frames = hop_ / c.enc_stride();
  Tensor<float> v = kn::relu(kn::conv1d_raw(joined, p.get("encoder.weight"), &p.get("encoder.bias"), c.enc_stride(),
                                            1, 0, frames));

  Tensor<float> y = kn::conv1d(v, p.get("bottleneck.conv.weight"), &p.get("bottleneck.conv.bias"), pw);
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const std::string pre = "blocks." + std::to_string(b);
    auto act = [&](const Tensor<float>& t, const std::string& name) { return kn::prelu(t, p.get(name + ".slope")); };
    Tensor<float> x = act(kn::conv1d(y, p.get(pre + ".expand.weight"), &p.get(pre + ".expand.bias"), pw),
                          pre + ".expand.act");
    std::vector<Tensor<float>> levels;
    for (std::size_t i = 0; i <= c.depth; ++i) {
      const std::string lv = pre + ".level" + std::to_string(i);
      const Tensor<float>& src = i == 0 ? x : levels.back();
      Tensor<float> d = causal_depthwise(src, b * (c.depth + 1) + i, lv + ".conv", i == 0 ? 1 : c.dw_stride);
      levels.push_back(act(d, lv + ".act"));
    }
    Tensor<float> u = levels.back();
    for (std::size_t i = c.depth; i-- > 0;) {
      u = kn::add(levels[i], kn::nearest_interp(u, c.dw_stride, levels[i].dim(1)));
    }
    Tensor<float> o = act(u, pre + ".fuse.act");
    o = kn::conv1d(o, p.get(pre + ".contract.weight"), &p.get(pre + ".contract.bias"), pw);
    y = act(kn::add(y, o), pre + ".out.act");
  }
  Tensor<float> z = kn::conv1d(y, p.get("head.weight"), &p.get("head.bias"), pw);
  z = std::move(z).reshaped(Shape{c.num_sources, c.enc_basis, frames});

  // overlap-add: frame l writes samples [hop_E*l, hop_E*l + K_E)
  const std::size_t tail = c.enc_kernel - c.enc_stride();
  Tensor<float> wave = kn::conv_transpose1d_raw(z, p.get("decoder.weight"), static_cast<const Tensor<float>*>(nullptr),
                                                c.enc_stride(), 1, 0, hop_ + tail);
  const float bias = p.get("decoder.bias")[0];
  Tensor<float> out(Shape{c.num_sources, hop_});
  for (std::size_t s = 0; s < c.num_sources; ++s) {
    const float* w = wave.ptr() + s * (hop_ + tail);
    float* pending = state_.decoder_tail.data() + s * tail;
    for (std::size_t t = 0; t < hop_; ++t) {
      const float carried = t < tail ? pending[t] : 0.0f;
      out.at(s, t) = (w[t] + carried) + bias;
    }
    for (std::size_t t = 0; t < tail; ++t) pending[t] = w[hop_ + t];
  }
  state_.samples_seen += hop_;
  require_finite(out, "stream push");
  return out;
}

}  // namespace sudormrf
