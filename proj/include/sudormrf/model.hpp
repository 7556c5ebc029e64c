#pragma once

#include <string>
#include <unordered_map>

#include "sudormrf/autodiff.hpp"
#include "sudormrf/config.hpp"
#include "sudormrf/params.hpp"

namespace sudormrf {

// Graph leaves for every parameter of a store, looked up by canonical name.
template <typename T>
class BoundParams {
 public:
  BoundParams(ad::Context<T>& ctx, const ParamStore<T>& params);
  // Caller-built leaves; grads() is unavailable.
  explicit BoundParams(std::unordered_map<std::string, ad::Var<T>> vars) : params_(nullptr), vars_(std::move(vars)) {}

  const ad::Var<T>& operator[](const std::string& name) const;
  // Gradients accumulated by the last backward pass, zeros where none flowed.
  ParamStore<T> grads() const;

 private:
  const ParamStore<T>* params_;
  std::unordered_map<std::string, ad::Var<T>> vars_;
};

// Stages of the forward pass. Shapes: waveform [1, T]; latent [C_E, L] with
// L = floor(T / hop); per-source latents [N, C_E, L]; output [N, L * hop].
namespace model {

template <typename T>
ad::Var<T> encode(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const ad::Var<T>& x);

template <typename T>
ad::Var<T> uconv_block(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, std::size_t block,
                       const ad::Var<T>& y);

// Latents z_i stacked as [N, C_E, L].
template <typename T>
ad::Var<T> separator(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const ad::Var<T>& vx);

// Softmax masks across sources applied to the mixture latent.
template <typename T>
ad::Var<T> apply_masks(ad::Context<T>& ctx, const ModelConfig& cfg, const ad::Var<T>& vx, const ad::Var<T>& z);

template <typename T>
ad::Var<T> decode(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const ad::Var<T>& latents);

template <typename T>
ad::Var<T> forward(ad::Context<T>& ctx, const ModelConfig& cfg, const BoundParams<T>& p, const ad::Var<T>& x);

}  // namespace model

// Inference on one waveform (rank 1 [T] or [1, T]); returns [N, L * hop].
template <typename T>
Tensor<T> run_forward(const ModelConfig& cfg, const ParamStore<T>& params, const Tensor<T>& x,
                      FlopRecorder* rec = nullptr);

// Separates a clip of any length: standardizes it, zero-pads to the length
// multiple, runs the model, trims back and rescales by the clip's std.
// Returns [N, T].
Tensor<float> separate_clip(const ModelConfig& cfg, const ModelParams& params, const std::vector<float>& clip);

}  // namespace sudormrf
