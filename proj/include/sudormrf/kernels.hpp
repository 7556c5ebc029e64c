#pragma once

#include <cstddef>
#include <vector>

#include "sudormrf/flops.hpp"
#include "sudormrf/tensor.hpp"

// Primitive operators of the separation network. Inputs are [C, L] or
// [B, C, L]; a leading batch axis is processed independently. Every forward
// kernel reports its cost to the optional recorder.
namespace sudormrf::kernels {

enum class Padding {
  kSymmetric,  // left pad (K-1)/2
  kCausal,     // left pad K-1, output never sees the future
  kLookahead,  // no left pad; the adjoint of a causal transposed conv
};

std::size_t pad_offset(Padding padding, std::size_t kernel);

struct ConvGeom {
  std::size_t stride = 1;
  std::size_t groups = 1;
  Padding padding = Padding::kSymmetric;
};

// out[o, l] = bias[o] + sum_i sum_k w[o, i, k] * x[i, stride*l + k - offset],
// zero outside the input. Output length floor(L_in / stride).
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, ConvGeom geom,
                 FlopRecorder* rec = nullptr);

// Same sum with an explicit offset and output length (used by streaming).
template <typename T>
Tensor<T> conv1d_raw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t stride,
                     std::size_t groups, std::size_t offset, std::size_t out_len, FlopRecorder* rec = nullptr);

// Adjoint of conv1d with the same weight [C_in, C_out/groups, K]: output
// length L_in * stride plus bias [C_out].
template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, ConvGeom geom,
                           FlopRecorder* rec = nullptr);

template <typename T>
Tensor<T> conv_transpose1d_raw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                               std::size_t stride, std::size_t groups, std::size_t offset, std::size_t out_len,
                               FlopRecorder* rec = nullptr);

// Per-channel convolution, weight [C, 1, K].
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, std::size_t stride,
                           Padding padding, FlopRecorder* rec = nullptr);

// dL/dw of conv1d given its input x and upstream gy.
template <typename T>
Tensor<T> conv1d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape, std::size_t stride,
                             std::size_t groups, std::size_t offset);

// Sum of gy over batch and time, one value per channel.
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& gy);

template <typename T>
Tensor<T> relu(const Tensor<T>& x, FlopRecorder* rec = nullptr);
template <typename T>
Tensor<T> relu_vjp(const Tensor<T>& x, const Tensor<T>& gy);

// max(0, x) + a * min(0, x); slope has C entries or a single shared one.
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope, FlopRecorder* rec = nullptr);
template <typename T>
void prelu_vjp(const Tensor<T>& x, const Tensor<T>& slope, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gslope);

enum class NormKind { kLayer, kGlobal };

// Per moment group: per (batch, channel) for kLayer, per batch item for kGlobal.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> rstd;
};

inline constexpr double kNormEps = 1e-8;

template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, NormKind kind,
                    NormStats* stats = nullptr, FlopRecorder* rec = nullptr, double eps = kNormEps);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                     FlopRecorder* rec = nullptr) {
  return normalize(x, gain, shift, NormKind::kLayer, nullptr, rec);
}
template <typename T>
Tensor<T> global_layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                            FlopRecorder* rec = nullptr) {
  return normalize(x, gain, shift, NormKind::kGlobal, nullptr, rec);
}
template <typename T>
void normalize_vjp(const Tensor<T>& x, const Tensor<T>& gain, NormKind kind, const NormStats& stats,
                   const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggain, Tensor<T>* gshift);

// out[c, j] = x[c, floor(j / factor)] for j < factor * L; frames beyond that
// (out_len > factor * L) repeat the last input frame.
template <typename T>
Tensor<T> nearest_interp(const Tensor<T>& x, std::size_t factor, std::size_t out_len);
template <typename T>
Tensor<T> nearest_interp_vjp(const Tensor<T>& gy, std::size_t factor, std::size_t in_len);

// Softmax across the leading (source) axis of [N, C, L].
template <typename T>
Tensor<T> softmax_sources(const Tensor<T>& z, FlopRecorder* rec = nullptr);
template <typename T>
Tensor<T> softmax_sources_vjp(const Tensor<T>& m, const Tensor<T>& gy);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, FlopRecorder* rec = nullptr);

// Elementwise product; b may also be one [C, L] slice broadcast over a's batch.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, FlopRecorder* rec = nullptr);

// [R, C] -> [C, R].
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

// Attention across groups of x [G, d, L]. Group descriptors are time
// averages; q = wq s + bq, k = wk s + bk, A = softmax(q k^T / sqrt(d)) over
// groups, and y[g] = x[g] + gain * sum_h A[g, h] x[h].
struct AttentionCache {
  std::vector<double> pooled;  // [G, d]
  std::vector<double> query;   // [G, d]
  std::vector<double> key;     // [G, d]
  std::vector<double> weights; // [G, G]
};

template <typename T>
Tensor<T> group_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq, const Tensor<T>& wk,
                          const Tensor<T>& bk, const Tensor<T>& gain, AttentionCache* cache = nullptr,
                          FlopRecorder* rec = nullptr);

template <typename T>
struct GroupAttentionGrads {
  Tensor<T> gx, gwq, gbq, gwk, gbk, ggain;
};
template <typename T>
GroupAttentionGrads<T> group_attention_vjp(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk,
                                           const Tensor<T>& gain, const AttentionCache& cache,
                                           const Tensor<T>& gy);

std::uint64_t group_attention_macs(std::size_t groups, std::size_t width, std::size_t len);
std::uint64_t group_attention_elementwise(std::size_t groups, std::size_t width, std::size_t len);

}  // namespace sudormrf::kernels
