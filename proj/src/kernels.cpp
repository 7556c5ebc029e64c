#include "sudormrf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

namespace sudormrf::kernels {
namespace {

using std::ptrdiff_t;
using std::size_t;

// Floor division that rounds towards negative infinity.
ptrdiff_t floor_div(ptrdiff_t a, ptrdiff_t b) {
  ptrdiff_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

ptrdiff_t ceil_div(ptrdiff_t a, ptrdiff_t b) { return -floor_div(-a, b); }

// Range [l0, l1) of output frames l with 0 <= stride*l + k - offset < in_len.
void valid_frames(size_t k, size_t offset, size_t stride, size_t in_len, size_t out_len, size_t* l0,
                  size_t* l1) {
  const auto s = static_cast<ptrdiff_t>(stride);
  const ptrdiff_t shift = static_cast<ptrdiff_t>(k) - static_cast<ptrdiff_t>(offset);
  ptrdiff_t lo = std::max<ptrdiff_t>(0, ceil_div(-shift, s));
  ptrdiff_t hi = std::min<ptrdiff_t>(static_cast<ptrdiff_t>(out_len),
                                     floor_div(static_cast<ptrdiff_t>(in_len) - 1 - shift, s) + 1);
  if (hi < lo) hi = lo;
  *l0 = static_cast<size_t>(lo);
  *l1 = static_cast<size_t>(hi);
}

struct ConvDims {
  size_t batch, in_ch, in_len, out_ch, ipg, opg, kernel;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, size_t groups, const char* what) {
  const Bct xb = as_bct(x.shape(), what);
  if (w.rank() != 3) throw ShapeError(std::string(what) + ": weight must be rank 3, got " + w.shape().str());
  if (groups == 0) throw ShapeError(std::string(what) + ": groups must be positive");
  ConvDims d{xb.batch, xb.channels, xb.time, w.dim(0), w.dim(1), 0, w.dim(2)};
  if (d.out_ch % groups != 0) throw ShapeError(std::string(what) + ": output channels not divisible by groups");
  d.opg = d.out_ch / groups;
  if (d.ipg * groups != d.in_ch) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(d.in_ch) + " channels, weight " +
                     w.shape().str() + " with " + std::to_string(groups) + " groups expects " +
                     std::to_string(d.ipg * groups));
  }
  return d;
}

template <typename T>
void check_bias(const Tensor<T>* bias, size_t channels, const char* what) {
  if (bias && bias->numel() != channels) {
    throw ShapeError(std::string(what) + ": bias has " + std::to_string(bias->numel()) + " entries, expected " +
                     std::to_string(channels));
  }
}

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

size_t pad_offset(Padding padding, size_t kernel) {
  switch (padding) {
    case Padding::kSymmetric: return (kernel - 1) / 2;
    case Padding::kCausal: return kernel - 1;
    case Padding::kLookahead: return 0;
  }
  return 0;
}

template <typename T>
Tensor<T> conv1d_raw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, size_t stride,
                     size_t groups, size_t offset, size_t out_len, FlopRecorder* rec) {
  const ConvDims d = conv_dims(x, w, groups, "conv1d");
  check_bias(bias, d.out_ch, "conv1d");
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  if (out_len == 0) throw ShapeError("conv1d: input of length " + std::to_string(d.in_len) + " is shorter than the stride");
  Tensor<T> y(with_bct(x.shape(), d.out_ch, out_len));
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  T* yp = y.ptr();
  for (size_t b = 0; b < d.batch; ++b) {
    for (size_t o = 0; o < d.out_ch; ++o) {
      const size_t g = o / d.opg;
      T* yo = yp + (b * d.out_ch + o) * out_len;
      std::fill(yo, yo + out_len, bias ? (*bias)[o] : T{0});
      for (size_t ii = 0; ii < d.ipg; ++ii) {
        const T* xi = xp + (b * d.in_ch + g * d.ipg + ii) * d.in_len;
        const T* wk = wp + (o * d.ipg + ii) * d.kernel;
        for (size_t k = 0; k < d.kernel; ++k) {
          size_t l0, l1;
          valid_frames(k, offset, stride, d.in_len, out_len, &l0, &l1);
          const T wv = wk[k];
          const T* src = xi + (stride * l0 + k - offset);
          if (stride == 1) {
            for (size_t l = l0; l < l1; ++l) yo[l] += wv * src[l - l0];
          } else {
            for (size_t l = l0; l < l1; ++l) yo[l] += wv * src[(l - l0) * stride];
          }
        }
      }
    }
  }
  record(rec, OpKind::kConv1d, d.batch * d.out_ch * out_len * d.ipg * d.kernel,
         bias ? d.batch * d.out_ch * out_len * op_cost::kBias : 0);
  return y;
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, ConvGeom geom,
                 FlopRecorder* rec) {
  const Bct xb = as_bct(x.shape(), "conv1d");
  if (geom.stride == 0) throw ShapeError("conv1d: stride must be positive");
  if (w.rank() != 3) throw ShapeError("conv1d: weight must be rank 3");
  return conv1d_raw(x, w, bias, geom.stride, geom.groups, pad_offset(geom.padding, w.dim(2)),
                    xb.time / geom.stride, rec);
}

template <typename T>
Tensor<T> conv_transpose1d_raw(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, size_t stride,
                               size_t groups, size_t offset, size_t out_len, FlopRecorder* rec) {
  // w is indexed as a conv1d weight [C_in, C_out/groups, K]; here C_in is the
  // channel count of x and the result has C_out channels.
  const Bct xb = as_bct(x.shape(), "conv_transpose1d");
  if (w.rank() != 3) throw ShapeError("conv_transpose1d: weight must be rank 3, got " + w.shape().str());
  if (groups == 0 || stride == 0) throw ShapeError("conv_transpose1d: stride and groups must be positive");
  const size_t in_ch = w.dim(0);
  if (xb.channels != in_ch) {
    throw ShapeError("conv_transpose1d: input has " + std::to_string(xb.channels) + " channels, weight " +
                     w.shape().str() + " expects " + std::to_string(in_ch));
  }
  if (in_ch % groups != 0) throw ShapeError("conv_transpose1d: input channels not divisible by groups");
  const size_t ipg = in_ch / groups;  // x channels per group
  const size_t opg = w.dim(1);        // output channels per group
  const size_t out_ch = opg * groups;
  const size_t kernel = w.dim(2);
  check_bias(bias, out_ch, "conv_transpose1d");
  Tensor<T> y(with_bct(x.shape(), out_ch, out_len));
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  T* yp = y.ptr();
  for (size_t b = 0; b < xb.batch; ++b) {
    if (bias) {
      for (size_t c = 0; c < out_ch; ++c) {
        std::fill(yp + (b * out_ch + c) * out_len, yp + (b * out_ch + c + 1) * out_len, (*bias)[c]);
      }
    }
    for (size_t o = 0; o < in_ch; ++o) {
      const size_t g = o / ipg;
      const T* xo = xp + (b * in_ch + o) * xb.time;
      for (size_t ii = 0; ii < opg; ++ii) {
        T* yi = yp + (b * out_ch + g * opg + ii) * out_len;
        const T* wk = wp + (o * opg + ii) * kernel;
        for (size_t k = 0; k < kernel; ++k) {
          size_t l0, l1;
          valid_frames(k, offset, stride, out_len, xb.time, &l0, &l1);
          const T wv = wk[k];
          T* dst = yi + (stride * l0 + k - offset);
          if (stride == 1) {
            for (size_t l = l0; l < l1; ++l) dst[l - l0] += wv * xo[l];
          } else {
            for (size_t l = l0; l < l1; ++l) dst[(l - l0) * stride] += wv * xo[l];
          }
        }
      }
    }
  }
  record(rec, OpKind::kConvTranspose1d, xb.batch * in_ch * xb.time * opg * kernel,
         bias ? xb.batch * out_ch * out_len * op_cost::kBias : 0);
  return y;
}

template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, ConvGeom geom,
                           FlopRecorder* rec) {
  const Bct xb = as_bct(x.shape(), "conv_transpose1d");
  if (w.rank() != 3) throw ShapeError("conv_transpose1d: weight must be rank 3");
  return conv_transpose1d_raw(x, w, bias, geom.stride, geom.groups, pad_offset(geom.padding, w.dim(2)),
                              xb.time * geom.stride, rec);
}

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, size_t stride,
                           Padding padding, FlopRecorder* rec) {
  const Bct xb = as_bct(x.shape(), "depthwise_conv1d");
  if (w.rank() != 3 || w.dim(0) != xb.channels || w.dim(1) != 1) {
    throw ShapeError("depthwise_conv1d: weight " + w.shape().str() + " does not match " +
                     std::to_string(xb.channels) + " channels");
  }
  check_bias(bias, xb.channels, "depthwise_conv1d");
  if (stride == 0) throw ShapeError("depthwise_conv1d: stride must be positive");
  const size_t kernel = w.dim(2);
  const size_t offset = pad_offset(padding, kernel);
  const size_t out_len = xb.time / stride;
  if (out_len == 0) throw ShapeError("depthwise_conv1d: input shorter than the stride");
  Tensor<T> y(with_bct(x.shape(), xb.channels, out_len));
  for (size_t b = 0; b < xb.batch; ++b) {
    for (size_t c = 0; c < xb.channels; ++c) {
      const T* xc = x.ptr() + (b * xb.channels + c) * xb.time;
      T* yc = y.ptr() + (b * xb.channels + c) * out_len;
      std::fill(yc, yc + out_len, bias ? (*bias)[c] : T{0});
      for (size_t k = 0; k < kernel; ++k) {
        size_t l0, l1;
        valid_frames(k, offset, stride, xb.time, out_len, &l0, &l1);
        const T wv = w[c * kernel + k];
        for (size_t l = l0; l < l1; ++l) yc[l] += wv * xc[stride * l + k - offset];
      }
    }
  }
  record(rec, OpKind::kConv1d, xb.batch * xb.channels * out_len * kernel,
         bias ? xb.batch * xb.channels * out_len * op_cost::kBias : 0);
  return y;
}

template <typename T>
Tensor<T> conv1d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape, size_t stride,
                             size_t groups, size_t offset) {
  const Bct xb = as_bct(x.shape(), "conv1d_weight_grad");
  const Bct gb = as_bct(gy.shape(), "conv1d_weight_grad");
  const size_t out_ch = w_shape[0], ipg = w_shape[1], kernel = w_shape[2];
  const size_t opg = out_ch / groups;
  if (gb.channels != out_ch || gb.batch != xb.batch || ipg * groups != xb.channels) {
    throw ShapeError("conv1d_weight_grad: inconsistent shapes");
  }
  Tensor<T> gw(w_shape);
  for (size_t o = 0; o < out_ch; ++o) {
    const size_t g = o / opg;
    for (size_t ii = 0; ii < ipg; ++ii) {
      for (size_t k = 0; k < kernel; ++k) {
        size_t l0, l1;
        valid_frames(k, offset, stride, xb.time, gb.time, &l0, &l1);
        T acc{0};
        for (size_t b = 0; b < xb.batch; ++b) {
          const T* go = gy.ptr() + (b * out_ch + o) * gb.time;
          const T* xi = x.ptr() + (b * xb.channels + g * ipg + ii) * xb.time;
          for (size_t l = l0; l < l1; ++l) acc += go[l] * xi[stride * l + k - offset];
        }
        gw[(o * ipg + ii) * kernel + k] = acc;
      }
    }
  }
  return gw;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& gy) {
  const Bct gb = as_bct(gy.shape(), "channel_sum");
  Tensor<T> out(Shape{gb.channels});
  for (size_t b = 0; b < gb.batch; ++b) {
    for (size_t c = 0; c < gb.channels; ++c) {
      const T* row = gy.ptr() + (b * gb.channels + c) * gb.time;
      T acc{0};
      for (size_t t = 0; t < gb.time; ++t) acc += row[t];
      out[c] += acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, FlopRecorder* rec) {
  Tensor<T> y(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  record(rec, OpKind::kRelu, 0, x.numel() * op_cost::kRelu);
  return y;
}

template <typename T>
Tensor<T> relu_vjp(const Tensor<T>& x, const Tensor<T>& gy) {
  check_same(x, gy, "relu_vjp");
  Tensor<T> gx(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > T{0} ? gy[i] : T{0};
  return gx;
}

namespace {
template <typename T>
size_t slope_stride(const Tensor<T>& x, const Tensor<T>& slope, Bct* bct) {
  *bct = as_bct(x.shape(), "prelu");
  if (slope.numel() == 1) return 0;
  if (slope.numel() != bct->channels) {
    throw ShapeError("prelu: slope has " + std::to_string(slope.numel()) + " entries for " +
                     std::to_string(bct->channels) + " channels");
  }
  return 1;
}
}  // namespace

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope, FlopRecorder* rec) {
  Bct d;
  const size_t step = slope_stride(x, slope, &d);
  Tensor<T> y(x.shape());
  for (size_t b = 0; b < d.batch; ++b) {
    for (size_t c = 0; c < d.channels; ++c) {
      const T a = slope[c * step];
      const size_t base = (b * d.channels + c) * d.time;
      for (size_t t = 0; t < d.time; ++t) {
        const T v = x[base + t];
        y[base + t] = v > T{0} ? v : a * v;
      }
    }
  }
  record(rec, OpKind::kPRelu, 0, x.numel() * op_cost::kPRelu);
  return y;
}

template <typename T>
void prelu_vjp(const Tensor<T>& x, const Tensor<T>& slope, const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gslope) {
  check_same(x, gy, "prelu_vjp");
  Bct d;
  const size_t step = slope_stride(x, slope, &d);
  if (gx) *gx = Tensor<T>(x.shape());
  if (gslope) *gslope = Tensor<T>(slope.shape());
  for (size_t b = 0; b < d.batch; ++b) {
    for (size_t c = 0; c < d.channels; ++c) {
      const T a = slope[c * step];
      const size_t base = (b * d.channels + c) * d.time;
      T acc{0};
      for (size_t t = 0; t < d.time; ++t) {
        const T v = x[base + t];
        const T g = gy[base + t];
        if (v > T{0}) {
          if (gx) (*gx)[base + t] = g;
        } else {
          if (gx) (*gx)[base + t] = a * g;
          acc += v * g;
        }
      }
      if (gslope) (*gslope)[c * step] += acc;
    }
  }
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, NormKind kind,
                    NormStats* stats, FlopRecorder* rec, double eps) {
  const Bct d = as_bct(x.shape(), "normalize");
  if (gain.numel() != d.channels || shift.numel() != d.channels) {
    throw ShapeError("normalize: gain/shift length must equal " + std::to_string(d.channels) + " channels");
  }
  const size_t groups = kind == NormKind::kLayer ? d.batch * d.channels : d.batch;
  const size_t span = x.numel() / groups;
  NormStats local;
  NormStats& s = stats ? *stats : local;
  s.mean.assign(groups, 0.0);
  s.rstd.assign(groups, 0.0);
  for (size_t g = 0; g < groups; ++g) {
    const T* p = x.ptr() + g * span;
    double sum = 0.0;
    for (size_t i = 0; i < span; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(span);
    double sq = 0.0;
    for (size_t i = 0; i < span; ++i) {
      const double dv = p[i] - mean;
      sq += dv * dv;
    }
    s.mean[g] = mean;
    s.rstd[g] = 1.0 / std::sqrt(sq / static_cast<double>(span) + eps);
  }
  Tensor<T> y(x.shape());
  for (size_t b = 0; b < d.batch; ++b) {
    for (size_t c = 0; c < d.channels; ++c) {
      const size_t g = kind == NormKind::kLayer ? b * d.channels + c : b;
      const T mean = static_cast<T>(s.mean[g]);
      const T r = static_cast<T>(s.rstd[g]);
      const T gm = gain[c], sh = shift[c];
      const size_t base = (b * d.channels + c) * d.time;
      for (size_t t = 0; t < d.time; ++t) y[base + t] = (x[base + t] - mean) * r * gm + sh;
    }
  }
  record(rec, kind == NormKind::kLayer ? OpKind::kLayerNorm : OpKind::kGlobalLayerNorm, 0,
         x.numel() * op_cost::kNorm);
  return y;
}

template <typename T>
void normalize_vjp(const Tensor<T>& x, const Tensor<T>& gain, NormKind kind, const NormStats& stats,
                   const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggain, Tensor<T>* gshift) {
  check_same(x, gy, "normalize_vjp");
  const Bct d = as_bct(x.shape(), "normalize_vjp");
  const size_t groups = kind == NormKind::kLayer ? d.batch * d.channels : d.batch;
  if (stats.mean.size() != groups) throw ValidationError("normalize_vjp: missing retained statistics");
  const size_t span = x.numel() / groups;
  if (ggain) *ggain = Tensor<T>(gain.shape());
  if (gshift) *gshift = Tensor<T>(gain.shape());
  if (gx) *gx = Tensor<T>(x.shape());
  std::vector<double> mean_g(groups, 0.0), mean_gx(groups, 0.0);
  for (size_t b = 0; b < d.batch; ++b) {
    for (size_t c = 0; c < d.channels; ++c) {
      const size_t g = kind == NormKind::kLayer ? b * d.channels + c : b;
      const double mean = stats.mean[g], r = stats.rstd[g];
      const size_t base = (b * d.channels + c) * d.time;
      double sg = 0.0, sgx = 0.0, sxh = 0.0;
      for (size_t t = 0; t < d.time; ++t) {
        const double xh = (x[base + t] - mean) * r;
        const double g_up = gy[base + t];
        sg += g_up;
        sxh += g_up * xh;
        const double gh = g_up * gain[c];
        sgx += gh * xh;
        mean_g[g] += gh;
      }
      mean_gx[g] += sgx;
      if (ggain) (*ggain)[c] += static_cast<T>(sxh);
      if (gshift) (*gshift)[c] += static_cast<T>(sg);
    }
  }
  if (!gx) return;
  for (size_t g = 0; g < groups; ++g) {
    mean_g[g] /= static_cast<double>(span);
    mean_gx[g] /= static_cast<double>(span);
  }
  for (size_t b = 0; b < d.batch; ++b) {
    for (size_t c = 0; c < d.channels; ++c) {
      const size_t g = kind == NormKind::kLayer ? b * d.channels + c : b;
      const double mean = stats.mean[g], r = stats.rstd[g];
      const size_t base = (b * d.channels + c) * d.time;
      for (size_t t = 0; t < d.time; ++t) {
        const double xh = (x[base + t] - mean) * r;
        const double gh = static_cast<double>(gy[base + t]) * gain[c];
        (*gx)[base + t] = static_cast<T>(r * (gh - mean_g[g] - xh * mean_gx[g]));
      }
    }
  }
}

template <typename T>
Tensor<T> nearest_interp(const Tensor<T>& x, size_t factor, size_t out_len) {
  const Bct d = as_bct(x.shape(), "nearest_interp");
  if (factor == 0) throw ShapeError("nearest_interp: factor must be positive");
  if (out_len == 0) throw ShapeError("nearest_interp: output length must be positive");
  Tensor<T> y(with_bct(x.shape(), d.channels, out_len));
  for (size_t r = 0; r < d.batch * d.channels; ++r) {
    const T* src = x.ptr() + r * d.time;
    T* dst = y.ptr() + r * out_len;
    for (size_t j = 0; j < out_len; ++j) dst[j] = src[std::min(j / factor, d.time - 1)];
  }
  return y;
}

template <typename T>
Tensor<T> nearest_interp_vjp(const Tensor<T>& gy, size_t factor, size_t in_len) {
  const Bct d = as_bct(gy.shape(), "nearest_interp_vjp");
  Tensor<T> gx(with_bct(gy.shape(), d.channels, in_len));
  for (size_t r = 0; r < d.batch * d.channels; ++r) {
    const T* src = gy.ptr() + r * d.time;
    T* dst = gx.ptr() + r * in_len;
    for (size_t j = 0; j < d.time; ++j) dst[std::min(j / factor, in_len - 1)] += src[j];
  }
  return gx;
}

template <typename T>
Tensor<T> softmax_sources(const Tensor<T>& z, FlopRecorder* rec) {
  if (z.rank() != 3) throw ShapeError("softmax_sources: expected [sources, channels, time], got " + z.shape().str());
  const size_t n = z.dim(0), plane = z.dim(1) * z.dim(2);
  Tensor<T> m(z.shape());
  for (size_t e = 0; e < plane; ++e) {
    T mx = z[e];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, z[i * plane + e]);
    T sum{0};
    for (size_t i = 0; i < n; ++i) {
      const T v = std::exp(z[i * plane + e] - mx);
      m[i * plane + e] = v;
      sum += v;
    }
    for (size_t i = 0; i < n; ++i) m[i * plane + e] /= sum;
  }
  record(rec, OpKind::kSoftmax, 0, z.numel() * op_cost::kSoftmax);
  return m;
}

template <typename T>
Tensor<T> softmax_sources_vjp(const Tensor<T>& m, const Tensor<T>& gy) {
  check_same(m, gy, "softmax_sources_vjp");
  const size_t n = m.dim(0), plane = m.dim(1) * m.dim(2);
  Tensor<T> gz(m.shape());
  for (size_t e = 0; e < plane; ++e) {
    T dot{0};
    for (size_t i = 0; i < n; ++i) dot += m[i * plane + e] * gy[i * plane + e];
    for (size_t i = 0; i < n; ++i) gz[i * plane + e] = m[i * plane + e] * (gy[i * plane + e] - dot);
  }
  return gz;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, FlopRecorder* rec) {
  check_same(a, b, "add");
  Tensor<T> y(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  record(rec, OpKind::kAdd, 0, a.numel() * op_cost::kAdd);
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, FlopRecorder* rec) {
  if (b.numel() == 0 || a.numel() % b.numel() != 0 ||
      !(a.shape() == b.shape() || (a.rank() == 3 && b.rank() == 2 && a.dim(1) == b.dim(0) && a.dim(2) == b.dim(1)))) {
    throw ShapeError("mul: cannot broadcast " + b.shape().str() + " over " + a.shape().str());
  }
  Tensor<T> y(a.shape());
  const size_t plane = b.numel();
  for (size_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i % plane];
  record(rec, OpKind::kMul, 0, a.numel() * op_cost::kMul);
  return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + x.shape().str());
  const size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> y(Shape{c, r});
  for (size_t i = 0; i < r; ++i) {
    for (size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  }
  return y;
}

std::uint64_t group_attention_macs(size_t groups, size_t width, size_t len) {
  const std::uint64_t g = groups, d = width, l = len;
  return 2 * g * d * d + g * g * d + g * g * d * l;
}

std::uint64_t group_attention_elementwise(size_t groups, size_t width, size_t len) {
  const std::uint64_t g = groups, d = width, l = len;
  // pooling, gain and residual per element; two bias adds per descriptor;
  // score scaling plus softmax per group pair
  return 3 * g * d * l + 2 * g * d + (1 + op_cost::kSoftmax) * g * g;
}

template <typename T>
Tensor<T> group_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq, const Tensor<T>& wk,
                          const Tensor<T>& bk, const Tensor<T>& gain, AttentionCache* cache, FlopRecorder* rec) {
  if (x.rank() != 3) throw ShapeError("group_attention: expected [groups, width, time], got " + x.shape().str());
  const size_t G = x.dim(0), d = x.dim(1), L = x.dim(2);
  const Shape square{d, d};
  if (!(wq.shape() == square) || !(wk.shape() == square) || bq.numel() != d || bk.numel() != d ||
      gain.numel() != d) {
    throw ShapeError("group_attention: projection shapes do not match group width " + std::to_string(d));
  }
  AttentionCache local;
  AttentionCache& c = cache ? *cache : local;
  c.pooled.assign(G * d, 0.0);
  c.query.assign(G * d, 0.0);
  c.key.assign(G * d, 0.0);
  c.weights.assign(G * G, 0.0);
  for (size_t g = 0; g < G; ++g) {
    for (size_t ch = 0; ch < d; ++ch) {
      const T* row = x.ptr() + (g * d + ch) * L;
      double s = 0.0;
      for (size_t t = 0; t < L; ++t) s += row[t];
      c.pooled[g * d + ch] = s / static_cast<double>(L);
    }
    for (size_t i = 0; i < d; ++i) {
      double q = bq[i], k = bk[i];
      for (size_t j = 0; j < d; ++j) {
        q += static_cast<double>(wq[i * d + j]) * c.pooled[g * d + j];
        k += static_cast<double>(wk[i * d + j]) * c.pooled[g * d + j];
      }
      c.query[g * d + i] = q;
      c.key[g * d + i] = k;
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (size_t g = 0; g < G; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t h = 0; h < G; ++h) {
      double s = 0.0;
      for (size_t i = 0; i < d; ++i) s += c.query[g * d + i] * c.key[h * d + i];
      c.weights[g * G + h] = s * scale;
      mx = std::max(mx, s * scale);
    }
    double sum = 0.0;
    for (size_t h = 0; h < G; ++h) {
      c.weights[g * G + h] = std::exp(c.weights[g * G + h] - mx);
      sum += c.weights[g * G + h];
    }
    for (size_t h = 0; h < G; ++h) c.weights[g * G + h] /= sum;
  }
  Tensor<T> y = x;
  std::vector<T> mix(L);
  for (size_t g = 0; g < G; ++g) {
    for (size_t ch = 0; ch < d; ++ch) {
      std::fill(mix.begin(), mix.end(), T{0});
      for (size_t h = 0; h < G; ++h) {
        const T a = static_cast<T>(c.weights[g * G + h]);
        const T* src = x.ptr() + (h * d + ch) * L;
        for (size_t t = 0; t < L; ++t) mix[t] += a * src[t];
      }
      T* dst = y.ptr() + (g * d + ch) * L;
      const T gm = gain[ch];
      for (size_t t = 0; t < L; ++t) dst[t] += gm * mix[t];
    }
  }
  record(rec, OpKind::kGroupAttention, group_attention_macs(G, d, L), group_attention_elementwise(G, d, L));
  return y;
}

template <typename T>
GroupAttentionGrads<T> group_attention_vjp(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk,
                                           const Tensor<T>& gain, const AttentionCache& c, const Tensor<T>& gy) {
  check_same(x, gy, "group_attention_vjp");
  const size_t G = x.dim(0), d = x.dim(1), L = x.dim(2);
  if (c.weights.size() != G * G) throw ValidationError("group_attention_vjp: missing retained attention weights");
  GroupAttentionGrads<T> out{gy, Tensor<T>(wq.shape()), Tensor<T>(Shape{d}), Tensor<T>(wk.shape()),
                             Tensor<T>(Shape{d}), Tensor<T>(gain.shape())};
  // gA[g, h] = sum_{c,t} gain[c] gy[g,c,t] x[h,c,t]
  std::vector<double> ga(G * G, 0.0);
  for (size_t g = 0; g < G; ++g) {
    for (size_t ch = 0; ch < d; ++ch) {
      const T* gr = gy.ptr() + (g * d + ch) * L;
      const double gm = gain[ch];
      double gsum = 0.0;
      for (size_t h = 0; h < G; ++h) {
        const T* xr = x.ptr() + (h * d + ch) * L;
        double dot = 0.0;
        for (size_t t = 0; t < L; ++t) dot += static_cast<double>(gr[t]) * xr[t];
        ga[g * G + h] += gm * dot;
        gsum += c.weights[g * G + h] * dot;
      }
      out.ggain[ch] += static_cast<T>(gsum);
      // gx[h] += A[g,h] gain gy[g]
      for (size_t h = 0; h < G; ++h) {
        const T a = static_cast<T>(c.weights[g * G + h] * gm);
        T* dst = out.gx.ptr() + (h * d + ch) * L;
        for (size_t t = 0; t < L; ++t) dst[t] += a * gr[t];
      }
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> gs(G * G, 0.0);
  for (size_t g = 0; g < G; ++g) {
    double dot = 0.0;
    for (size_t h = 0; h < G; ++h) dot += c.weights[g * G + h] * ga[g * G + h];
    for (size_t h = 0; h < G; ++h) gs[g * G + h] = c.weights[g * G + h] * (ga[g * G + h] - dot) * scale;
  }
  std::vector<double> gq(G * d, 0.0), gk(G * d, 0.0);
  for (size_t g = 0; g < G; ++g) {
    for (size_t h = 0; h < G; ++h) {
      const double s = gs[g * G + h];
      for (size_t i = 0; i < d; ++i) {
        gq[g * d + i] += s * c.key[h * d + i];
        gk[h * d + i] += s * c.query[g * d + i];
      }
    }
  }
  for (size_t g = 0; g < G; ++g) {
    for (size_t i = 0; i < d; ++i) {
      out.gbq[i] += static_cast<T>(gq[g * d + i]);
      out.gbk[i] += static_cast<T>(gk[g * d + i]);
      for (size_t j = 0; j < d; ++j) {
        out.gwq[i * d + j] += static_cast<T>(gq[g * d + i] * c.pooled[g * d + j]);
        out.gwk[i * d + j] += static_cast<T>(gk[g * d + i] * c.pooled[g * d + j]);
      }
    }
    for (size_t j = 0; j < d; ++j) {
      double gp = 0.0;
      for (size_t i = 0; i < d; ++i) gp += wq[i * d + j] * gq[g * d + i] + wk[i * d + j] * gk[g * d + i];
      const T spread = static_cast<T>(gp / static_cast<double>(L));
      T* dst = out.gx.ptr() + (g * d + j) * L;
      for (size_t t = 0; t < L; ++t) dst[t] += spread;
    }
  }
  return out;
}

#define SUDORMRF_INSTANTIATE(T)                                                                                  \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, ConvGeom, FlopRecorder*);      \
  template Tensor<T> conv1d_raw(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, size_t, size_t, size_t,    \
                                size_t, FlopRecorder*);                                                          \
  template Tensor<T> conv_transpose1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, ConvGeom,            \
                                      FlopRecorder*);                                                            \
  template Tensor<T> conv_transpose1d_raw(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, size_t, size_t,  \
                                          size_t, size_t, FlopRecorder*);                                        \
  template Tensor<T> depthwise_conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, size_t, Padding,     \
                                      FlopRecorder*);                                                            \
  template Tensor<T> conv1d_weight_grad(const Tensor<T>&, const Tensor<T>&, const Shape&, size_t, size_t,        \
                                        size_t);                                                                 \
  template Tensor<T> channel_sum(const Tensor<T>&);                                                              \
  template Tensor<T> relu(const Tensor<T>&, FlopRecorder*);                                                      \
  template Tensor<T> relu_vjp(const Tensor<T>&, const Tensor<T>&);                                               \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&, FlopRecorder*);                                   \
  template void prelu_vjp(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);         \
  template Tensor<T> normalize(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormKind, NormStats*,       \
                               FlopRecorder*, double);                                                           \
  template void normalize_vjp(const Tensor<T>&, const Tensor<T>&, NormKind, const NormStats&, const Tensor<T>&,  \
                              Tensor<T>*, Tensor<T>*, Tensor<T>*);                                               \
  template Tensor<T> nearest_interp(const Tensor<T>&, size_t, size_t);                                           \
  template Tensor<T> nearest_interp_vjp(const Tensor<T>&, size_t, size_t);                                       \
  template Tensor<T> softmax_sources(const Tensor<T>&, FlopRecorder*);                                           \
  template Tensor<T> softmax_sources_vjp(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, FlopRecorder*);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&, FlopRecorder*);                                     \
  template Tensor<T> transpose(const Tensor<T>&);                                                                \
  template Tensor<T> group_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     const Tensor<T>&, const Tensor<T>&, AttentionCache*, FlopRecorder*);        \
  template GroupAttentionGrads<T> group_attention_vjp(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                                      const Tensor<T>&, const AttentionCache&, const Tensor<T>&);

SUDORMRF_INSTANTIATE(float)
SUDORMRF_INSTANTIATE(double)
#undef SUDORMRF_INSTANTIATE

}  // namespace sudormrf::kernels
