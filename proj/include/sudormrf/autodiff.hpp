#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sudormrf/flops.hpp"
#include "sudormrf/kernels.hpp"
#include "sudormrf/tensor.hpp"

// Reverse-mode differentiation over the kernel set. Every op builds a node
// holding its value; when gradients are enabled the node also keeps its
// parents and a closure that pushes the upstream gradient to them.
namespace sudormrf::ad {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  OpKind op = OpKind::kLeaf;
  Tensor<T> value;
  const Tensor<T>* external = nullptr;  // leaf that aliases caller-owned storage
  Tensor<T> grad;                       // empty until something flows in
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  std::function<void(Node&)> backward;

  const Tensor<T>& val() const { return external ? *external : value; }
  const Shape& shape() const { return val().shape(); }
  void accumulate(const Tensor<T>& g);
  void accumulate(Tensor<T>&& g);
};

template <typename T>
class Context {
 public:
  explicit Context(bool grad_enabled = false, FlopRecorder* recorder = nullptr)
      : grad_enabled_(grad_enabled), recorder_(recorder) {}

  bool grad_enabled() const noexcept { return grad_enabled_; }
  FlopRecorder* recorder() const noexcept { return recorder_; }
  // Kinds of every op built through this context, in construction order.
  const std::vector<OpKind>& trace() const noexcept { return trace_; }
  void note(OpKind kind) { trace_.push_back(kind); }

  Var<T> constant(Tensor<T> value) const;
  // Differentiable input (when gradients are enabled).
  Var<T> input(Tensor<T> value) const;
  // Leaf aliasing `storage`, which must outlive the graph.
  Var<T> parameter(const Tensor<T>& storage) const;

 private:
  bool grad_enabled_;
  FlopRecorder* recorder_;
  std::vector<OpKind> trace_;
};

// Seeds `root` (a single element) with 1 and propagates to every reachable
// node that requires a gradient.
template <typename T>
void backward(const Var<T>& root);

template <typename T>
Var<T> conv1d(Context<T>& ctx, const Var<T>& x, const Var<T>& w, const Var<T>& bias, kernels::ConvGeom geom);
template <typename T>
Var<T> conv_transpose1d(Context<T>& ctx, const Var<T>& x, const Var<T>& w, const Var<T>& bias,
                        kernels::ConvGeom geom);
template <typename T>
Var<T> relu(Context<T>& ctx, const Var<T>& x);
template <typename T>
Var<T> prelu(Context<T>& ctx, const Var<T>& x, const Var<T>& slope);
template <typename T>
Var<T> normalize(Context<T>& ctx, const Var<T>& x, const Var<T>& gain, const Var<T>& shift, kernels::NormKind kind);
template <typename T>
Var<T> nearest_interp(Context<T>& ctx, const Var<T>& x, std::size_t factor, std::size_t out_len);
template <typename T>
Var<T> softmax_sources(Context<T>& ctx, const Var<T>& z);
template <typename T>
Var<T> add(Context<T>& ctx, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(Context<T>& ctx, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(Context<T>& ctx, const Var<T>& x);
template <typename T>
Var<T> reshape(Context<T>& ctx, const Var<T>& x, Shape shape);
// Slice i of the leading axis of a rank-3 value.
template <typename T>
Var<T> select(Context<T>& ctx, const Var<T>& x, std::size_t index);
// Stacks equally shaped rank-2 values along a new leading axis.
template <typename T>
Var<T> stack(Context<T>& ctx, std::span<const Var<T>> parts);
template <typename T>
Var<T> group_attention(Context<T>& ctx, const Var<T>& x, const Var<T>& wq, const Var<T>& bq, const Var<T>& wk,
                       const Var<T>& bk, const Var<T>& gain);

// Scalar objective of one input with a caller-supplied gradient: grad_fn
// receives the upstream scalar and returns dL/dx.
template <typename T>
Var<T> scalar_objective(Context<T>& ctx, const Var<T>& x, T value,
                        std::function<Tensor<T>(T upstream)> grad_fn);

}  // namespace sudormrf::ad
