#include "sudormrf/autodiff.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

namespace sudormrf::ad {
namespace kn = sudormrf::kernels;

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (grad.empty()) {
    grad = g;
    return;
  }
  if (!(grad.shape() == g.shape())) throw ShapeError("gradient shape " + g.shape().str() + " does not match " + grad.shape().str());
  for (std::size_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
}

template <typename T>
void Node<T>::accumulate(Tensor<T>&& g) {
  if (grad.empty()) {
    if (!(g.shape() == shape())) throw ShapeError("gradient shape " + g.shape().str() + " does not match " + shape().str());
    grad = std::move(g);
    return;
  }
  accumulate(static_cast<const Tensor<T>&>(g));
}

template <typename T>
Var<T> Context<T>::constant(Tensor<T> value) const {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <typename T>
Var<T> Context<T>::input(Tensor<T> value) const {
  auto n = constant(std::move(value));
  n->requires_grad = grad_enabled_;
  return n;
}

template <typename T>
Var<T> Context<T>::parameter(const Tensor<T>& storage) const {
  auto n = std::make_shared<Node<T>>();
  n->external = &storage;
  n->requires_grad = grad_enabled_;
  return n;
}

namespace {

template <typename T>
bool needs(const Var<T>& v) {
  return v && v->requires_grad;
}

// Creates the node for an op; parents are kept only when some input needs a
// gradient, so inference graphs release intermediates as they go.
template <typename T>
Var<T> make_node(Context<T>& ctx, OpKind op, Tensor<T> value, std::initializer_list<Var<T>> parents) {
  ctx.note(op);
  auto n = std::make_shared<Node<T>>();
  n->op = op;
  n->value = std::move(value);
  if (ctx.grad_enabled()) {
    for (const auto& p : parents) {
      if (needs(p)) n->requires_grad = true;
    }
    if (n->requires_grad) n->parents.assign(parents.begin(), parents.end());
  }
  return n;
}

void merge(FlopRecorder* dst, const FlopRecorder& local) {
  if (dst) *dst += local;
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  if (!root) throw ValidationError("backward: null root");
  if (root->val().numel() != 1) throw ShapeError("backward: root must hold a single element, got " + root->shape().str());
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->accumulate(Tensor<T>(root->shape(), T{1}));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Var<T> conv1d(Context<T>& ctx, const Var<T>& x, const Var<T>& w, const Var<T>& bias, kn::ConvGeom geom) {
  FlopRecorder local;
  Tensor<T> y = kn::conv1d(x->val(), w->val(), bias ? &bias->val() : nullptr, geom, &local);
  merge(ctx.recorder(), local);
  auto n = make_node(ctx, OpKind::kConv1d, std::move(y), {x, w, bias});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [geom, local, rec](Node<T>& self) {
      const auto& xv = self.parents[0];
      const auto& wv = self.parents[1];
      const auto& bv = self.parents[2];
      const Tensor<T>& W = wv->val();
      const std::size_t offset = kn::pad_offset(geom.padding, W.dim(2));
      std::uint64_t passes = 0;
      if (needs(xv)) {
        xv->accumulate(kn::conv_transpose1d_raw(self.grad, W, static_cast<const Tensor<T>*>(nullptr), geom.stride,
                                                geom.groups, offset, xv->shape().back()));
        ++passes;
      }
      if (needs(wv)) {
        wv->accumulate(kn::conv1d_weight_grad(xv->val(), self.grad, W.shape(), geom.stride, geom.groups, offset));
        ++passes;
      }
      if (needs(bv)) bv->accumulate(kn::channel_sum(self.grad));
      record(rec, OpKind::kConv1d, passes * local.macs(), local.elementwise());
    };
  }
  return n;
}

template <typename T>
Var<T> conv_transpose1d(Context<T>& ctx, const Var<T>& x, const Var<T>& w, const Var<T>& bias, kn::ConvGeom geom) {
  FlopRecorder local;
  Tensor<T> y = kn::conv_transpose1d(x->val(), w->val(), bias ? &bias->val() : nullptr, geom, &local);
  merge(ctx.recorder(), local);
  auto n = make_node(ctx, OpKind::kConvTranspose1d, std::move(y), {x, w, bias});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [geom, local, rec](Node<T>& self) {
      const auto& xv = self.parents[0];
      const auto& wv = self.parents[1];
      const auto& bv = self.parents[2];
      const Tensor<T>& W = wv->val();
      const std::size_t offset = kn::pad_offset(geom.padding, W.dim(2));
      std::uint64_t passes = 0;
      if (needs(xv)) {
        xv->accumulate(kn::conv1d_raw(self.grad, W, static_cast<const Tensor<T>*>(nullptr), geom.stride,
                                      geom.groups, offset, xv->shape().back()));
        ++passes;
      }
      if (needs(wv)) {
        // Roles swap: the transposed conv's upstream plays the conv input.
        wv->accumulate(kn::conv1d_weight_grad(self.grad, xv->val(), W.shape(), geom.stride, geom.groups, offset));
        ++passes;
      }
      if (needs(bv)) bv->accumulate(kn::channel_sum(self.grad));
      record(rec, OpKind::kConvTranspose1d, passes * local.macs(), local.elementwise());
    };
  }
  return n;
}

template <typename T>
Var<T> relu(Context<T>& ctx, const Var<T>& x) {
  Tensor<T> y = kn::relu(x->val(), ctx.recorder());
  auto n = make_node(ctx, OpKind::kRelu, std::move(y), {x});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec](Node<T>& self) {
      const auto& xv = self.parents[0];
      xv->accumulate(kn::relu_vjp(xv->val(), self.grad));
      record(rec, OpKind::kRelu, 0, self.grad.numel() * op_cost::kRelu);
    };
  }
  return n;
}

template <typename T>
Var<T> prelu(Context<T>& ctx, const Var<T>& x, const Var<T>& slope) {
  Tensor<T> y = kn::prelu(x->val(), slope->val(), ctx.recorder());
  auto n = make_node(ctx, OpKind::kPRelu, std::move(y), {x, slope});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec](Node<T>& self) {
      const auto& xv = self.parents[0];
      const auto& sv = self.parents[1];
      Tensor<T> gx, gs;
      kn::prelu_vjp(xv->val(), sv->val(), self.grad, needs(xv) ? &gx : nullptr, needs(sv) ? &gs : nullptr);
      if (needs(xv)) xv->accumulate(std::move(gx));
      if (needs(sv)) sv->accumulate(std::move(gs));
      record(rec, OpKind::kPRelu, 0, self.grad.numel() * op_cost::kPRelu);
    };
  }
  return n;
}

template <typename T>
Var<T> normalize(Context<T>& ctx, const Var<T>& x, const Var<T>& gain, const Var<T>& shift, kn::NormKind kind) {
  auto stats = std::make_shared<kn::NormStats>();
  Tensor<T> y = kn::normalize(x->val(), gain->val(), shift->val(), kind, stats.get(), ctx.recorder());
  const OpKind op = kind == kn::NormKind::kLayer ? OpKind::kLayerNorm : OpKind::kGlobalLayerNorm;
  auto n = make_node(ctx, op, std::move(y), {x, gain, shift});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec, kind, op, stats](Node<T>& self) {
      const auto& xv = self.parents[0];
      const auto& gv = self.parents[1];
      const auto& sv = self.parents[2];
      Tensor<T> gx, gg, gs;
      kn::normalize_vjp(xv->val(), gv->val(), kind, *stats, self.grad, needs(xv) ? &gx : nullptr,
                        needs(gv) ? &gg : nullptr, needs(sv) ? &gs : nullptr);
      if (needs(xv)) xv->accumulate(std::move(gx));
      if (needs(gv)) gv->accumulate(std::move(gg));
      if (needs(sv)) sv->accumulate(std::move(gs));
      record(rec, op, 0, self.grad.numel() * op_cost::kNorm);
    };
  }
  return n;
}

template <typename T>
Var<T> nearest_interp(Context<T>& ctx, const Var<T>& x, std::size_t factor, std::size_t out_len) {
  Tensor<T> y = kn::nearest_interp(x->val(), factor, out_len);
  record(ctx.recorder(), OpKind::kInterp, 0, 0);
  auto n = make_node(ctx, OpKind::kInterp, std::move(y), {x});
  if (n->requires_grad) {
    n->backward = [factor](Node<T>& self) {
      const auto& xv = self.parents[0];
      xv->accumulate(kn::nearest_interp_vjp(self.grad, factor, xv->shape().back()));
    };
  }
  return n;
}

template <typename T>
Var<T> softmax_sources(Context<T>& ctx, const Var<T>& z) {
  Tensor<T> m = kn::softmax_sources(z->val(), ctx.recorder());
  auto n = make_node(ctx, OpKind::kSoftmax, std::move(m), {z});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec](Node<T>& self) {
      self.parents[0]->accumulate(kn::softmax_sources_vjp(self.value, self.grad));
      record(rec, OpKind::kSoftmax, 0, self.grad.numel() * op_cost::kSoftmax);
    };
  }
  return n;
}

template <typename T>
Var<T> add(Context<T>& ctx, const Var<T>& a, const Var<T>& b) {
  Tensor<T> y = kn::add(a->val(), b->val(), ctx.recorder());
  auto n = make_node(ctx, OpKind::kAdd, std::move(y), {a, b});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec](Node<T>& self) {
      if (needs(self.parents[0])) self.parents[0]->accumulate(self.grad);
      if (needs(self.parents[1])) self.parents[1]->accumulate(self.grad);
      record(rec, OpKind::kAdd, 0, self.grad.numel() * op_cost::kAdd);
    };
  }
  return n;
}

template <typename T>
Var<T> mul(Context<T>& ctx, const Var<T>& a, const Var<T>& b) {
  Tensor<T> y = kn::mul(a->val(), b->val(), ctx.recorder());
  auto n = make_node(ctx, OpKind::kMul, std::move(y), {a, b});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec](Node<T>& self) {
      const auto& av = self.parents[0];
      const auto& bv = self.parents[1];
      const Tensor<T>& A = av->val();
      const Tensor<T>& B = bv->val();
      const std::size_t plane = B.numel();
      if (needs(av)) {
        Tensor<T> ga(A.shape());
        for (std::size_t i = 0; i < A.numel(); ++i) ga[i] = self.grad[i] * B[i % plane];
        av->accumulate(std::move(ga));
      }
      if (needs(bv)) {
        Tensor<T> gb(B.shape());
        for (std::size_t i = 0; i < A.numel(); ++i) gb[i % plane] += self.grad[i] * A[i];
        bv->accumulate(std::move(gb));
      }
      record(rec, OpKind::kMul, 0, self.grad.numel() * op_cost::kMul);
    };
  }
  return n;
}

template <typename T>
Var<T> transpose(Context<T>& ctx, const Var<T>& x) {
  auto n = make_node(ctx, OpKind::kTranspose, kn::transpose(x->val()), {x});
  if (n->requires_grad) {
    n->backward = [](Node<T>& self) { self.parents[0]->accumulate(kn::transpose(self.grad)); };
  }
  return n;
}

template <typename T>
Var<T> reshape(Context<T>& ctx, const Var<T>& x, Shape shape) {
  auto n = make_node(ctx, OpKind::kReshape, x->val().reshaped(shape), {x});
  if (n->requires_grad) {
    n->backward = [](Node<T>& self) {
      const auto& xv = self.parents[0];
      xv->accumulate(self.grad.reshaped(xv->shape()));
    };
  }
  return n;
}

template <typename T>
Var<T> select(Context<T>& ctx, const Var<T>& x, std::size_t index) {
  const Tensor<T>& v = x->val();
  if (v.rank() != 3 || index >= v.dim(0)) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range for " + v.shape().str());
  }
  const std::size_t plane = v.dim(1) * v.dim(2);
  std::vector<T> data(v.ptr() + index * plane, v.ptr() + (index + 1) * plane);
  auto n = make_node(ctx, OpKind::kSelect, Tensor<T>(Shape{v.dim(1), v.dim(2)}, std::move(data)), {x});
  if (n->requires_grad) {
    n->backward = [index, plane](Node<T>& self) {
      const auto& xv = self.parents[0];
      Tensor<T> g(xv->shape());
      std::copy(self.grad.ptr(), self.grad.ptr() + plane, g.ptr() + index * plane);
      xv->accumulate(std::move(g));
    };
  }
  return n;
}

template <typename T>
Var<T> stack(Context<T>& ctx, std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape s = parts[0]->shape();
  if (s.rank() != 2) throw ShapeError("stack: inputs must be rank 2, got " + s.str());
  std::vector<T> data;
  data.reserve(s.numel() * parts.size());
  for (const auto& p : parts) {
    if (!(p->shape() == s)) throw ShapeError("stack: shape mismatch " + p->shape().str() + " vs " + s.str());
    data.insert(data.end(), p->val().data().begin(), p->val().data().end());
  }
  ctx.note(OpKind::kStack);
  auto n = std::make_shared<Node<T>>();
  n->op = OpKind::kStack;
  n->value = Tensor<T>(Shape{parts.size(), s[0], s[1]}, std::move(data));
  if (ctx.grad_enabled() && std::any_of(parts.begin(), parts.end(), needs<T>)) {
    n->requires_grad = true;
    n->parents.assign(parts.begin(), parts.end());
    n->backward = [](Node<T>& self) {
      const std::size_t plane = self.grad.numel() / self.parents.size();
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        const auto& p = self.parents[i];
        if (!needs(p)) continue;
        std::vector<T> g(self.grad.ptr() + i * plane, self.grad.ptr() + (i + 1) * plane);
        p->accumulate(Tensor<T>(p->shape(), std::move(g)));
      }
    };
  }
  return n;
}

template <typename T>
Var<T> group_attention(Context<T>& ctx, const Var<T>& x, const Var<T>& wq, const Var<T>& bq, const Var<T>& wk,
                       const Var<T>& bk, const Var<T>& gain) {
  auto cache = std::make_shared<kn::AttentionCache>();
  FlopRecorder local;
  Tensor<T> y = kn::group_attention(x->val(), wq->val(), bq->val(), wk->val(), bk->val(), gain->val(), cache.get(),
                                    &local);
  merge(ctx.recorder(), local);
  auto n = make_node(ctx, OpKind::kGroupAttention, std::move(y), {x, wq, bq, wk, bk, gain});
  if (n->requires_grad) {
    FlopRecorder* rec = ctx.recorder();
    n->backward = [rec, cache, local](Node<T>& self) {
      const auto& p = self.parents;
      auto g = kn::group_attention_vjp(p[0]->val(), p[1]->val(), p[3]->val(), p[5]->val(), *cache, self.grad);
      if (needs(p[0])) p[0]->accumulate(std::move(g.gx));
      if (needs(p[1])) p[1]->accumulate(std::move(g.gwq));
      if (needs(p[2])) p[2]->accumulate(std::move(g.gbq));
      if (needs(p[3])) p[3]->accumulate(std::move(g.gwk));
      if (needs(p[4])) p[4]->accumulate(std::move(g.gbk));
      if (needs(p[5])) p[5]->accumulate(std::move(g.ggain));
      record(rec, OpKind::kGroupAttention, 2 * local.macs(), local.elementwise());
    };
  }
  return n;
}

template <typename T>
Var<T> scalar_objective(Context<T>& ctx, const Var<T>& x, T value, std::function<Tensor<T>(T)> grad_fn) {
  auto n = make_node(ctx, OpKind::kLoss, Tensor<T>::scalar(value), {x});
  if (n->requires_grad) {
    n->backward = [fn = std::move(grad_fn)](Node<T>& self) { self.parents[0]->accumulate(fn(self.grad[0])); };
  }
  return n;
}

#define SUDORMRF_INSTANTIATE(T)                                                                                 \
  template struct Node<T>;                                                                                      \
  template class Context<T>;                                                                                    \
  template void backward(const Var<T>&);                                                                        \
  template Var<T> conv1d(Context<T>&, const Var<T>&, const Var<T>&, const Var<T>&, kn::ConvGeom);               \
  template Var<T> conv_transpose1d(Context<T>&, const Var<T>&, const Var<T>&, const Var<T>&, kn::ConvGeom);     \
  template Var<T> relu(Context<T>&, const Var<T>&);                                                             \
  template Var<T> prelu(Context<T>&, const Var<T>&, const Var<T>&);                                             \
  template Var<T> normalize(Context<T>&, const Var<T>&, const Var<T>&, const Var<T>&, kn::NormKind);            \
  template Var<T> nearest_interp(Context<T>&, const Var<T>&, std::size_t, std::size_t);                         \
  template Var<T> softmax_sources(Context<T>&, const Var<T>&);                                                  \
  template Var<T> add(Context<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul(Context<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> transpose(Context<T>&, const Var<T>&);                                                        \
  template Var<T> reshape(Context<T>&, const Var<T>&, Shape);                                                   \
  template Var<T> select(Context<T>&, const Var<T>&, std::size_t);                                              \
  template Var<T> stack(Context<T>&, std::span<const Var<T>>);                                                  \
  template Var<T> group_attention(Context<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,      \
                                  const Var<T>&, const Var<T>&);                                                \
  template Var<T> scalar_objective(Context<T>&, const Var<T>&, T, std::function<Tensor<T>(T)>);

SUDORMRF_INSTANTIATE(float)
SUDORMRF_INSTANTIATE(double)
#undef SUDORMRF_INSTANTIATE

}  // namespace sudormrf::ad
