#include "sudormrf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sudormrf/error.hpp"
#include "sudormrf/kernels.hpp"
#include "sudormrf/losses.hpp"
#include "sudormrf/model.hpp"

namespace sudormrf {
namespace {

using ad::Var;
using Ctx = ad::Context<double>;
namespace kn = kernels;

Tensor<double> randn(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

double evaluate(std::vector<Tensor<double>>& leaves, const GraphFn& fn, const Tensor<double>& proj) {
  Ctx ctx(false);
  std::vector<Var<double>> vars;
  for (auto& t : leaves) vars.push_back(ctx.parameter(t));
  auto y = fn(ctx, vars);
  const Tensor<double>& v = y->val();
  double s = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) s += proj[i] * v[i];
  return s;
}

}  // namespace

GradCheckResult check_graph(const std::string& name, std::vector<Tensor<double>>& leaves, const GraphFn& fn,
                            const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  GradCheckResult res;
  res.name = name;
  Tensor<double> proj;
  std::vector<Tensor<double>> analytic;
  {
    Ctx ctx(true);
    std::vector<Var<double>> vars;
    for (auto& t : leaves) vars.push_back(ctx.parameter(t));
    auto y = fn(ctx, vars);
    proj = randn(y->shape(), rng);
    double value = 0.0;
    for (std::size_t i = 0; i < proj.numel(); ++i) value += proj[i] * y->val()[i];
    auto obj = ad::scalar_objective<double>(ctx, y, value, [&proj](double up) {
      Tensor<double> g = proj;
      for (auto& v : g.data()) v *= up;
      return g;
    });
    ad::backward(obj);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      analytic.push_back(vars[i]->grad.empty() ? Tensor<double>(leaves[i].shape()) : vars[i]->grad);
    }
  }
  const double h = opts.step;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>& t = leaves[li];
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > opts.max_probes_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_probes_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = t[i];
      auto central = [&](double step) {
        t[i] = orig + step;
        const double fp = evaluate(leaves, fn, proj);
        t[i] = orig - step;
        const double fm = evaluate(leaves, fn, proj);
        t[i] = orig;
        return (fp - fm) / (2.0 * step);
      };
      const double fd_full = central(h);
      const double fd_half = central(h / 2);
      // Richardson extrapolation cancels the O(h^2) term.
      const double fd = (4.0 * fd_half - fd_full) / 3.0;
      const double a = analytic[li][i];
      auto rel = [&](double x, double y) {
        return std::abs(x - y) / std::max({std::abs(x), std::abs(y), opts.floor});
      };
      if (rel(fd_full, fd_half) > opts.tolerance) {
        ++res.skipped;
        continue;
      }
      ++res.checked;
      res.max_rel_error = std::max(res.max_rel_error, rel(a, fd));
    }
  }
  res.passed = res.max_rel_error < opts.tolerance && res.checked > 0 && res.skipped * 20 <= res.checked;
  return res;
}

std::vector<GradCheckResult> kernel_gradient_suite(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed + 100);
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, std::vector<Tensor<double>> leaves, const GraphFn& fn) {
    out.push_back(check_graph(name, leaves, fn, opts));
  };
  auto conv_case = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                       std::size_t groups, kn::Padding pad, std::size_t len) {
    run(name, {randn(Shape{2, cin, len}, rng), randn(Shape{cout, cin / groups, k}, rng), randn(Shape{cout}, rng)},
        [=](Ctx& c, const std::vector<Var<double>>& v) {
          return ad::conv1d(c, v[0], v[1], v[2], kn::ConvGeom{stride, groups, pad});
        });
  };
  conv_case("conv1d dense symmetric", 3, 4, 5, 1, 1, kn::Padding::kSymmetric, 13);
  conv_case("conv1d strided causal", 3, 2, 4, 3, 1, kn::Padding::kCausal, 17);
  conv_case("conv1d grouped lookahead", 4, 6, 3, 2, 2, kn::Padding::kLookahead, 11);
  conv_case("depthwise conv1d strided", 5, 5, 5, 2, 5, kn::Padding::kSymmetric, 15);
  conv_case("pointwise conv1d", 6, 3, 1, 1, 1, kn::Padding::kSymmetric, 9);
  auto convt_case = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                        kn::Padding pad) {
    run(name, {randn(Shape{2, cin, 7}, rng), randn(Shape{cin, cout, k}, rng), randn(Shape{cout}, rng)},
        [=](Ctx& c, const std::vector<Var<double>>& v) {
          return ad::conv_transpose1d(c, v[0], v[1], v[2], kn::ConvGeom{stride, 1, pad});
        });
  };
  convt_case("conv_transpose1d symmetric", 4, 1, 7, 3, kn::Padding::kSymmetric);
  convt_case("conv_transpose1d lookahead", 3, 2, 5, 2, kn::Padding::kLookahead);
  run("relu", {randn(Shape{3, 10}, rng)}, [](Ctx& c, const std::vector<Var<double>>& v) { return ad::relu(c, v[0]); });
  run("prelu per-channel", {randn(Shape{2, 3, 8}, rng), randn(Shape{3}, rng, 0.5)},
      [](Ctx& c, const std::vector<Var<double>>& v) { return ad::prelu(c, v[0], v[1]); });
  run("prelu shared", {randn(Shape{3, 8}, rng), randn(Shape{1}, rng, 0.5)},
      [](Ctx& c, const std::vector<Var<double>>& v) { return ad::prelu(c, v[0], v[1]); });
  run("layer_norm", {randn(Shape{2, 3, 9}, rng), randn(Shape{3}, rng), randn(Shape{3}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) {
        return ad::normalize(c, v[0], v[1], v[2], kn::NormKind::kLayer);
      });
  run("global_layer_norm", {randn(Shape{2, 3, 9}, rng), randn(Shape{3}, rng), randn(Shape{3}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) {
        return ad::normalize(c, v[0], v[1], v[2], kn::NormKind::kGlobal);
      });
  run("nearest_interp odd tail", {randn(Shape{3, 4}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) { return ad::nearest_interp(c, v[0], 2, 9); });
  run("softmax_sources", {randn(Shape{3, 2, 5}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) { return ad::softmax_sources(c, v[0]); });
  run("add", {randn(Shape{2, 6}, rng), randn(Shape{2, 6}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) { return ad::add(c, v[0], v[1]); });
  run("mul broadcast", {randn(Shape{3, 2, 5}, rng), randn(Shape{2, 5}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) { return ad::mul(c, v[0], v[1]); });
  run("transpose reshape select stack", {randn(Shape{4, 6}, rng), randn(Shape{6, 4}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) {
        auto t = ad::transpose(c, v[0]);
        auto r = ad::reshape(c, ad::add(c, t, v[1]), Shape{2, 3, 4});
        std::vector<Var<double>> parts{ad::select(c, r, 1), ad::select(c, r, 0), ad::select(c, r, 1)};
        return ad::stack<double>(c, parts);
      });
  run("group_attention",
      {randn(Shape{4, 3, 6}, rng), randn(Shape{3, 3}, rng), randn(Shape{3}, rng), randn(Shape{3, 3}, rng),
       randn(Shape{3}, rng), randn(Shape{3}, rng)},
      [](Ctx& c, const std::vector<Var<double>>& v) {
        return ad::group_attention(c, v[0], v[1], v[2], v[3], v[4], v[5]);
      });
  return out;
}

std::vector<GradCheckResult> loss_gradient_suite(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed + 200);
  std::vector<GradCheckResult> out;
  for (std::size_t n : {1u, 2u, 3u}) {
    Tensor<double> targets = randn(Shape{n, 40}, rng);
    Tensor<double> est = targets;
    std::normal_distribution<double> d(0.0, 0.5);
    for (auto& v : est.data()) v += d(rng);
    std::vector<Tensor<double>> leaves{est};
    out.push_back(check_graph("pit si-sdr loss N=" + std::to_string(n), leaves,
                              [targets](Ctx& c, const std::vector<Var<double>>& v) {
                                return pit_objective(c, v[0], targets);
                              },
                              opts));
  }
  for (std::size_t active : {1u, 2u, 3u}) {
    const std::size_t n = 3;
    Tensor<double> targets = randn(Shape{n, 40}, rng);
    Tensor<double> mix(Shape{40});
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= active) {
        for (std::size_t t = 0; t < 40; ++t) targets.at(i, t) = 0.0;
      }
      for (std::size_t t = 0; t < 40; ++t) mix[t] += targets.at(i, t);
    }
    Tensor<double> est = targets;
    std::normal_distribution<double> d(0.0, 0.3);
    for (auto& v : est.data()) v += d(rng);
    std::vector<Tensor<double>> leaves{est};
    out.push_back(check_graph("variable-source loss N'=" + std::to_string(active), leaves,
                              [targets, mix, active](Ctx& c, const std::vector<Var<double>>& v) {
                                return variable_sources_objective(c, v[0], targets, active, mix);
                              },
                              opts));
  }
  return out;
}

ModelConfig tiny_config(Variant variant) {
  ModelConfig c;
  c.variant = variant;
  c.num_blocks = 1;
  c.depth = 2;
  c.block_channels = 8;
  c.expanded_channels = 16;
  c.enc_basis = 16;
  c.gc_groups = 4;
  c.dw_kernel = variant == Variant::kCausal ? 4 : 5;
  validate(c);
  return c;
}

GradCheckResult model_gradient_check(const ModelConfig& cfg, const GradCheckOptions& opts) {
  ParamStore<double> params = init_params(cfg, opts.seed).cast<double>();
  std::mt19937_64 rng(opts.seed + 300);
  // Non-trivial biases, slopes and norm affines so every path carries signal.
  std::normal_distribution<double> d(0.0, 0.2);
  for (auto& e : params.entries()) {
    if (e.role != ParamRole::kKernel) {
      for (auto& v : e.tensor.data()) v += d(rng);
    }
  }
  std::vector<Tensor<double>> leaves;
  leaves.push_back(randn(Shape{1, 160}, rng));
  for (const auto& e : params.entries()) leaves.push_back(e.tensor);
  const std::vector<std::string> names = [&] {
    std::vector<std::string> n;
    for (const auto& e : params.entries()) n.push_back(e.name);
    return n;
  }();
  GraphFn fn = [cfg, names](Ctx& c, const std::vector<Var<double>>& v) {
    std::unordered_map<std::string, Var<double>> map;
    for (std::size_t i = 0; i < names.size(); ++i) map.emplace(names[i], v[i + 1]);
    BoundParams<double> bound(std::move(map));
    return model::forward(c, cfg, bound, v[0]);
  };
  return check_graph("end-to-end " + std::string(variant_name(cfg.variant)), leaves, fn, opts);
}

double conv_adjoint_residual(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(1, 6);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t groups = pick(rng) % 2 + 1;
    const std::size_t cin = groups * pick(rng), cout = groups * pick(rng);
    const std::size_t k = pick(rng) + (t % 3 == 0 ? 15 : 0), stride = pick(rng) % 4 + 1;
    const std::size_t len = stride * (pick(rng) + 3) + (t % 2);
    const kn::Padding pad = static_cast<kn::Padding>(t % 3);
    Tensor<double> u = randn(Shape{cin, len}, rng);
    Tensor<double> w = randn(Shape{cout, cin / groups, k}, rng);
    const kn::ConvGeom g{stride, groups, pad};
    Tensor<double> cu = kn::conv1d(u, w, static_cast<const Tensor<double>*>(nullptr), g);
    Tensor<double> v = randn(cu.shape(), rng);
    Tensor<double> ctv = kn::conv_transpose1d_raw(v, w, static_cast<const Tensor<double>*>(nullptr), stride, groups,
                                                  kn::pad_offset(pad, k), len);
    double lhs = 0.0, rhs = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < cu.numel(); ++i) lhs += cu[i] * v[i];
    for (std::size_t i = 0; i < u.numel(); ++i) rhs += u[i] * ctv[i];
    for (double x : u.data()) nu += x * x;
    for (double x : v.data()) nv += x * x;
    worst = std::max(worst, std::abs(lhs - rhs) / std::sqrt(nu * nv));
  }
  return worst;
}

}  // namespace sudormrf
