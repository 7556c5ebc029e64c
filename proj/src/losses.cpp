#include "sudormrf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sudormrf/error.hpp"

namespace sudormrf {
namespace {

constexpr double kDb = 10.0 / 2.302585092994045684;  // 10 / ln 10

template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

template <typename T>
std::span<const T> row(const Tensor<T>& t, std::size_t i) {
  const std::size_t len = t.dim(1);
  return {t.ptr() + i * len, len};
}

template <typename T>
void check_pair(const Tensor<T>& targets, const Tensor<T>& estimates, const char* what) {
  if (targets.rank() != 2 || estimates.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected [sources, time] tensors");
  }
  if (targets.dim(1) != estimates.dim(1)) {
    throw ShapeError(std::string(what) + ": target length " + std::to_string(targets.dim(1)) +
                     " differs from estimate length " + std::to_string(estimates.dim(1)));
  }
  if (estimates.dim(0) > 6) throw ValidationError(std::string(what) + ": at most 6 sources are supported");
}

template <typename T>
double snr(std::span<const T> s, std::span<const T> e, double eps) {
  double ss = 0.0, err = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = static_cast<double>(s[i]) - e[i];
    ss += static_cast<double>(s[i]) * s[i];
    err += d * d;
  }
  return 10.0 * std::log10((ss + eps) / (err + eps));
}

template <typename T>
double inactive_term(std::span<const T> e, double mix_energy, double eps, double tau) {
  return 10.0 * std::log10(dot(e, e) + tau * mix_energy + eps);
}

// SI-SDR with a given target scale.
template <typename T>
double scaled_sdr(std::span<const T> s, std::span<const T> e, double alpha, double eps) {
  double ps = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = alpha * s[i];
    const double d = a - e[i];
    ps += a * a;
    pe += d * d;
  }
  return 10.0 * std::log10((ps + eps) / (pe + eps));
}

template <typename T>
double scale_of(std::span<const T> s, std::span<const T> e) {
  const double ss = dot(s, s);
  if (ss == 0.0) throw ValidationError("si_sdr: target has zero energy");
  return dot(e, s) / ss;
}

// Best assignment over all permutations of the estimate rows, scored by
// sum_{i < rows} cost[i][perm[i]] + extra(perm). Lexicographic order; the
// first optimum wins.
template <typename Score>
std::vector<std::size_t> search(std::size_t n, bool maximize, Score&& score, double* best_out) {
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_val = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  do {
    const double v = score(perm);
    if (best.empty() || (maximize ? v > best_val : v < best_val)) {
      best_val = v;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  *best_out = best_val;
  return best;
}

}  // namespace

template <typename T>
double si_sdr(std::span<const T> target, std::span<const T> estimate, double eps) {
  if (target.size() != estimate.size() || target.empty()) throw ShapeError("si_sdr: lengths differ or are zero");
  return scaled_sdr(target, estimate, scale_of(target, estimate), eps);
}

template <typename T>
std::vector<double> si_sdr_grad(std::span<const T> s, std::span<const T> e, double eps) {
  const double alpha = scale_of(s, e);
  double p = eps, err = eps;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = alpha * s[i];
    p += a * a;
    err += (a - e[i]) * (a - e[i]);
  }
  std::vector<double> g(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = alpha * s[i];
    g[i] = kDb * (2.0 * a / p - 2.0 * (e[i] - a) / err);
  }
  return g;
}

template <typename T>
PITResult pit_loss_fixed(const Tensor<T>& targets, const Tensor<T>& estimates, double eps) {
  check_pair(targets, estimates, "pit_loss_fixed");
  const std::size_t n = targets.dim(0);
  if (estimates.dim(0) != n) throw ShapeError("pit_loss_fixed: target and estimate counts differ");
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = si_sdr(row(targets, i), row(estimates, j), eps);
  }
  double best = 0.0;
  PITResult r;
  r.perm = search(n, true,
                  [&](const std::vector<std::size_t>& p) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i) s += m[i * n + p[i]];
                    return s;
                  },
                  &best);
  r.loss = -best / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) r.per_source.push_back(m[i * n + r.perm[i]]);
  return r;
}

template <typename T>
PITResult loss_variable_sources(const Tensor<T>& targets, const Tensor<T>& estimates, std::size_t n_active,
                                std::span<const T> mixture, double eps, double tau) {
  check_pair(targets, estimates, "loss_variable_sources");
  const std::size_t n = estimates.dim(0);
  if (targets.dim(0) != n) throw ShapeError("loss_variable_sources: target and estimate counts differ");
  if (n_active < 1 || n_active > n) {
    throw ValidationError("n_active: " + std::to_string(n_active) + " must be in 1.." + std::to_string(n));
  }
  if (mixture.size() != targets.dim(1)) throw ShapeError("loss_variable_sources: mixture length differs");
  const double mix_energy = dot(mixture, mixture);
  std::vector<double> active(n_active * n), inactive(n);
  for (std::size_t i = 0; i < n_active; ++i) {
    for (std::size_t j = 0; j < n; ++j) active[i * n + j] = snr(row(targets, i), row(estimates, j), eps);
  }
  for (std::size_t j = 0; j < n; ++j) inactive[j] = inactive_term(row(estimates, j), mix_energy, eps, tau);
  const double na = static_cast<double>(n_active);
  const double ni = static_cast<double>(n - n_active);
  auto score = [&](const std::vector<std::size_t>& p) {
    double a = 0.0;
    for (std::size_t i = 0; i < n_active; ++i) a += active[i * n + p[i]];
    double loss = -a / na;
    if (n_active < n) {
      double b = 0.0;
      for (std::size_t i = n_active; i < n; ++i) b += inactive[p[i]];
      loss += b / ni;
    }
    return loss;
  };
  PITResult r;
  r.perm = search(n, false, score, &r.loss);
  for (std::size_t i = 0; i < n; ++i) {
    r.per_source.push_back(i < n_active ? active[i * n + r.perm[i]] : inactive[r.perm[i]]);
  }
  return r;
}

template <typename T>
EvalReport eval_si_sdri(const Tensor<T>& active_targets, const Tensor<T>& estimates, std::span<const T> mixture,
                        double eps) {
  check_pair(active_targets, estimates, "eval_si_sdri");
  const std::size_t na = active_targets.dim(0), n = estimates.dim(0);
  if (na < 2) throw ValidationError("eval_si_sdri: needs at least two active targets");
  if (na > n) throw ValidationError("eval_si_sdri: more active targets than estimates");
  if (mixture.size() != active_targets.dim(1)) throw ShapeError("eval_si_sdri: mixture length differs");
  std::vector<double> m(na * n);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = si_sdr(row(active_targets, i), row(estimates, j), eps);
  }
  double best = 0.0;
  EvalReport r;
  r.n_active = na;
  r.perm = search(n, true,
                  [&](const std::vector<std::size_t>& p) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < na; ++i) s += m[i * n + p[i]];
                    return s;
                  },
                  &best);
  r.perm.resize(na);
  r.si_sdr_abs = best / static_cast<double>(na);
  double base = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    const auto s = row(active_targets, i);
    const double alpha = scale_of(s, row(estimates, r.perm[i]));
    base += scaled_sdr(s, mixture, alpha, eps);
  }
  r.si_sdri = r.si_sdr_abs - base / static_cast<double>(na);
  return r;
}

template <typename T>
double eval_single_source(std::span<const T> target, const Tensor<T>& estimates, double eps) {
  if (estimates.rank() != 2 || estimates.dim(1) != target.size()) {
    throw ShapeError("eval_single_source: estimate rows must match the target length");
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < estimates.dim(0); ++j) best = std::max(best, si_sdr(target, row(estimates, j), eps));
  return best;
}

template <typename T>
EvalReport evaluate(const Tensor<T>& active_targets, const Tensor<T>& estimates, std::span<const T> mixture,
                    double eps) {
  if (active_targets.rank() != 2 || active_targets.dim(0) == 0) throw ShapeError("evaluate: no active targets");
  if (active_targets.dim(0) >= 2) return eval_si_sdri(active_targets, estimates, mixture, eps);
  const auto s = row(active_targets, 0);
  EvalReport r;
  r.n_active = 1;
  r.si_sdr_abs = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < estimates.dim(0); ++j) {
    const double v = si_sdr(s, row(estimates, j), eps);
    if (v > r.si_sdr_abs) {
      r.si_sdr_abs = v;
      r.perm = {j};
    }
  }
  r.si_sdri = r.si_sdr_abs - si_sdr(s, mixture, eps);
  return r;
}

template <typename T>
Tensor<T> pit_loss_fixed_grad(const Tensor<T>& targets, const Tensor<T>& estimates, std::span<const std::size_t> perm,
                              double eps) {
  check_pair(targets, estimates, "pit_loss_fixed_grad");
  const std::size_t n = targets.dim(0), len = targets.dim(1);
  Tensor<T> g(estimates.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto gi = si_sdr_grad(row(targets, i), row(estimates, perm[i]), eps);
    for (std::size_t t = 0; t < len; ++t) g.at(perm[i], t) = static_cast<T>(-gi[t] / static_cast<double>(n));
  }
  return g;
}

template <typename T>
Tensor<T> loss_variable_sources_grad(const Tensor<T>& targets, const Tensor<T>& estimates, std::size_t n_active,
                                     std::span<const T> mixture, std::span<const std::size_t> perm, double eps,
                                     double tau) {
  check_pair(targets, estimates, "loss_variable_sources_grad");
  const std::size_t n = estimates.dim(0), len = targets.dim(1);
  const double mix_energy = dot(mixture, mixture);
  Tensor<T> g(estimates.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = row(estimates, perm[i]);
    if (i < n_active) {
      const auto s = row(targets, i);
      double err = eps;
      for (std::size_t t = 0; t < len; ++t) err += (static_cast<double>(s[t]) - e[t]) * (static_cast<double>(s[t]) - e[t]);
      // d/de of -(1/N') 10 log10(.../(|s - e|^2 + eps))
      for (std::size_t t = 0; t < len; ++t) {
        g.at(perm[i], t) = static_cast<T>(kDb * 2.0 * (static_cast<double>(e[t]) - s[t]) / err /
                                          static_cast<double>(n_active));
      }
    } else {
      const double den = dot(e, e) + tau * mix_energy + eps;
      for (std::size_t t = 0; t < len; ++t) {
        g.at(perm[i], t) = static_cast<T>(kDb * 2.0 * e[t] / den / static_cast<double>(n - n_active));
      }
    }
  }
  return g;
}

template <typename T>
ad::Var<T> pit_objective(ad::Context<T>& ctx, const ad::Var<T>& estimates, const Tensor<T>& targets,
                         PITResult* result, double eps) {
  PITResult r = pit_loss_fixed(targets, estimates->val(), eps);
  if (!std::isfinite(r.loss)) throw NumericalError("loss: non-finite PIT SI-SDR");
  Tensor<T> grad;
  if (ctx.grad_enabled()) grad = pit_loss_fixed_grad(targets, estimates->val(), r.perm, eps);
  if (result) *result = r;
  return ad::scalar_objective<T>(ctx, estimates, static_cast<T>(r.loss), [grad = std::move(grad)](T up) {
    Tensor<T> g = grad;
    for (auto& v : g.data()) v *= up;
    return g;
  });
}

template <typename T>
ad::Var<T> variable_sources_objective(ad::Context<T>& ctx, const ad::Var<T>& estimates, const Tensor<T>& targets,
                                      std::size_t n_active, const Tensor<T>& mixture, PITResult* result, double eps,
                                      double tau) {
  PITResult r = loss_variable_sources(targets, estimates->val(), n_active, mixture.data(), eps, tau);
  if (!std::isfinite(r.loss)) throw NumericalError("loss: non-finite variable-source loss");
  Tensor<T> grad;
  if (ctx.grad_enabled()) {
    grad = loss_variable_sources_grad(targets, estimates->val(), n_active, mixture.data(), std::span(r.perm), eps, tau);
  }
  if (result) *result = r;
  return ad::scalar_objective<T>(ctx, estimates, static_cast<T>(r.loss), [grad = std::move(grad)](T up) {
    Tensor<T> g = grad;
    for (auto& v : g.data()) v *= up;
    return g;
  });
}

#define SUDORMRF_INSTANTIATE(T)                                                                                    \
  template double si_sdr(std::span<const T>, std::span<const T>, double);                                          \
  template std::vector<double> si_sdr_grad(std::span<const T>, std::span<const T>, double);                        \
  template PITResult pit_loss_fixed(const Tensor<T>&, const Tensor<T>&, double);                                   \
  template PITResult loss_variable_sources(const Tensor<T>&, const Tensor<T>&, std::size_t, std::span<const T>,    \
                                           double, double);                                                        \
  template EvalReport eval_si_sdri(const Tensor<T>&, const Tensor<T>&, std::span<const T>, double);                \
  template double eval_single_source(std::span<const T>, const Tensor<T>&, double);                                \
  template EvalReport evaluate(const Tensor<T>&, const Tensor<T>&, std::span<const T>, double);                    \
  template Tensor<T> pit_loss_fixed_grad(const Tensor<T>&, const Tensor<T>&, std::span<const std::size_t>, double); \
  template Tensor<T> loss_variable_sources_grad(const Tensor<T>&, const Tensor<T>&, std::size_t,                   \
                                                std::span<const T>, std::span<const std::size_t>, double, double); \
  template ad::Var<T> pit_objective(ad::Context<T>&, const ad::Var<T>&, const Tensor<T>&, PITResult*, double);     \
  template ad::Var<T> variable_sources_objective(ad::Context<T>&, const ad::Var<T>&, const Tensor<T>&,             \
                                                 std::size_t, const Tensor<T>&, PITResult*, double, double);

SUDORMRF_INSTANTIATE(float)
SUDORMRF_INSTANTIATE(double)
#undef SUDORMRF_INSTANTIATE

}  // namespace sudormrf
