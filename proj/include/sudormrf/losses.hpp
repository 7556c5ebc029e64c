#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sudormrf/autodiff.hpp"
#include "sudormrf/tensor.hpp"

namespace sudormrf {

inline constexpr double kSdrEps = 1e-9;
inline constexpr double kInactiveTau = 1e-3;

// perm[i] is the row of the estimates assigned to target row i (0-based).
struct PITResult {
  double loss = 0.0;
  std::vector<std::size_t> perm;
  std::vector<double> per_source;  // objective term of each target at perm
};

struct EvalReport {
  double si_sdri = 0.0;     // improvement over the mixture, dB
  double si_sdr_abs = 0.0;  // absolute score of the estimates, dB
  std::size_t n_active = 0;
  std::vector<std::size_t> perm;
};

// 10 log10((|a s|^2 + eps) / (|a s - e|^2 + eps)) with a = <e, s> / |s|^2.
// Throws ValidationError for an all-zero target.
template <typename T>
double si_sdr(std::span<const T> target, std::span<const T> estimate, double eps = kSdrEps);

// d si_sdr / d estimate.
template <typename T>
std::vector<double> si_sdr_grad(std::span<const T> target, std::span<const T> estimate, double eps = kSdrEps);

// -(1/N) max over assignments of the summed SI-SDR; targets and estimates
// are [N, T]. Exhaustive search, N <= 6.
template <typename T>
PITResult pit_loss_fixed(const Tensor<T>& targets, const Tensor<T>& estimates, double eps = kSdrEps);

// Loss for mixtures with n_active <= N sources: SNR on the first n_active
// target rows plus a term that pushes the unassigned estimates to zero,
// relative to the mixture energy. Minimized over assignments.
template <typename T>
PITResult loss_variable_sources(const Tensor<T>& targets, const Tensor<T>& estimates, std::size_t n_active,
                                std::span<const T> mixture, double eps = kSdrEps, double tau = kInactiveTau);

// Improvement of the best assignment of N' >= 2 active targets over the
// mixture; the mixture term reuses each target's scale from the winning
// assignment.
template <typename T>
EvalReport eval_si_sdri(const Tensor<T>& active_targets, const Tensor<T>& estimates, std::span<const T> mixture,
                        double eps = kSdrEps);

// Best absolute SI-SDR of any estimate row against a single target.
template <typename T>
double eval_single_source(std::span<const T> target, const Tensor<T>& estimates, double eps = kSdrEps);

// Dispatches on the number of active targets (1: absolute rule, else SI-SDRi).
template <typename T>
EvalReport evaluate(const Tensor<T>& active_targets, const Tensor<T>& estimates, std::span<const T> mixture,
                    double eps = kSdrEps);

// Gradients of the two losses w.r.t. the estimates at a fixed assignment.
template <typename T>
Tensor<T> pit_loss_fixed_grad(const Tensor<T>& targets, const Tensor<T>& estimates,
                              std::span<const std::size_t> perm, double eps = kSdrEps);
template <typename T>
Tensor<T> loss_variable_sources_grad(const Tensor<T>& targets, const Tensor<T>& estimates, std::size_t n_active,
                                     std::span<const T> mixture, std::span<const std::size_t> perm,
                                     double eps = kSdrEps, double tau = kInactiveTau);

// Graph nodes for training; the assignment is fixed during the forward pass.
template <typename T>
ad::Var<T> pit_objective(ad::Context<T>& ctx, const ad::Var<T>& estimates, const Tensor<T>& targets,
                         PITResult* result = nullptr, double eps = kSdrEps);
template <typename T>
ad::Var<T> variable_sources_objective(ad::Context<T>& ctx, const ad::Var<T>& estimates, const Tensor<T>& targets,
                                      std::size_t n_active, const Tensor<T>& mixture, PITResult* result = nullptr,
                                      double eps = kSdrEps, double tau = kInactiveTau);

}  // namespace sudormrf
