#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sudormrf/autodiff.hpp"
#include "sudormrf/config.hpp"

namespace sudormrf {

struct GradCheckOptions {
  double step = 2e-4;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error.
  double floor = 1e-5;
  std::size_t max_probes_per_tensor = 48;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  // Probes where central differences at step and step/2 disagree: the
  // function has a kink (ReLU, PReLU, assignment switch) within reach.
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

using GraphFn =
    std::function<ad::Var<double>(ad::Context<double>&, const std::vector<ad::Var<double>>&)>;

// Checks d<r, fn(leaves)>/d leaves against central differences, with r a
// fixed random projection of the output.
GradCheckResult check_graph(const std::string& name, std::vector<Tensor<double>>& leaves, const GraphFn& fn,
                            const GradCheckOptions& opts = {});

std::vector<GradCheckResult> kernel_gradient_suite(const GradCheckOptions& opts = {});
std::vector<GradCheckResult> loss_gradient_suite(const GradCheckOptions& opts = {});

// Small end-to-end configuration for a variant (B=1, Q=2, C_out=8, C_in=16,
// C_E=16; GC uses 4 groups).
ModelConfig tiny_config(Variant variant);
// Input length 160 samples.
GradCheckResult model_gradient_check(const ModelConfig& cfg, const GradCheckOptions& opts = {});

// max |<conv(u), v> - <u, convT(v)>| / (|u| |v|) over randomized geometries.
double conv_adjoint_residual(std::uint64_t seed, std::size_t trials);

}  // namespace sudormrf
