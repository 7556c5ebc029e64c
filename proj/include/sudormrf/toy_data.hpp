#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace sudormrf {

// Two synthetic sources and their sum. Source 0 is a bank of low-frequency
// sinusoids, source 1 band-pass filtered noise; both are zero mean.
struct ToyMixture {
  std::vector<double> mixture;
  std::array<std::vector<double>, 2> sources;
};

// 10 log10(|s0|^2 / |s1|^2) == snr_db; mixture == s0 + s1 exactly.
ToyMixture make_toy_mixture(std::uint64_t seed, std::size_t samples, double snr_db);

// Subtracts the mixture mean and divides everything by the mixture std.
ToyMixture standardized(const ToyMixture& m);

}  // namespace sudormrf
