#include "sudormrf/toy_data.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "sudormrf/error.hpp"

namespace sudormrf {
namespace {

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

void remove_mean(std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  for (double& v : x) v -= m;
}

}  // namespace

ToyMixture make_toy_mixture(std::uint64_t seed, std::size_t samples, double snr_db) {
  if (samples == 0) throw ValidationError("samples: must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr double kRate = 8000.0;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  ToyMixture out;
  auto& tonal = out.sources[0];
  tonal.assign(samples, 0.0);
  // Three partials below 900 Hz, slow amplitude modulation.
  for (int k = 0; k < 3; ++k) {
    const double f = 120.0 + 250.0 * k + 120.0 * unit(rng);
    const double phase = kTwoPi * unit(rng);
    const double amp = 0.5 + 0.5 * unit(rng);
    const double fm = 1.0 + 3.0 * unit(rng);
    for (std::size_t t = 0; t < samples; ++t) {
      const double time = static_cast<double>(t) / kRate;
      tonal[t] += amp * (0.75 + 0.25 * std::sin(kTwoPi * fm * time)) * std::sin(kTwoPi * f * time + phase);
    }
  }

  // White noise through a resonant biquad centred in 1.8-3 kHz.
  auto& noise = out.sources[1];
  noise.assign(samples, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double fc = 1800.0 + 1200.0 * unit(rng);
  const double q = 2.0;
  const double w0 = kTwoPi * fc / kRate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    const double x0 = gauss(rng);
    const double y0 = b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x0;
    y2 = y1;
    y1 = y0;
    noise[t] = y0;
  }

  remove_mean(tonal);
  remove_mean(noise);
  const double e0 = energy(tonal), e1 = energy(noise);
  if (e0 <= 0.0 || e1 <= 0.0) throw NumericalError("toy mixture: silent source");
  const double gain = std::sqrt(e0 / (e1 * std::pow(10.0, snr_db / 10.0)));
  for (double& v : noise) v *= gain;

  out.mixture.resize(samples);
  for (std::size_t t = 0; t < samples; ++t) out.mixture[t] = tonal[t] + noise[t];
  return out;
}

ToyMixture standardized(const ToyMixture& m) {
  const double n = static_cast<double>(m.mixture.size());
  double mean = 0.0;
  for (double v : m.mixture) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : m.mixture) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
  ToyMixture out = m;
  for (double& v : out.mixture) v = (v - mean) * scale;
  // The mean is split evenly so the sources still sum to the mixture.
  for (auto& s : out.sources) {
    for (double& v : s) v = (v - mean / 2.0) * scale;
  }
  return out;
}

}  // namespace sudormrf
