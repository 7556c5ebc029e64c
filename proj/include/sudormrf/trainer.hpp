#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sudormrf/config.hpp"
#include "sudormrf/params.hpp"
#include "sudormrf/toy_data.hpp"

namespace sudormrf {

template <typename T>
struct OptimState {
  std::size_t step = 0;
  ParamStore<T> m;  // first moments, shaped like the parameters
  ParamStore<T> v;  // second moments
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimState init(const ParamStore<T>& params, double lr);
};

// Bias-corrected Adam. Throws ShapeError when grads or moments do not mirror
// params, NumericalError on a non-finite gradient (params left untouched).
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimState<T>& state);

// base_lr / factor^floor(epoch / decay_every).
double lr_schedule(std::size_t epoch, double base_lr, std::size_t decay_every, double factor);

struct TrainRecord {
  std::size_t epoch = 0;
  double loss = 0.0;         // mean PIT loss over the epoch, before the updates
  double si_sdri = 0.0;      // mean train-set SI-SDRi of the same estimates, dB
  std::uint64_t flops = 0;   // cumulative forward + backward FLOPs
  double seconds = 0.0;      // cumulative wall time
};

struct TrainOptions {
  std::size_t epochs = 500;
  std::size_t batch_size = 4;
  double base_lr = 3e-3;
  std::size_t decay_every = 200;
  double decay_factor = 2.0;
  std::uint64_t seed = 7;
  // Examples of a batch run concurrently; the reduction order is fixed.
  std::size_t threads = 1;
  // Stop early once an epoch reaches this SI-SDRi (0 disables).
  double target_si_sdri = 0.0;
  std::function<void(const TrainRecord&)> on_epoch;
};

template <typename T>
struct TrainResult {
  std::vector<TrainRecord> records;
  ParamStore<T> params;
  std::size_t steps = 0;
};

// ++ variant with B=2, Q=3, C_out=32, C_in=64, C_E=64 at 8 kHz.
ModelConfig toy_config();

// Fixed set of standardized 0 dB mixtures, seeds seed..seed+count-1.
std::vector<ToyMixture> toy_dataset(std::uint64_t seed, std::size_t count, std::size_t samples);

// Full-batch-in-order training with PIT SI-SDR; deterministic per seed.
// Throws NumericalError naming epoch and example if the loss diverges.
template <typename T>
TrainResult<T> train_toy(const ModelConfig& cfg, const std::vector<ToyMixture>& data, const TrainOptions& opts);

// Mean SI-SDRi of the model over the set.
template <typename T>
double dataset_si_sdri(const ModelConfig& cfg, const ParamStore<T>& params, const std::vector<ToyMixture>& data);

}  // namespace sudormrf
