#include "sudormrf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <thread>

#include "sudormrf/error.hpp"
#include "sudormrf/losses.hpp"
#include "sudormrf/model.hpp"

namespace sudormrf {

template <typename T>
OptimState<T> OptimState<T>::init(const ParamStore<T>& params, double lr) {
  OptimState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  s.lr = lr;
  return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimState<T>& state) {
  auto& pe = params.entries();
  const auto& ge = grads.entries();
  auto& me = state.m.entries();
  auto& ve = state.v.entries();
  if (ge.size() != pe.size() || me.size() != pe.size() || ve.size() != pe.size()) {
    throw ShapeError("adam_step: " + std::to_string(pe.size()) + " parameters but " + std::to_string(ge.size()) +
                     " gradients");
  }
  for (std::size_t i = 0; i < pe.size(); ++i) {
    const Shape& s = pe[i].tensor.shape();
    if (ge[i].tensor.shape() != s || me[i].tensor.shape() != s || ve[i].tensor.shape() != s) {
      throw ShapeError("adam_step: " + pe[i].name + " expects " + s.str() + ", gradient is " +
                       ge[i].tensor.shape().str());
    }
    if (!ge[i].tensor.all_finite()) throw NumericalError("adam_step: non-finite gradient in " + pe[i].name);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < pe.size(); ++i) {
    auto p = pe[i].tensor.data();
    auto g = ge[i].tensor.data();
    auto m = me[i].tensor.data();
    auto v = ve[i].tensor.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - state.lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps));
    }
  }
}

double lr_schedule(std::size_t epoch, double base_lr, std::size_t decay_every, double factor) {
  if (decay_every == 0) return base_lr;
  return base_lr / std::pow(factor, static_cast<double>(epoch / decay_every));
}

ModelConfig toy_config() {
  ModelConfig cfg = default_config(Variant::kPlusPlus, 1.0, 8000);
  cfg.num_blocks = 2;
  cfg.depth = 3;
  cfg.block_channels = 32;
  cfg.expanded_channels = 64;
  cfg.enc_basis = 64;
  validate(cfg);
  return cfg;
}

std::vector<ToyMixture> toy_dataset(std::uint64_t seed, std::size_t count, std::size_t samples) {
  std::vector<ToyMixture> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(standardized(make_toy_mixture(seed + i, samples, 0.0)));
  return out;
}

namespace {

template <typename T>
struct Example {
  Tensor<T> mixture;  // [1, T]
  Tensor<T> targets;  // [2, T]
};

template <typename T>
Example<T> to_tensors(const ToyMixture& m) {
  const std::size_t n = m.mixture.size();
  Example<T> e{Tensor<T>(Shape{1, n}), Tensor<T>(Shape{2, n})};
  for (std::size_t t = 0; t < n; ++t) {
    e.mixture.at(0, t) = static_cast<T>(m.mixture[t]);
    for (std::size_t i = 0; i < 2; ++i) e.targets.at(i, t) = static_cast<T>(m.sources[i][t]);
  }
  return e;
}

template <typename T>
struct StepResult {
  double loss = 0.0;
  double si_sdri = 0.0;
  ParamStore<T> grads;
  FlopRecorder rec;
};

template <typename T>
StepResult<T> forward_backward(const ModelConfig& cfg, const ParamStore<T>& params, const Example<T>& ex) {
  StepResult<T> r;
  ad::Context<T> ctx(true, &r.rec);
  BoundParams<T> bound(ctx, params);
  const ad::Var<T> est = model::forward(ctx, cfg, bound, ctx.constant(ex.mixture));
  PITResult pit;
  const ad::Var<T> loss = pit_objective(ctx, est, ex.targets, &pit);
  r.loss = pit.loss;
  if (!std::isfinite(r.loss)) return r;
  ad::backward(loss);
  r.grads = bound.grads();
  r.si_sdri = eval_si_sdri(ex.targets, est->val(), ex.mixture.data()).si_sdri;
  return r;
}

}  // namespace

template <typename T>
TrainResult<T> train_toy(const ModelConfig& cfg, const std::vector<ToyMixture>& data, const TrainOptions& opts) {
  validate(cfg);
  if (data.empty()) throw ValidationError("data: empty training set");
  if (opts.batch_size == 0) throw ValidationError("batch_size: must be positive");
  if (cfg.num_sources != 2) throw ValidationError("num_sources: toy data has 2 sources");
  std::vector<Example<T>> examples;
  for (const auto& m : data) {
    if (m.mixture.size() % cfg.length_multiple() != 0) {
      throw ValidationError("samples: " + std::to_string(m.mixture.size()) + " is not a multiple of " +
                            std::to_string(cfg.length_multiple()));
    }
    examples.push_back(to_tensors<T>(m));
  }

  TrainResult<T> out;
  out.params = init_params(cfg, opts.seed).template cast<T>();
  OptimState<T> state = OptimState<T>::init(out.params, opts.base_lr);
  const auto start = std::chrono::steady_clock::now();
  std::uint64_t flops = 0;
  const std::size_t threads = std::max<std::size_t>(opts.threads, 1);

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    state.lr = lr_schedule(epoch, opts.base_lr, opts.decay_every, opts.decay_factor);
    double loss_sum = 0.0, sdri_sum = 0.0;
    for (std::size_t b0 = 0; b0 < examples.size(); b0 += opts.batch_size) {
      const std::size_t b1 = std::min(b0 + opts.batch_size, examples.size());
      std::vector<StepResult<T>> results(b1 - b0);
      auto work = [&](std::size_t lane) {
        for (std::size_t i = b0 + lane; i < b1; i += threads) {
          results[i - b0] = forward_backward(cfg, out.params, examples[i]);
        }
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t lane = 0; lane < std::min(threads, b1 - b0); ++lane) pool.emplace_back(work, lane);
      }

      ParamStore<T> grads = out.params.zeros_like();
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        if (!std::isfinite(r.loss)) {
          throw NumericalError("train_toy: non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                               std::to_string(b0 + i));
        }
        loss_sum += r.loss;
        sdri_sum += r.si_sdri;
        flops += r.rec.flops();
        for (std::size_t k = 0; k < grads.size(); ++k) {
          auto dst = grads.entries()[k].tensor.data();
          auto src = r.grads.entries()[k].tensor.data();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<T>(src[j] * inv);
        }
      }
      adam_step(out.params, grads, state);
      ++out.steps;
    }

    TrainRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(examples.size());
    rec.si_sdri = sdri_sum / static_cast<double>(examples.size());
    rec.flops = flops;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.records.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (opts.target_si_sdri > 0.0 && rec.si_sdri >= opts.target_si_sdri) break;
  }
  return out;
}

template <typename T>
double dataset_si_sdri(const ModelConfig& cfg, const ParamStore<T>& params, const std::vector<ToyMixture>& data) {
  if (data.empty()) throw ValidationError("data: empty set");
  double sum = 0.0;
  for (const auto& m : data) {
    const Example<T> ex = to_tensors<T>(m);
    const Tensor<T> est = run_forward(cfg, params, ex.mixture);
    sum += eval_si_sdri(ex.targets, est, ex.mixture.data()).si_sdri;
  }
  return sum / static_cast<double>(data.size());
}

#define SUDORMRF_INSTANTIATE(T)                                                                              \
  template struct OptimState<T>;                                                                             \
  template void adam_step(ParamStore<T>&, const ParamStore<T>&, OptimState<T>&);                             \
  template TrainResult<T> train_toy<T>(const ModelConfig&, const std::vector<ToyMixture>&, const TrainOptions&); \
  template double dataset_si_sdri(const ModelConfig&, const ParamStore<T>&, const std::vector<ToyMixture>&);

SUDORMRF_INSTANTIATE(float)
SUDORMRF_INSTANTIATE(double)

}  // namespace sudormrf
