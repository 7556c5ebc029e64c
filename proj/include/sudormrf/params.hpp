#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sudormrf/config.hpp"
#include "sudormrf/tensor.hpp"

namespace sudormrf {

enum class ParamRole { kKernel, kBias, kGain, kShift, kSlope };

std::string_view role_name(ParamRole role);

// Ordered, named collection of parameter tensors.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamRole role;
    Tensor<T> tensor;
  };

  void add(std::string name, ParamRole role, Tensor<T> tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t total_elements() const noexcept;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.role, e.tensor.template cast<U>());
    return out;
  }

  // Same names and shapes, all zeros.
  ParamStore zeros_like() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelParams = ParamStore<float>;

struct ParamSpec {
  std::string name;
  ParamRole role;
  Shape shape;
  std::size_t fan_in;  // scale of the uniform initializer for kernels
};

// Canonical names, shapes and order of every parameter for a config.
std::vector<ParamSpec> param_layout(const ModelConfig& cfg);

// Kernels ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, gains 1, shifts 0,
// PReLU slopes 0.25, attention gains 1. Deterministic per seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Throws ValidationError naming the first tensor that is missing, extra or
// shaped differently from the layout.
template <typename T>
void check_layout(const ModelConfig& cfg, const ParamStore<T>& params);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace sudormrf
