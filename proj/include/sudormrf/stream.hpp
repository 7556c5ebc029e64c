#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sudormrf/config.hpp"
#include "sudormrf/params.hpp"

namespace sudormrf {

// Past context carried between pushes.
struct StreamState {
  std::vector<float> encoder;                // last K_E - 1 input samples
  std::vector<std::vector<float>> levels;    // per depthwise conv: [C_in, K_in - 1] past frames
  std::vector<float> decoder_tail;           // [N, K_E - hop_E] pending overlap-add samples
  std::size_t samples_seen = 0;

  bool operator==(const StreamState&) const = default;
};

// Chunked inference for the causal variant. Each push of `hop` samples
// returns the `hop` newest output samples per source; concatenated pushes
// equal the batch forward over the concatenated input. Not thread-safe:
// one session per stream.
class StreamSession {
 public:
  StreamSession(const ModelConfig& cfg, const ModelParams& params, std::size_t hop);

  // Returns [N, hop].
  Tensor<float> push(std::span<const float> chunk);
  void reset();

  const StreamState& state() const noexcept { return state_; }
  std::size_t hop() const noexcept { return hop_; }
  // Samples between an input sample arriving and the last output sample it
  // can influence leaving: one full hop of buffering plus the encoder hop.
  std::size_t latency_samples() const noexcept { return hop_ + cfg_.enc_stride() - 1; }

 private:
  Tensor<float> causal_depthwise(const Tensor<float>& x, std::size_t level_index, const std::string& name,
                                 std::size_t stride);

  ModelConfig cfg_;
  const ModelParams* params_;
  std::size_t hop_;
  StreamState state_;
};

}  // namespace sudormrf
