#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "sudormrf/kernels.hpp"

namespace sudormrf {

enum class Variant { kBase, kPlusPlus, kPlusPlusGC, kCausal };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::kBase;
  std::size_t num_sources = 2;         // N
  std::size_t enc_basis = 512;         // C_E
  std::size_t enc_kernel = 21;         // K_E, hop floor(K_E / 2)
  std::size_t block_channels = 128;    // C_out
  std::size_t expanded_channels = 512; // C_in
  std::size_t dw_kernel = 5;           // K_in
  std::size_t dw_stride = 2;           // S_in
  std::size_t depth = 4;               // Q
  std::size_t num_blocks = 16;         // B
  std::size_t gc_groups = 16;
  std::size_t sample_rate = 8000;

  std::size_t enc_stride() const { return enc_kernel / 2; }
  // Input lengths that are multiples of this survive every resampling exactly.
  std::size_t length_multiple() const;
  bool causal() const { return variant == Variant::kCausal; }
  bool has_norms() const { return variant != Variant::kCausal; }
  bool masks() const { return variant == Variant::kBase; }
  bool shared_decoder() const { return variant != Variant::kBase; }
  bool per_channel_slopes() const { return variant == Variant::kBase; }
  std::size_t groups() const { return variant == Variant::kPlusPlusGC ? gc_groups : 1; }
  kernels::NormKind norm_kind() const {
    return variant == Variant::kBase ? kernels::NormKind::kLayer : kernels::NormKind::kGlobal;
  }
  kernels::Padding padding() const { return causal() ? kernels::Padding::kCausal : kernels::Padding::kSymmetric; }
  // Decoder geometry: the mirror of the encoder's, so the causal decoder
  // writes only at and after each frame's own position.
  kernels::Padding decoder_padding() const {
    return causal() ? kernels::Padding::kLookahead : kernels::Padding::kSymmetric;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Throws ValidationError naming the first offending field.
void validate(const ModelConfig& cfg);

// Defaults for a variant at a size multiplier (2.0, 1.0, 0.5 or 0.25, i.e.
// 32, 16, 8 or 4 blocks).
ModelConfig default_config(Variant variant, double size = 1.0, std::size_t sample_rate = 8000);

// Named presets such as "base_1.0x", "plusplus_0.5x", "plusplus_gc_1.0x",
// "causal_0.25x".
ModelConfig preset(std::string_view name);

std::string describe(const ModelConfig& cfg);

}  // namespace sudormrf
