#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sudormrf/config.hpp"
#include "sudormrf/params.hpp"

namespace sudormrf {

// Layout, all little-endian:
//   "SDRF" | u32 version | 12 x u32 config | u32 tensor count |
//   per tensor: u32 name length, name bytes, u32 dtype (1 = float32),
//               u32 rank, rank x u32 dims, float32 data
// Config fields in order: variant, num_sources, enc_basis, enc_kernel,
// block_channels, expanded_channels, dw_kernel, dw_stride, depth,
// num_blocks, gc_groups, sample_rate.
inline constexpr std::uint32_t kWeightsVersion = 1;

struct WeightFile {
  ModelConfig cfg;
  ModelParams params;
};

std::vector<std::uint8_t> encode_weights(const ModelConfig& cfg, const ModelParams& params);
// Checks magic and version (IoError), the config (ValidationError) and every
// tensor name and shape against the config's layout (ValidationError naming
// the tensor).
WeightFile decode_weights(std::span<const std::uint8_t> data);

void weights_save(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params);
WeightFile weights_load(const std::filesystem::path& path);

}  // namespace sudormrf
