#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "sudormrf/config.hpp"

namespace sudormrf {

enum class Precision { kFloat32, kFloat64 };

// Flat key=value document. `variant` and `size` pick the defaults, every
// other model key overrides one field. Lines starting with '#' are comments.
struct RunConfig {
  ModelConfig model;
  double size = 1.0;
  std::string weights;
  std::string input;
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  std::size_t hop = 0;  // streaming chunk; 0 means one length multiple
};

// Throws ValidationError with the line number for unknown or repeated keys,
// malformed lines and bad values; the resulting model config is validated.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
// Every key, in a fixed order; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& cfg);

}  // namespace sudormrf
