#include "sudormrf/config.hpp"

#include <cmath>
#include <sstream>

#include "sudormrf/error.hpp"

namespace sudormrf {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kPlusPlus: return "plusplus";
    case Variant::kPlusPlusGC: return "plusplus_gc";
    case Variant::kCausal: return "causal";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kBase, Variant::kPlusPlus, Variant::kPlusPlusGC, Variant::kCausal}) {
    if (variant_name(v) == name) return v;
  }
  throw ValidationError("variant: unknown value '" + std::string(name) +
                        "' (expected base, plusplus, plusplus_gc or causal)");
}

std::size_t ModelConfig::length_multiple() const {
  std::size_t m = enc_stride();
  for (std::size_t i = 0; i < depth; ++i) m *= dw_stride;
  return m;
}

namespace {
void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw ValidationError(std::string(field) + ": " + why);
}
}  // namespace

void validate(const ModelConfig& c) {
  require(c.num_sources >= 1 && c.num_sources <= 6, "num_sources", "must be in 1..6");
  require(c.enc_basis >= 1, "enc_basis", "must be positive");
  require(c.enc_kernel >= 2, "enc_kernel", "must be at least 2");
  require(c.block_channels >= 1, "block_channels", "must be positive");
  require(c.expanded_channels >= 1, "expanded_channels", "must be positive");
  require(c.dw_kernel >= 1, "dw_kernel", "must be positive");
  require(c.dw_stride >= 2, "dw_stride", "must be at least 2");
  require(c.depth >= 1 && c.depth <= 16, "depth", "must be in 1..16");
  require(c.num_blocks >= 1, "num_blocks", "must be positive");
  require(c.sample_rate == 8000 || c.sample_rate == 16000, "sample_rate", "must be 8000 or 16000");
  if (c.variant == Variant::kPlusPlusGC) {
    require(c.gc_groups >= 1, "gc_groups", "must be positive");
    require(c.block_channels % c.gc_groups == 0, "gc_groups", "must divide block_channels");
    require(c.expanded_channels % c.gc_groups == 0, "gc_groups", "must divide expanded_channels");
  }
}

ModelConfig default_config(Variant variant, double size, std::size_t sample_rate) {
  ModelConfig c;
  c.variant = variant;
  c.sample_rate = sample_rate;
  c.enc_kernel = sample_rate == 16000 ? 41 : 21;
  const double blocks = 16.0 * size;
  if (blocks < 1.0 || std::abs(blocks - std::round(blocks)) > 1e-9) {
    throw ValidationError("size: " + std::to_string(size) + " does not give a whole number of blocks");
  }
  c.num_blocks = static_cast<std::size_t>(std::lround(blocks));
  if (variant == Variant::kCausal) {
    c.block_channels = 256;
    c.dw_kernel = 11;
  }
  validate(c);
  return c;
}

ModelConfig preset(std::string_view name) {
  const auto us = name.rfind('_');
  if (us == std::string_view::npos || name.back() != 'x') {
    throw ValidationError("preset: '" + std::string(name) + "' is not of the form <variant>_<size>x");
  }
  const Variant v = parse_variant(name.substr(0, us));
  const std::string size_str(name.substr(us + 1, name.size() - us - 2));
  double size = 0.0;
  try {
    size = std::stod(size_str);
  } catch (const std::exception&) {
    throw ValidationError("preset: bad size '" + size_str + "'");
  }
  return default_config(v, size);
}

std::string describe(const ModelConfig& c) {
  std::ostringstream os;
  os << variant_name(c.variant) << " N=" << c.num_sources << " C_E=" << c.enc_basis << " K_E=" << c.enc_kernel
     << " C_out=" << c.block_channels << " C_in=" << c.expanded_channels << " K_in=" << c.dw_kernel
     << " S_in=" << c.dw_stride << " Q=" << c.depth << " B=" << c.num_blocks;
  if (c.variant == Variant::kPlusPlusGC) os << " G=" << c.gc_groups;
  os << " fs=" << c.sample_rate;
  return os.str();
}

}  // namespace sudormrf
