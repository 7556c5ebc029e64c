#include "sudormrf/weights_io.hpp"

#include <string>

#include "sudormrf/bytes.hpp"
#include "sudormrf/error.hpp"

namespace sudormrf {
namespace {

constexpr std::uint32_t kDtypeFloat32 = 1;

std::uint32_t u32_of(std::size_t v, const char* field) {
  if (v > 0xFFFFFFFFu) throw ValidationError(std::string(field) + ": does not fit 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const ModelConfig& cfg, const ModelParams& params) {
  validate(cfg);
  check_layout(cfg, params);
  bytes::Writer w;
  w.tag("SDRF");
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(cfg.variant));
  for (std::size_t v : {cfg.num_sources, cfg.enc_basis, cfg.enc_kernel, cfg.block_channels, cfg.expanded_channels,
                        cfg.dw_kernel, cfg.dw_stride, cfg.depth, cfg.num_blocks, cfg.gc_groups, cfg.sample_rate}) {
    w.u32(u32_of(v, "config"));
  }
  w.u32(u32_of(params.size(), "tensor count"));
  for (const auto& e : params.entries()) {
    w.u32(u32_of(e.name.size(), "name length"));
    w.tag(e.name);
    w.u32(kDtypeFloat32);
    const Shape& s = e.tensor.shape();
    w.u32(u32_of(s.rank(), "rank"));
    for (std::size_t d : s.dims()) w.u32(u32_of(d, "dim"));
    for (float v : e.tensor.data()) w.f32(v);
  }
  return std::move(w.buffer());
}

WeightFile decode_weights(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, "weights");
  if (r.str(4) != "SDRF") throw IoError("weights: bad magic (expected SDRF)");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) {
    throw IoError("weights: version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kWeightsVersion) + ")");
  }
  WeightFile out;
  ModelConfig& c = out.cfg;
  const std::uint32_t variant = r.u32();
  if (variant > static_cast<std::uint32_t>(Variant::kCausal)) {
    throw ValidationError("variant: unknown code " + std::to_string(variant));
  }
  c.variant = static_cast<Variant>(variant);
  for (std::size_t* f : {&c.num_sources, &c.enc_basis, &c.enc_kernel, &c.block_channels, &c.expanded_channels,
                         &c.dw_kernel, &c.dw_stride, &c.depth, &c.num_blocks, &c.gc_groups, &c.sample_rate}) {
    *f = r.u32();
  }
  validate(c);

  const auto layout = param_layout(c);
  const std::uint32_t count = r.u32();
  if (count != layout.size()) {
    throw ValidationError("weights: " + std::to_string(count) + " tensors, config expects " +
                          std::to_string(layout.size()));
  }
  for (const ParamSpec& spec : layout) {
    const std::string name = r.str(r.u32());
    if (name != spec.name) throw ValidationError("weights: found tensor '" + name + "' where '" + spec.name + "' belongs");
    const std::uint32_t dtype = r.u32();
    if (dtype != kDtypeFloat32) throw ValidationError(name + ": dtype " + std::to_string(dtype) + " unsupported");
    const std::uint32_t rank = r.u32();
    if (rank != spec.shape.rank()) {
      throw ValidationError(name + ": rank " + std::to_string(rank) + ", expected " + std::to_string(spec.shape.rank()));
    }
    for (std::size_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d != spec.shape[i]) {
        throw ValidationError(name + ": dim " + std::to_string(i) + " is " + std::to_string(d) + ", expected " +
                              std::to_string(spec.shape[i]) + " (shape " + spec.shape.str() + ")");
      }
    }
    std::vector<float> values(spec.shape.numel());
    for (float& v : values) v = r.f32();
    out.params.add(name, spec.role, Tensor<float>(spec.shape, std::move(values)));
  }
  if (r.remaining() != 0) throw IoError("weights: " + std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

void weights_save(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params) {
  bytes::write_file(path, encode_weights(cfg, params));
}

WeightFile weights_load(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  try {
    return decode_weights(data);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace sudormrf
