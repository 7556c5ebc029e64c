#include "sudormrf/wav.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sudormrf/bytes.hpp"
#include "sudormrf/error.hpp"

namespace sudormrf {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

void check_rate(std::uint32_t rate) {
  if (rate != 8000 && rate != 16000) {
    throw ValidationError("sample_rate: " + std::to_string(rate) + " Hz unsupported (8000 or 16000)");
  }
}

}  // namespace

WavClip wav_decode(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, "wav");
  if (r.str(4) != "RIFF") throw IoError("wav: missing RIFF header");
  r.u32();
  if (r.str(4) != "WAVE") throw IoError("wav: RIFF type is not WAVE");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    const std::string id = r.str(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      bytes::Reader f(r.take(size), "wav fmt chunk");
      format = f.u16();
      channels = f.u16();
      rate = f.u32();
      f.u32();
      f.u16();
      bits = f.u16();
      if (format == kFormatExtensible) {
        f.u16();
        f.u16();
        f.u32();
        format = f.u16();  // leading bytes of the subformat GUID
      }
      have_fmt = true;
      if (size % 2) r.skip(std::min<std::size_t>(1, r.remaining()));
    } else if (id == "data") {
      if (!have_fmt) throw IoError("wav: data chunk before fmt chunk");
      if (channels != 1) throw ValidationError("channels: " + std::to_string(channels) + " unsupported (mono only)");
      check_rate(rate);
      std::size_t width = 0;
      if (format == kFormatPcm && bits == 16) {
        width = 2;
      } else if (format == kFormatFloat && bits == 32) {
        width = 4;
      } else if (format != kFormatPcm && format != kFormatFloat) {
        throw ValidationError("format: code " + std::to_string(format) + " unsupported (PCM or IEEE float)");
      } else {
        throw ValidationError("bits_per_sample: " + std::to_string(bits) + " unsupported for format " +
                              std::to_string(format) + " (PCM 16 or float 32)");
      }
      // Some writers leave the size field at 0 or oversize while streaming.
      const std::size_t avail = std::min<std::size_t>(size, r.remaining());
      if (size != 0xFFFFFFFFu && size > r.remaining()) {
        throw IoError("wav: data chunk truncated (" + std::to_string(r.remaining()) + " of " +
                      std::to_string(size) + " bytes)");
      }
      bytes::Reader d(r.take(avail - avail % width), "wav data");
      WavClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(avail / width);
      for (float& v : clip.samples) v = width == 2 ? static_cast<float>(d.i16()) / 32768.0f : d.f32();
      return clip;
    } else {
      r.skip(std::min<std::size_t>(size + (size % 2), r.remaining()));
    }
  }
  throw IoError(have_fmt ? "wav: no data chunk" : "wav: no fmt chunk");
}

WavClip wav_read(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  try {
    return wav_decode(data);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> wav_encode(const WavClip& clip, WavEncoding enc) {
  check_rate(clip.sample_rate);
  const std::uint16_t width = enc == WavEncoding::kPcm16 ? 2 : 4;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * width);
  bytes::Writer w;
  w.tag("RIFF");
  w.u32(36 + data_size);
  w.tag("WAVE");
  w.tag("fmt ");
  w.u32(16);
  w.u16(enc == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat);
  w.u16(1);
  w.u32(clip.sample_rate);
  w.u32(clip.sample_rate * width);
  w.u16(width);
  w.u16(static_cast<std::uint16_t>(8 * width));
  w.tag("data");
  w.u32(data_size);
  for (float v : clip.samples) {
    if (enc == WavEncoding::kFloat32) {
      w.f32(v);
    } else {
      const double q = std::isnan(v) ? 0.0 : std::nearbyint(static_cast<double>(v) * 32768.0);
      w.i16(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0)));
    }
  }
  return std::move(w.buffer());
}

void wav_write(const std::filesystem::path& path, const WavClip& clip, WavEncoding enc) {
  bytes::write_file(path, wav_encode(clip, enc));
}

}  // namespace sudormrf
