#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sudormrf {

struct WavClip {
  std::uint32_t sample_rate = 8000;  // 8000 or 16000
  std::vector<float> samples;        // mono
};

enum class WavEncoding { kPcm16, kFloat32 };

// PCM16 decodes as v / 32768; float32 is read as stored. Unsupported
// encodings, rates or channel counts throw ValidationError naming the field
// ("format", "bits_per_sample", "sample_rate", "channels"); malformed or
// truncated data throws IoError.
WavClip wav_decode(std::span<const std::uint8_t> bytes);
WavClip wav_read(const std::filesystem::path& path);

// PCM16 rounds v * 32768 and saturates to [-32768, 32767].
std::vector<std::uint8_t> wav_encode(const WavClip& clip, WavEncoding enc = WavEncoding::kFloat32);
void wav_write(const std::filesystem::path& path, const WavClip& clip, WavEncoding enc = WavEncoding::kFloat32);

}  // namespace sudormrf
