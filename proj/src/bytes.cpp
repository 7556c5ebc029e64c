#include "sudormrf/bytes.hpp"

#include <fstream>
#include <iterator>

#include "sudormrf/error.hpp"

namespace sudormrf::bytes {

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  if (n > remaining()) {
    throw IoError(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                  ", have " + std::to_string(remaining()) + ")");
  }
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::string Reader::str(std::size_t n) {
  auto s = take(n);
  return std::string(s.begin(), s.end());
}

std::uint64_t Reader::get(int n) {
  auto s = take(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace sudormrf::bytes
