#include "sudormrf/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include "sudormrf/error.hpp"

namespace sudormrf {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view v, const std::string& where) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError(where + ": '" + std::string(v) + "' is not a valid number");
  }
  return out;
}

std::size_t* model_field(ModelConfig& m, std::string_view key) {
  static const std::map<std::string_view, std::size_t ModelConfig::*, std::less<>> fields = {
      {"num_sources", &ModelConfig::num_sources},         {"enc_basis", &ModelConfig::enc_basis},
      {"enc_kernel", &ModelConfig::enc_kernel},           {"block_channels", &ModelConfig::block_channels},
      {"expanded_channels", &ModelConfig::expanded_channels}, {"dw_kernel", &ModelConfig::dw_kernel},
      {"dw_stride", &ModelConfig::dw_stride},             {"depth", &ModelConfig::depth},
      {"num_blocks", &ModelConfig::num_blocks},           {"gc_groups", &ModelConfig::gc_groups},
      {"sample_rate", &ModelConfig::sample_rate},
  };
  const auto it = fields.find(key);
  return it == fields.end() ? nullptr : &(m.*(it->second));
}

constexpr std::string_view kModelKeys[] = {"num_sources", "enc_basis",  "enc_kernel", "block_channels",
                                           "expanded_channels", "dw_kernel", "dw_stride", "depth",
                                           "num_blocks", "gc_groups", "sample_rate"};

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  std::map<std::string, std::pair<std::string, std::size_t>, std::less<>> kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ValidationError(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ValidationError(where + ": empty key");
    if (!kv.emplace(key, std::make_pair(value, line_no)).second) {
      throw ValidationError(where + ": repeated key '" + key + "'");
    }
  }

  RunConfig rc;
  auto where = [&](const std::string& key) { return "line " + std::to_string(kv.at(key).second) + ": " + key; };
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second.first;
  };

  Variant variant = Variant::kBase;
  if (auto v = take("variant")) {
    try {
      variant = parse_variant(*v);
    } catch (const ValidationError& e) {
      throw ValidationError(where("variant") + ": " + e.what());
    }
  }
  if (auto v = take("size")) rc.size = parse_number<double>(*v, where("size"));
  std::size_t rate = 8000;
  if (auto v = take("sample_rate")) rate = parse_number<std::size_t>(*v, where("sample_rate"));
  rc.model = default_config(variant, rc.size, rate);

  for (const auto& [key, entry] : kv) {
    if (key == "variant" || key == "size" || key == "sample_rate") continue;
    const std::string& value = entry.first;
    if (std::size_t* f = model_field(rc.model, key)) {
      *f = parse_number<std::size_t>(value, where(key));
    } else if (key == "weights") {
      rc.weights = value;
    } else if (key == "input") {
      rc.input = value;
    } else if (key == "output_dir") {
      rc.output_dir = value;
    } else if (key == "seed") {
      rc.seed = parse_number<std::uint64_t>(value, where(key));
    } else if (key == "hop") {
      rc.hop = parse_number<std::size_t>(value, where(key));
    } else if (key == "precision") {
      if (value == "float32") {
        rc.precision = Precision::kFloat32;
      } else if (value == "float64") {
        rc.precision = Precision::kFloat64;
      } else {
        throw ValidationError(where(key) + ": '" + value + "' (float32 or float64)");
      }
    } else {
      throw ValidationError("line " + std::to_string(entry.second) + ": unknown key '" + key + "'");
    }
  }
  validate(rc.model);
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& rc) {
  std::ostringstream os;
  os.precision(17);
  os << "variant = " << variant_name(rc.model.variant) << "\n";
  os << "size = " << rc.size << "\n";
  ModelConfig m = rc.model;
  for (std::string_view key : kModelKeys) os << key << " = " << *model_field(m, key) << "\n";
  os << "weights = " << rc.weights << "\n";
  os << "input = " << rc.input << "\n";
  os << "output_dir = " << rc.output_dir << "\n";
  os << "seed = " << rc.seed << "\n";
  os << "precision = " << (rc.precision == Precision::kFloat64 ? "float64" : "float32") << "\n";
  os << "hop = " << rc.hop << "\n";
  return os.str();
}

}  // namespace sudormrf
