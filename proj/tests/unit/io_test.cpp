#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "sudormrf/bytes.hpp"
#include "sudormrf/cli.hpp"
#include "sudormrf/error.hpp"
#include "sudormrf/run_config.hpp"
#include "sudormrf/toy_data.hpp"
#include "sudormrf/wav.hpp"
#include "sudormrf/weights_io.hpp"
#include "test_util.hpp"

namespace sudormrf {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("sudormrf_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

TEST(Wav, Float32RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  WavClip c;
  c.sample_rate = 16000;
  for (int i = 0; i < 777; ++i) c.samples.push_back(std::uniform_real_distribution<float>(-1, 1)(rng));
  c.samples.push_back(-0.0f);
  const WavClip back = wav_decode(wav_encode(c));
  EXPECT_EQ(back.sample_rate, 16000u);
  ASSERT_EQ(back.samples.size(), c.samples.size());
  EXPECT_EQ(std::memcmp(back.samples.data(), c.samples.data(), c.samples.size() * 4), 0);
}

TEST(Wav, Pcm16ScalingAndSaturation) {
  WavClip c;
  c.samples = {-1.0f, 0.5f, 2.0f, -3.0f, 32767.0f / 32768.0f};
  const WavClip back = wav_decode(wav_encode(c, WavEncoding::kPcm16));
  EXPECT_EQ(back.samples[0], -1.0f);
  EXPECT_EQ(back.samples[1], 0.5f);
  EXPECT_EQ(back.samples[2], 32767.0f / 32768.0f);
  EXPECT_EQ(back.samples[3], -1.0f);
  EXPECT_EQ(back.samples[4], 32767.0f / 32768.0f);
}

std::vector<std::uint8_t> with_u16(std::vector<std::uint8_t> b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v);
  b[at + 1] = static_cast<std::uint8_t>(v >> 8);
  return b;
}

TEST(Wav, UnsupportedFieldsAreNamed) {
  WavClip c;
  c.samples = {0.1f, 0.2f};
  const auto good = wav_encode(c, WavEncoding::kPcm16);
  // fmt chunk body starts at byte 20: format, channels, rate, byte rate, align, bits.
  EXPECT_NE(error_of([&] { wav_decode(with_u16(good, 22, 2)); }).find("channels"), std::string::npos);
  EXPECT_NE(error_of([&] { wav_decode(with_u16(good, 34, 24)); }).find("bits_per_sample"), std::string::npos);
  EXPECT_NE(error_of([&] { wav_decode(with_u16(good, 20, 2)); }).find("format"), std::string::npos);
  auto rate = good;
  rate[24] = 0x44;
  rate[25] = 0xAC;  // 44100
  EXPECT_NE(error_of([&] { wav_decode(rate); }).find("sample_rate"), std::string::npos);
  EXPECT_THROW(wav_decode(with_u16(good, 22, 2)), ValidationError);
  c.sample_rate = 22050;
  EXPECT_THROW(wav_encode(c), ValidationError);
}

TEST(Wav, MalformedDataIsAnIoError) {
  WavClip c;
  c.samples = {0.1f, 0.2f, 0.3f};
  auto bytes = wav_encode(c);
  bytes.resize(bytes.size() - 4);
  EXPECT_THROW(wav_decode(bytes), IoError);
  EXPECT_THROW(wav_decode(std::vector<std::uint8_t>{'R', 'I', 'F'}), IoError);
  EXPECT_THROW(wav_read("/nonexistent/x.wav"), IoError);
}

TEST(Wav, SkipsUnknownChunks) {
  WavClip c;
  c.samples = {0.25f};
  auto bytes = wav_encode(c);
  const std::vector<std::uint8_t> extra{'L', 'I', 'S', 'T', 3, 0, 0, 0, 1, 2, 3, 0};
  bytes.insert(bytes.begin() + 36, extra.begin(), extra.end());
  EXPECT_EQ(wav_decode(bytes).samples, c.samples);
}

TEST(Weights, RoundTripIsBitIdentical) {
  TempDir dir;
  const ModelConfig cfg = preset("base_0.25x");
  ModelParams p = init_params(cfg, 3);
  std::mt19937_64 rng(4);
  for (auto& e : p.entries()) e.tensor = testing::randn<float>(e.tensor.shape(), rng);
  weights_save(dir / "w.sdrf", cfg, p);
  const WeightFile back = weights_load(dir / "w.sdrf");
  EXPECT_EQ(back.cfg, cfg);
  ASSERT_EQ(back.params.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p.entries()[i];
    const auto& b = back.params.entries()[i];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.role, b.role);
    EXPECT_EQ(std::memcmp(a.tensor.ptr(), b.tensor.ptr(), a.tensor.numel() * 4), 0) << a.name;
  }
}

TEST(Weights, RoundTripAcrossRandomConfigs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    ModelConfig cfg = default_config(static_cast<Variant>(trial % 4), 0.25);
    cfg.num_sources = 2 + trial % 3;
    cfg.depth = 1 + trial % 4;
    cfg.block_channels = 16 * (1 + trial % 2);
    cfg.expanded_channels = 32;
    cfg.enc_basis = 8 + trial;
    cfg.gc_groups = 4;
    const ModelParams p = init_params(cfg, trial);
    const WeightFile back = decode_weights(encode_weights(cfg, p));
    EXPECT_EQ(back.cfg, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_TRUE(back.params.entries()[i].tensor == p.entries()[i].tensor);
  }
}

TEST(Weights, CorruptionIsReported) {
  const ModelConfig cfg = preset("causal_0.25x");
  const ModelParams p = init_params(cfg, 1);
  const auto good = encode_weights(cfg, p);

  auto bad_version = good;
  bad_version[4] += 1;
  EXPECT_NE(error_of([&] { decode_weights(bad_version); }).find("version"), std::string::npos);
  EXPECT_THROW(decode_weights(bad_version), IoError);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_weights(bad_magic), IoError);

  // First tensor: header 4 + 4 + 48 + 4, then name length, name, dtype, rank, dims.
  const std::string first = p.entries()[0].name;
  const std::size_t dim_at = 60 + 4 + first.size() + 4 + 4;
  auto bad_dim = good;
  bad_dim[dim_at] += 1;
  const std::string msg = error_of([&] { decode_weights(bad_dim); });
  EXPECT_NE(msg.find(first), std::string::npos) << msg;
  EXPECT_THROW(decode_weights(bad_dim), ValidationError);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_THROW(decode_weights(truncated), IoError);
}

TEST(RunConfig, ParsesAndOverrides) {
  const RunConfig rc = parse_run_config(
      "# causal quarter size\nvariant = causal\nsize = 0.25\n\nnum_blocks = 6\nseed = 42\nhop = 320\n"
      "precision = float64\nweights = w.sdrf\n");
  EXPECT_EQ(rc.model.variant, Variant::kCausal);
  EXPECT_EQ(rc.model.num_blocks, 6u);
  EXPECT_EQ(rc.model.block_channels, 256u);
  EXPECT_EQ(rc.seed, 42u);
  EXPECT_EQ(rc.hop, 320u);
  EXPECT_EQ(rc.precision, Precision::kFloat64);
  EXPECT_EQ(rc.weights, "w.sdrf");
}

TEST(RunConfig, DefaultsWhenEmpty) { EXPECT_EQ(parse_run_config("").model, default_config(Variant::kBase)); }

TEST(RunConfig, RejectsUnknownRepeatedAndMalformed) {
  EXPECT_NE(error_of([] { parse_run_config("variant = base\nlearning_rate = 3\n"); }).find("learning_rate"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_run_config("depth = 3\ndepth = 4\n"); }).find("line 2"), std::string::npos);
  EXPECT_THROW(parse_run_config("depth 3\n"), ValidationError);
  EXPECT_THROW(parse_run_config("depth = three\n"), ValidationError);
  EXPECT_THROW(parse_run_config("precision = half\n"), ValidationError);
  EXPECT_NE(error_of([] { parse_run_config("sample_rate = 44100\n"); }).find("sample_rate"), std::string::npos);
}

TEST(RunConfig, FormatRoundTrips) {
  RunConfig rc = parse_run_config("variant = plusplus_gc\nsize = 0.5\ngc_groups = 8\noutput_dir = out\n");
  const RunConfig back = parse_run_config(format_run_config(rc));
  EXPECT_EQ(back.model, rc.model);
  EXPECT_EQ(back.output_dir, "out");
  EXPECT_EQ(back.size, 0.5);
}

TEST(RunConfig, ShippedPresetsLoad) {
  const fs::path dir = fs::path(SUDORMRF_SOURCE_DIR) / "configs";
  for (const char* name : {"base_1.0x", "base_0.5x", "base_0.25x", "plusplus_1.0x", "plusplus_gc_1.0x",
                           "causal_0.5x", "causal_0.25x"}) {
    EXPECT_EQ(load_run_config(dir / (std::string(name) + ".cfg")).model, preset(name)) << name;
  }
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sudormrf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, ProfileReportsPaperScaleCounts) {
  const auto r = cli({"profile", "--config", (fs::path(SUDORMRF_SOURCE_DIR) / "configs/base_1.0x.cfg").string(),
                      "--samples", "8000", "--json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["params_total"].get<double>() / 2.72e6, 1.0, 0.05);
  EXPECT_NEAR(j["flops_forward"].get<double>() / 2.45e9, 1.0, 0.15);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"profile"}).code, kExitUsage);
  EXPECT_EQ(cli({"profile", "--config", "base_1.0x", "--mac-flops", "3"}).code, kExitUsage);
  EXPECT_EQ(cli({"profile", "--config", "mystery_1.0x"}).code, kExitValidation);
  EXPECT_EQ(cli({"separate", "--weights", "/nonexistent.sdrf", "--input", "x.wav"}).code, kExitIo);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, SeparateWritesOneFilePerSource) {
  TempDir dir;
  ModelConfig cfg = preset("plusplus_1.0x");
  cfg.num_sources = 3;
  cfg.num_blocks = 1;
  cfg.enc_basis = 32;
  weights_save(dir / "w.sdrf", cfg, init_params(cfg, 1));
  const ToyMixture m = make_toy_mixture(1, 1234, 0.0);
  WavClip clip;
  for (double v : m.mixture) clip.samples.push_back(static_cast<float>(0.1 * v));
  wav_write(dir / "mix.wav", clip, WavEncoding::kPcm16);
  const auto r = cli({"separate", "--weights", (dir / "w.sdrf").string(), "--input", (dir / "mix.wav").string(),
                      "--output-dir", (dir / "out").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["outputs"].size(), 3u);
  for (const auto& p : j["outputs"]) EXPECT_EQ(wav_read(p.get<std::string>()).samples.size(), 1234u);

  clip.sample_rate = 16000;
  wav_write(dir / "mix16.wav", clip);
  const auto wrong = cli({"separate", "--weights", (dir / "w.sdrf").string(), "--input", (dir / "mix16.wav").string()});
  EXPECT_EQ(wrong.code, kExitValidation);
  EXPECT_NE(wrong.err.find("sample_rate"), std::string::npos);
}

TEST(Cli, StreamReportsLatency) {
  TempDir dir;
  ModelConfig cfg = preset("causal_0.25x");
  cfg.num_blocks = 1;
  cfg.block_channels = 16;
  cfg.expanded_channels = 32;
  cfg.enc_basis = 32;
  weights_save(dir / "c.sdrf", cfg, init_params(cfg, 1));
  WavClip clip;
  clip.samples.assign(1000, 0.0f);
  for (std::size_t t = 0; t < 1000; ++t) clip.samples[t] = static_cast<float>(0.3 * std::sin(0.05 * t));
  wav_write(dir / "mix.wav", clip);
  const auto r = cli({"stream", "--weights", (dir / "c.sdrf").string(), "--input", (dir / "mix.wav").string(),
                      "--output-dir", dir.path().string(), "--hop", "320"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["latency_samples"].get<std::size_t>(), 320u + 9);
  EXPECT_EQ(j["chunks"].get<std::size_t>(), 4u);
  EXPECT_EQ(wav_read(j["outputs"][0].get<std::string>()).samples.size(), 1000u);
}

TEST(Cli, EvalIdenticalFilesReachTheCeiling) {
  TempDir dir;
  std::mt19937_64 rng(3);
  std::vector<std::string> paths;
  for (int i = 0; i < 2; ++i) {
    // Unit variance, 8000 samples.
    const ToyMixture m = standardized(make_toy_mixture(20 + i, 8000, 0.0));
    WavClip c;
    for (double v : m.mixture) c.samples.push_back(static_cast<float>(v));
    paths.push_back((dir / ("s" + std::to_string(i) + ".wav")).string());
    wav_write(paths.back(), c);
  }
  const auto r = cli({"eval", "--targets", paths[0], paths[1], "--estimates", paths[0], paths[1]});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["si_sdr"].get<double>(), 129.0, 0.1);
  EXPECT_EQ(j["n_active"].get<std::size_t>(), 2u);
}

TEST(Cli, TrainToyWritesLoadableWeights) {
  TempDir dir;
  const auto r = cli({"train-toy", "--epochs", "2", "--samples", "800", "--output", (dir / "t.sdrf").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).contains("command"));
    ++n;
  }
  EXPECT_EQ(n, 3u);
  EXPECT_NO_THROW(weights_load(dir / "t.sdrf"));
}

}  // namespace
}  // namespace sudormrf
