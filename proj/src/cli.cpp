#include "sudormrf/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <ostream>

#include "sudormrf/cost.hpp"
#include "sudormrf/error.hpp"
#include "sudormrf/gradcheck.hpp"
#include "sudormrf/losses.hpp"
#include "sudormrf/model.hpp"
#include "sudormrf/run_config.hpp"
#include "sudormrf/stream.hpp"
#include "sudormrf/trainer.hpp"
#include "sudormrf/wav.hpp"
#include "sudormrf/weights_io.hpp"

namespace sudormrf {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// A run-config file if the path exists, otherwise a preset name.
RunConfig resolve_config(const std::string& spec) {
  if (fs::exists(spec)) return load_run_config(spec);
  RunConfig rc;
  try {
    rc.model = preset(spec);
  } catch (const ValidationError& e) {
    throw ValidationError("config: '" + spec + "' is neither a readable file nor a preset (" + e.what() + ")");
  }
  return rc;
}

struct Common {
  std::string config;
  std::string weights;
  std::string input;
  std::string output_dir;
};

// Model and weights for commands that run inference. The weight file
// carries its own config; an explicit config must agree with it.
WeightFile load_model(const Common& c, RunConfig* rc_out) {
  RunConfig rc;
  if (!c.config.empty()) rc = resolve_config(c.config);
  const std::string path = !c.weights.empty() ? c.weights : rc.weights;
  if (path.empty()) throw ValidationError("weights: no weight file given (--weights or weights = ...)");
  WeightFile wf = weights_load(path);
  if (!c.config.empty() && !(rc.model == wf.cfg)) {
    throw ValidationError("config: '" + c.config + "' (" + describe(rc.model) + ") does not match the weights (" +
                          describe(wf.cfg) + ")");
  }
  rc.model = wf.cfg;
  if (rc_out) *rc_out = rc;
  return wf;
}

std::string pick(const std::string& flag, const std::string& from_config, const char* what) {
  const std::string v = !flag.empty() ? flag : from_config;
  if (v.empty()) throw ValidationError(std::string(what) + ": not given");
  return v;
}

void check_rate(const WavClip& clip, const ModelConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw ValidationError("sample_rate: input is " + std::to_string(clip.sample_rate) + " Hz, model expects " +
                          std::to_string(cfg.sample_rate) + " Hz");
  }
}

std::vector<std::string> write_sources(const Tensor<float>& est, std::size_t rate, const fs::path& dir,
                                       const std::string& stem) {
  fs::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < est.dim(0); ++i) {
    WavClip out;
    out.sample_rate = static_cast<std::uint32_t>(rate);
    out.samples.assign(est.data().begin() + static_cast<std::ptrdiff_t>(i * est.dim(1)),
                       est.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * est.dim(1)));
    const fs::path p = dir / (stem + "_source" + std::to_string(i) + ".wav");
    wav_write(p, out);
    paths.push_back(p.string());
  }
  return paths;
}

int run_separate(const Common& c, std::ostream& out) {
  RunConfig rc;
  const WeightFile wf = load_model(c, &rc);
  const std::string input = pick(c.input, rc.input, "input");
  const WavClip clip = wav_read(input);
  check_rate(clip, wf.cfg);
  const Tensor<float> est = separate_clip(wf.cfg, wf.params, clip.samples);
  const auto paths = write_sources(est, wf.cfg.sample_rate, c.output_dir.empty() ? rc.output_dir : c.output_dir,
                                   fs::path(input).stem().string());
  out << json{{"command", "separate"}, {"input", input}, {"samples", clip.samples.size()}, {"outputs", paths}}.dump()
      << "\n";
  return kExitOk;
}

int run_stream(const Common& c, std::size_t hop_flag, std::ostream& out) {
  RunConfig rc;
  const WeightFile wf = load_model(c, &rc);
  const std::string input = pick(c.input, rc.input, "input");
  const WavClip clip = wav_read(input);
  check_rate(clip, wf.cfg);
  std::size_t hop = hop_flag ? hop_flag : rc.hop;
  if (hop == 0) hop = wf.cfg.length_multiple();
  StreamSession session(wf.cfg, wf.params, hop);

  const std::size_t n = clip.samples.size();
  const std::size_t chunks = (n + hop - 1) / hop;
  std::vector<float> padded(chunks * hop, 0.0f);
  std::copy(clip.samples.begin(), clip.samples.end(), padded.begin());
  Tensor<float> est(Shape{wf.cfg.num_sources, std::max<std::size_t>(n, 1)});
  std::vector<double> seconds;
  for (std::size_t k = 0; k < chunks; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<float> y = session.push(std::span<const float>(padded).subspan(k * hop, hop));
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    for (std::size_t i = 0; i < y.dim(0); ++i) {
      for (std::size_t t = 0; t < hop && k * hop + t < n; ++t) est.at(i, k * hop + t) = y.at(i, t);
    }
  }
  const auto paths = write_sources(est, wf.cfg.sample_rate, c.output_dir.empty() ? rc.output_dir : c.output_dir,
                                   fs::path(input).stem().string());
  const LatencyStats stats =
      summarize_latency(seconds, static_cast<double>(hop) / static_cast<double>(wf.cfg.sample_rate));
  const double rate = static_cast<double>(wf.cfg.sample_rate);
  out << json{{"command", "stream"},
              {"input", input},
              {"hop", hop},
              {"chunks", chunks},
              {"latency_samples", session.latency_samples()},
              {"latency_ms", 1e3 * static_cast<double>(session.latency_samples()) / rate},
              {"push_median_ms", 1e3 * stats.median},
              {"push_p95_ms", 1e3 * stats.p95},
              {"real_time_factor", stats.real_time_factor()},
              {"outputs", paths}}
             .dump()
      << "\n";
  return kExitOk;
}

int run_profile(const std::string& config, std::size_t samples, std::size_t mac_flops, std::size_t bytes_per_value,
                bool as_json, std::ostream& out) {
  const RunConfig rc = resolve_config(config);
  if (samples < rc.model.enc_kernel) {
    throw ValidationError("samples: " + std::to_string(samples) + " is shorter than the encoder kernel");
  }
  CostOptions opts;
  opts.bytes_per_value = bytes_per_value;
  opts.convention = FlopConvention{mac_flops};
  const CostReport report = analyze(rc.model, samples, opts);
  out << (as_json ? report.to_json() + "\n" : report.to_text());
  return kExitOk;
}

json result_json(const GradCheckResult& r) {
  return json{{"command", "gradcheck"},        {"check", r.name},   {"checked", r.checked},
              {"skipped", r.skipped},          {"max_rel_error", r.max_rel_error}, {"passed", r.passed}};
}

int run_gradcheck(std::uint64_t seed, std::ostream& out) {
  GradCheckOptions opts;
  opts.seed = seed;
  bool ok = true;
  auto emit = [&](const GradCheckResult& r) {
    ok = ok && r.passed;
    out << result_json(r).dump() << "\n" << std::flush;
  };
  for (const auto& r : kernel_gradient_suite(opts)) emit(r);
  for (const auto& r : loss_gradient_suite(opts)) emit(r);
  for (Variant v : {Variant::kBase, Variant::kPlusPlus, Variant::kPlusPlusGC, Variant::kCausal}) {
    emit(model_gradient_check(tiny_config(v), opts));
  }
  const double residual = conv_adjoint_residual(seed, 200);
  const bool adj_ok = residual < 1e-10;
  ok = ok && adj_ok;
  out << json{{"command", "gradcheck"}, {"check", "conv adjoint"}, {"residual", residual}, {"passed", adj_ok}}.dump()
      << "\n";
  return ok ? kExitOk : kExitNumerical;
}

struct TrainFlags {
  std::size_t epochs = 300;
  std::size_t mixtures = 4;
  std::size_t samples = 4000;
  std::string output = "toy.sdrf";
  std::string precision = "float32";
  TrainOptions opts;
};

int run_train(const TrainFlags& f, std::ostream& out) {
  const ModelConfig cfg = toy_config();
  if (f.mixtures == 0) throw ValidationError("mixtures: must be positive");
  const auto data = toy_dataset(f.opts.seed + 1000, f.mixtures, f.samples);
  TrainOptions opts = f.opts;
  opts.epochs = f.epochs;
  opts.on_epoch = [&out](const TrainRecord& r) {
    out << json{{"command", "train-toy"}, {"epoch", r.epoch},   {"loss", r.loss},
                {"si_sdri", r.si_sdri},   {"flops", r.flops},   {"seconds", r.seconds}}
               .dump()
        << "\n";
  };
  ModelParams trained;
  std::size_t steps = 0;
  if (f.precision == "float64") {
    auto res = train_toy<double>(cfg, data, opts);
    trained = res.params.cast<float>();
    steps = res.steps;
  } else if (f.precision == "float32") {
    auto res = train_toy<float>(cfg, data, opts);
    trained = std::move(res.params);
    steps = res.steps;
  } else {
    throw ValidationError("precision: '" + f.precision + "' (float32 or float64)");
  }
  weights_save(f.output, cfg, trained);
  out << json{{"command", "train-toy"},
              {"steps", steps},
              {"final_si_sdri", dataset_si_sdri(cfg, trained, data)},
              {"weights", f.output}}
             .dump()
      << "\n";
  return kExitOk;
}

Tensor<double> stack_wavs(const std::vector<std::string>& paths, std::size_t* rate) {
  std::vector<WavClip> clips;
  for (const auto& p : paths) clips.push_back(wav_read(p));
  const std::size_t n = clips.front().samples.size();
  if (n == 0) throw ValidationError(paths.front() + ": no samples");
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].samples.size() != n) {
      throw ValidationError("samples: " + paths[i] + " has " + std::to_string(clips[i].samples.size()) +
                            " samples, expected " + std::to_string(n));
    }
    if (*rate == 0) *rate = clips[i].sample_rate;
    if (clips[i].sample_rate != *rate) throw ValidationError("sample_rate: " + paths[i] + " differs");
  }
  Tensor<double> t(Shape{clips.size(), n});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) = clips[i].samples[j];
  }
  return t;
}

int run_eval(const std::vector<std::string>& targets, const std::vector<std::string>& estimates,
             const std::string& mixture_path, std::ostream& out) {
  std::size_t rate = 0;
  const Tensor<double> s = stack_wavs(targets, &rate);
  const Tensor<double> e = stack_wavs(estimates, &rate);
  if (e.dim(1) != s.dim(1)) throw ValidationError("samples: targets and estimates differ in length");
  if (e.dim(0) < s.dim(0)) throw ValidationError("estimates: fewer estimates than targets");
  std::vector<double> mix(s.dim(1), 0.0);
  if (!mixture_path.empty()) {
    const Tensor<double> m = stack_wavs({mixture_path}, &rate);
    if (m.dim(1) != s.dim(1)) throw ValidationError("samples: mixture length differs from the targets");
    for (std::size_t t = 0; t < mix.size(); ++t) mix[t] = m.at(0, t);
  } else {
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      for (std::size_t t = 0; t < mix.size(); ++t) mix[t] += s.at(i, t);
    }
  }
  const EvalReport r = evaluate(s, e, std::span<const double>(mix));
  out << json{{"command", "eval"},
              {"si_sdri", r.si_sdri},
              {"si_sdr", r.si_sdr_abs},
              {"n_active", r.n_active},
              {"perm", r.perm}}
             .dump()
      << "\n";
  return kExitOk;
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kIo: return kExitIo;
    case ErrorKind::kValidation:
    case ErrorKind::kShape: return kExitValidation;
    case ErrorKind::kNumerical: return kExitNumerical;
  }
  return kExitNumerical;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Time-domain source separation: inference, streaming, profiling, training and evaluation"};
  app.require_subcommand(1);

  Common sep;
  auto* separate = app.add_subcommand("separate", "Separate a mixture WAV into one WAV per source");
  separate->add_option("--config", sep.config, "Run config file or preset name");
  separate->add_option("--weights", sep.weights, "SDRF weight file");
  separate->add_option("--input", sep.input, "Mixture WAV");
  separate->add_option("--output-dir", sep.output_dir, "Directory for <stem>_source<i>.wav");

  Common str;
  std::size_t hop = 0;
  auto* stream = app.add_subcommand("stream", "Chunked causal separation with a latency report");
  stream->add_option("--config", str.config, "Run config file or preset name");
  stream->add_option("--weights", str.weights, "SDRF weight file");
  stream->add_option("--input", str.input, "Mixture WAV");
  stream->add_option("--output-dir", str.output_dir, "Directory for <stem>_source<i>.wav");
  stream->add_option("--hop", hop, "Samples per push (multiple of the length multiple)");

  std::string prof_config;
  std::size_t prof_samples = 8000, mac_flops = 1, bytes_per_value = 4;
  bool prof_json = false;
  auto* profile = app.add_subcommand("profile", "Parameter, FLOP, memory and receptive-field report");
  profile->add_option("--config", prof_config, "Run config file or preset name")->required();
  profile->add_option("--samples", prof_samples, "Input length in samples");
  profile->add_option("--mac-flops", mac_flops, "FLOPs per multiply-accumulate")->check(CLI::IsMember({1, 2}));
  profile->add_option("--bytes", bytes_per_value, "Bytes per stored value")->check(CLI::IsMember({2, 4, 8}));
  profile->add_flag("--json", prof_json, "Emit one JSON object instead of text");

  std::uint64_t gc_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "64-bit finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "Probe seed");

  TrainFlags tf;
  auto* train = app.add_subcommand("train-toy", "Overfit a tiny model on synthetic mixtures");
  train->add_option("--epochs", tf.epochs, "Epochs (one optimizer step per batch)");
  train->add_option("--mixtures", tf.mixtures, "Number of fixed mixtures");
  train->add_option("--samples", tf.samples, "Samples per mixture");
  train->add_option("--batch", tf.opts.batch_size, "Batch size");
  train->add_option("--lr", tf.opts.base_lr, "Initial learning rate");
  train->add_option("--decay-every", tf.opts.decay_every, "Epochs between learning-rate decays");
  train->add_option("--decay-factor", tf.opts.decay_factor, "Learning-rate divisor per decay");
  train->add_option("--seed", tf.opts.seed, "Initialization and data seed");
  train->add_option("--threads", tf.opts.threads, "Examples processed concurrently");
  train->add_option("--precision", tf.precision, "float32 or float64");
  train->add_option("--output", tf.output, "Weight file to write");

  std::vector<std::string> targets, estimates;
  std::string mixture;
  auto* eval = app.add_subcommand("eval", "SI-SDR improvement of estimates against targets");
  eval->add_option("--targets", targets, "Target WAVs (active sources)")->required();
  eval->add_option("--estimates", estimates, "Estimate WAVs")->required();
  eval->add_option("--mixture", mixture, "Mixture WAV (default: sum of the targets)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*separate) return run_separate(sep, out);
    if (*stream) return run_stream(str, hop, out);
    if (*profile) return run_profile(prof_config, prof_samples, mac_flops, bytes_per_value, prof_json, out);
    if (*gradcheck) return run_gradcheck(gc_seed, out);
    if (*train) return run_train(tf, out);
    if (*eval) return run_eval(targets, estimates, mixture, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace sudormrf
