#include "cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "soundstream/bitstream.hpp"
#include "soundstream/checkpoint.hpp"
#include "soundstream/losses.hpp"
#include "soundstream/streaming.hpp"
#include "soundstream/trainer.hpp"
#include "soundstream/wav.hpp"

namespace soundstream::cli {

namespace {

namespace fs = std::filesystem;

// Invalid flag values that only show once the model is known.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("soundstream", sink);
  log->set_pattern("[%l] %v");
  auto level = spdlog::level::info;
  if (const char* env = std::getenv("SOUNDSTREAM_LOG"); env && *env) {
    level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; keep the default instead.
    if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::info;
  }
  log->set_level(level);
  return log;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

bool parse_switch(const std::string& v) { return v == "on"; }

CodecModel load_model(const std::string& path) { return load_checkpoint(path).model; }

void check_nq(int n_q, const ModelConfig& c) {
  if (n_q < 1 || n_q > c.num_quantizers) {
    throw UsageError("--nq " + std::to_string(n_q) + " outside [1, " + std::to_string(c.num_quantizers) + "]");
  }
}

void check_denoise(bool denoise, const ModelConfig& c) {
  if (denoise && !c.denoise) throw std::runtime_error("--denoise on requires a model trained with denoise conditioning");
}

std::vector<float> read_model_wav(const std::string& path, const ModelConfig& c) {
  WavFile w = read_wav(path);
  if (w.sample_rate != c.sample_rate) {
    throw std::runtime_error(path + ": sample rate " + std::to_string(w.sample_rate) + " Hz, model expects " +
                             std::to_string(c.sample_rate) + " Hz (no resampling)");
  }
  if (w.samples.empty()) throw std::runtime_error(path + ": no samples");
  return std::move(w.samples);
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// Fails early, before any training, when the output cannot be created.
void probe_writable(const std::string& path) {
  const bool existed = fs::exists(path);
  {
    std::ofstream probe(path, std::ios::binary | std::ios::app);
    if (!probe) throw std::runtime_error("cannot write " + path);
  }
  if (!existed) fs::remove(path);
}

struct TrainArgs {
  std::string config, data, out, noise;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out, spdlog::logger& log) {
  TrainConfig cfg = load_train_config(a.config);
  if (a.steps) cfg.steps = *a.steps;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (cfg.denoise && a.noise.empty()) throw UsageError("denoise training needs --noise <dir>");
  probe_writable(a.out);

  Dataset data = Dataset::from_directory(a.data, cfg.model.sample_rate);
  std::optional<Dataset> noise;
  if (cfg.denoise) noise = Dataset::from_directory(a.noise, cfg.model.sample_rate);
  log.info("{} clips, {} steps, batch {}, crop {} samples", data.size(), cfg.steps, cfg.batch_size,
           cfg.crop_samples());

  Trainer trainer(cfg);
  const auto start = std::chrono::steady_clock::now();
  StepStats first, last;
  for (int step = 0; step < cfg.steps; ++step) {
    const auto clean = data.next_batch(cfg.batch_size, cfg.crop_samples(), trainer.rng());
    std::vector<ExampleTuple> batch;
    if (noise) {
      const auto n = noise->next_batch(cfg.batch_size, cfg.crop_samples(), trainer.rng());
      batch = make_denoise_batch(clean, n, trainer.rng(), cfg.noise_min_db, cfg.noise_max_db);
    } else {
      for (const auto& c : clean) batch.push_back(make_clean_example(c));
    }
    last = trainer.train_step(batch);
    if (step == 0) first = last;
    const bool report = cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps);
    if (report) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.info("step={} loss_d={:.6g} loss_g={:.6g} adv={:.6g} feat={:.6g} rec={:.6g} replaced={} elapsed={:.1f}s",
               step, last.loss_d, last.loss_g, last.adv, last.feat, last.rec, last.replaced, secs);
    }
    log.debug("step={} n_q={}", step, fmt::join(last.n_q, ","));
  }
  save_checkpoint(trainer.model(), a.out, trainer.has_discriminators() ? &trainer.discriminators() : nullptr);
  out << "steps=" << cfg.steps << "\n";
  if (cfg.steps > 0) out << "rec_first=" << format_number(first.rec) << "\nrec_last=" << format_number(last.rec) << "\n";
  out << "checkpoint=" << a.out << "\n";
  return kOk;
}

struct EncodeArgs {
  std::string model, in, out, denoise = "off";
  std::optional<int> nq;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out, spdlog::logger& log) {
  const CodecModel model = load_model(a.model);
  const auto& c = model.config();
  const int n_q = a.nq.value_or(c.num_quantizers);
  check_nq(n_q, c);
  const bool denoise = parse_switch(a.denoise);
  check_denoise(denoise, c);
  const auto audio = read_model_wav(a.in, c);
  const IndexMatrix indices = model.compress(audio, n_q, denoise);
  const auto bytes = pack(indices, c).to_bytes();
  write_file(a.out, bytes);
  log.info("{}: {} samples -> {} frames, {} bytes", a.out, audio.size(), indices.frames, bytes.size());
  out << format_number(nominal_bitrate(c, n_q)) << " bps\n";
  return kOk;
}

struct DecodeArgs {
  std::string model, in, out, denoise = "off";
  std::optional<int> nq;
};

int cmd_decode(const DecodeArgs& a, std::ostream& out, spdlog::logger& log) {
  const CodecModel model = load_model(a.model);
  const auto& c = model.config();
  const bool denoise = parse_switch(a.denoise);
  check_denoise(denoise, c);
  const EncodedStream stream = EncodedStream::from_bytes(read_file(a.in));
  check_compatible(stream.header, c);
  IndexMatrix indices = unpack(stream);
  if (a.nq) {
    if (*a.nq < 1 || *a.nq > indices.num_layers) {
      throw UsageError("--nq " + std::to_string(*a.nq) + " outside [1, " + std::to_string(indices.num_layers) +
                       "] (layers in the stream)");
    }
    indices = indices.prefix(*a.nq);
  }
  if (indices.frames == 0) throw std::runtime_error(a.in + ": stream has no frames");
  const auto audio = model.decompress(indices, denoise);
  write_wav(a.out, audio, c.sample_rate);
  log.info("{}: {} frames x {} layers -> {} samples", a.out, indices.frames, indices.num_layers, audio.size());
  out << "samples=" << audio.size() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string model, in, ref, prior, denoise = "off";
  std::optional<int> nq;
};

bool is_stream_file(const std::string& path) { return fs::path(path).extension() == ".ssbc"; }

IndexMatrix stream_indices(const std::string& path, const ModelConfig& c) {
  const EncodedStream s = EncodedStream::from_bytes(read_file(path));
  check_compatible(s.header, c);
  return unpack(s);
}

int cmd_eval(const EvalArgs& a, std::ostream& out, spdlog::logger& log) {
  const CodecModel model = load_model(a.model);
  const auto& c = model.config();
  const bool denoise = parse_switch(a.denoise);
  check_denoise(denoise, c);
  if (a.nq) check_nq(*a.nq, c);

  // Indices and audio under evaluation: a stream is decoded, a WAV is
  // taken as the audio and encoded for the rate figures.
  IndexMatrix indices;
  std::vector<float> audio;
  if (is_stream_file(a.in)) {
    indices = stream_indices(a.in, c);
    if (a.nq) {
      if (*a.nq > indices.num_layers) throw UsageError("--nq exceeds the layers in the stream");
      indices = indices.prefix(*a.nq);
    }
    if (!a.ref.empty()) audio = model.decompress(indices, denoise);
  } else {
    audio = read_model_wav(a.in, c);
    indices = model.compress(audio, a.nq.value_or(c.num_quantizers), denoise);
  }
  if (indices.frames == 0) throw std::runtime_error(a.in + ": no frames to evaluate");

  if (!a.ref.empty()) {
    auto ref = pad_to_multiple(read_model_wav(a.ref, c), c.hop());
    audio = pad_to_multiple(audio, c.hop());
    if (ref.size() != audio.size()) {
      throw std::runtime_error("length mismatch: " + std::to_string(audio.size()) + " vs " +
                               std::to_string(ref.size()) + " samples after padding");
    }
    const auto n = static_cast<std::int64_t>(ref.size());
    NoGradScope no_grad;
    const double l = loss_rec(Tensor({n}, std::move(ref)), Tensor({n}, std::move(audio)), c.sample_rate).item();
    out << "l_rec=" << format_number(l) << "\n";
  }

  const double frame_rate = static_cast<double>(c.sample_rate) / c.hop();
  const int bits = static_cast<int>(std::log2(c.codebook_size));
  const SymbolCounts counts = count_symbols(indices, c.codebook_size);
  const SymbolDistribution r = to_distribution(counts);
  SymbolDistribution p;
  if (!a.prior.empty()) {
    IndexMatrix prior = stream_indices(a.prior, c);
    if (prior.num_layers < indices.num_layers) throw std::runtime_error("prior stream has fewer layers than the input");
    p = to_distribution(count_symbols(prior.prefix(indices.num_layers), c.codebook_size), 1.0);
  } else {
    p = to_distribution(counts, 1.0);
    log.debug("no --prior given; cross-entropy uses the smoothed input distribution");
  }

  out << "frames=" << indices.frames << "\n"
      << "n_q=" << indices.num_layers << "\n"
      << "nominal_bits_per_frame=" << indices.num_layers * bits << "\n"
      << "nominal_bps=" << format_number(frame_rate * indices.num_layers * bits) << "\n";
  double total = 0.0;
  for (int q = 0; q < indices.num_layers; ++q) {
    const double h = entropy({r[static_cast<std::size_t>(q)]});
    total += h;
    out << "entropy_layer_" << q + 1 << "=" << format_number(h) << "\n";
  }
  const double xent = cross_entropy_rate(r, p);
  out << "entropy_bits_per_frame=" << format_number(total) << "\n"
      << "entropy_bps=" << format_number(total * frame_rate) << "\n"
      << "cross_entropy_bits_per_frame=" << format_number(xent) << "\n"
      << "cross_entropy_bps=" << format_number(xent * frame_rate) << "\n";
  return kOk;
}

struct BenchArgs {
  std::string model, mode = "both", format = "text";
  double seconds = 10.0;
  int runs = 5;
  std::optional<int> nq;
};

int cmd_bench(const BenchArgs& a, std::ostream& out, spdlog::logger& log) {
  const CodecModel model = load_model(a.model);
  const auto& c = model.config();
  if (a.nq) check_nq(*a.nq, c);
  const BenchMode mode = a.mode == "encode" ? BenchMode::Encode : a.mode == "decode" ? BenchMode::Decode : BenchMode::Both;
  log.info("benchmarking {} s of audio, {} runs, single thread", a.seconds, a.runs);
  const RtfReport r = rtf_benchmark(model, a.seconds, mode, a.runs, a.nq.value_or(-1));
  out << (a.format == "kv" ? r.to_key_value() : r.to_text());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streamable neural audio codec", "soundstream"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "soundstream 1.0");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a codec and write a checkpoint");
  t->add_option("--config", train.config, "Training config (key = value lines)")->required()->check(CLI::ExistingFile);
  t->add_option("--data", train.data, "Directory of mono WAV clips")->required();
  t->add_option("--out", train.out, "Checkpoint to write")->required();
  t->add_option("--noise", train.noise, "Directory of noise WAV clips (denoise training)");
  t->add_option("--steps", train.steps, "Override the configured step count")->check(CLI::NonNegativeNumber);
  t->add_option("--seed", train.seed, "Override the configured seed");

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Compress a WAV file into an .ssbc stream");
  e->add_option("--model", enc.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--in", enc.in, "Input WAV (16-bit mono)")->required()->check(CLI::ExistingFile);
  e->add_option("--out", enc.out, "Output stream")->required();
  e->add_option("--nq", enc.nq, "Quantizer layers to use (default: all)")->check(CLI::PositiveNumber);
  e->add_option("--denoise", enc.denoise, "Denoise conditioning")->check(CLI::IsMember({"on", "off"}));

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "Decode an .ssbc stream into a WAV file");
  d->add_option("--model", dec.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  d->add_option("--in", dec.in, "Input stream")->required()->check(CLI::ExistingFile);
  d->add_option("--out", dec.out, "Output WAV")->required();
  d->add_option("--nq", dec.nq, "Decode only the first n layers")->check(CLI::PositiveNumber);
  d->add_option("--denoise", dec.denoise, "Denoise conditioning")->check(CLI::IsMember({"on", "off"}));

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Reconstruction loss and rate statistics (key=value)");
  v->add_option("--model", ev.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  v->add_option("--in", ev.in, "Audio (.wav) or stream (.ssbc) to evaluate")->required()->check(CLI::ExistingFile);
  v->add_option("--ref", ev.ref, "Reference WAV for the reconstruction loss")->check(CLI::ExistingFile);
  v->add_option("--prior", ev.prior, "Stream whose symbol frequencies model the code (cross-entropy)")
      ->check(CLI::ExistingFile);
  v->add_option("--nq", ev.nq, "Quantizer layers")->check(CLI::PositiveNumber);
  v->add_option("--denoise", ev.denoise, "Denoise conditioning")->check(CLI::IsMember({"on", "off"}));

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Single-thread streaming real-time factor");
  b->add_option("--model", bench.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  b->add_option("--seconds", bench.seconds, "Audio length per run")->check(CLI::PositiveNumber);
  b->add_option("--runs", bench.runs, "Timed runs (median reported)")->check(CLI::PositiveNumber);
  b->add_option("--mode", bench.mode, "encode, decode or both")->check(CLI::IsMember({"encode", "decode", "both"}));
  b->add_option("--nq", bench.nq, "Quantizer layers")->check(CLI::PositiveNumber);
  b->add_option("--format", bench.format, "text or kv")->check(CLI::IsMember({"text", "kv"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "soundstream: usage error: " << one_line(ex.what()) << " (see --help)\n";
    return kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  auto log = make_logger(err);
  try {
    if (t->parsed()) return cmd_train(train, out, *log);
    if (e->parsed()) return cmd_encode(enc, out, *log);
    if (d->parsed()) return cmd_decode(dec, out, *log);
    if (v->parsed()) return cmd_eval(ev, out, *log);
    if (b->parsed()) return cmd_bench(bench, out, *log);
  } catch (const UsageError& ex) {
    err << "soundstream " << command << ": usage error: " << one_line(ex.what()) << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    err << "soundstream " << command << ": error: " << one_line(ex.what()) << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace soundstream::cli
