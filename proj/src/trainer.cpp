#include "soundstream/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "soundstream/ops.hpp"
#include "soundstream/wav.hpp"

namespace soundstream {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw std::invalid_argument("not a number: '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<int>(trim(item)));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); }},
      {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = parse_number<int>(v); }},
      {"crop_seconds", [](TrainConfig& c, const std::string& v) { c.crop_seconds = parse_number<double>(v); }},
      {"steps", [](TrainConfig& c, const std::string& v) { c.steps = parse_number<int>(v); }},
      {"lr_g", [](TrainConfig& c, const std::string& v) { c.lr_g = parse_number<float>(v); }},
      {"lr_d", [](TrainConfig& c, const std::string& v) { c.lr_d = parse_number<float>(v); }},
      {"adam_beta1", [](TrainConfig& c, const std::string& v) { c.adam_beta1 = parse_number<float>(v); }},
      {"adam_beta2", [](TrainConfig& c, const std::string& v) { c.adam_beta2 = parse_number<float>(v); }},
      {"adam_epsilon", [](TrainConfig& c, const std::string& v) { c.adam_epsilon = parse_number<float>(v); }},
      {"lambda_adv", [](TrainConfig& c, const std::string& v) { c.weights.adv = parse_number<float>(v); }},
      {"lambda_feat", [](TrainConfig& c, const std::string& v) { c.weights.feat = parse_number<float>(v); }},
      {"lambda_rec", [](TrainConfig& c, const std::string& v) { c.weights.rec = parse_number<float>(v); }},
      {"dropout", [](TrainConfig& c, const std::string& v) { c.dropout = parse_bool(v); }},
      {"denoise", [](TrainConfig& c, const std::string& v) { c.denoise = c.model.denoise = parse_bool(v); }},
      {"noise_min_db", [](TrainConfig& c, const std::string& v) { c.noise_min_db = parse_number<double>(v); }},
      {"noise_max_db", [](TrainConfig& c, const std::string& v) { c.noise_max_db = parse_number<double>(v); }},
      {"log_every", [](TrainConfig& c, const std::string& v) { c.log_every = parse_number<int>(v); }},
      {"sample_rate", [](TrainConfig& c, const std::string& v) { c.model.sample_rate = parse_number<int>(v); }},
      {"enc_channels", [](TrainConfig& c, const std::string& v) { c.model.enc_channels = parse_number<int>(v); }},
      {"dec_channels", [](TrainConfig& c, const std::string& v) { c.model.dec_channels = parse_number<int>(v); }},
      {"strides", [](TrainConfig& c, const std::string& v) { c.model.strides = parse_int_list(v); }},
      {"embedding_dim", [](TrainConfig& c, const std::string& v) { c.model.embedding_dim = parse_number<int>(v); }},
      {"num_quantizers", [](TrainConfig& c, const std::string& v) { c.model.num_quantizers = parse_number<int>(v); }},
      {"codebook_size", [](TrainConfig& c, const std::string& v) { c.model.codebook_size = parse_number<int>(v); }},
      {"condition_site",
       [](TrainConfig& c, const std::string& v) {
         if (v == "encoder") {
           c.model.condition_site = ConditionSite::EncoderBottleneck;
         } else if (v == "decoder") {
           c.model.condition_site = ConditionSite::DecoderBottleneck;
         } else {
           throw std::invalid_argument("expected encoder or decoder");
         }
       }},
      {"ema_decay", [](TrainConfig& c, const std::string& v) { c.rvq.decay = parse_number<float>(v); }},
      {"usage_decay", [](TrainConfig& c, const std::string& v) { c.rvq.usage_decay = parse_number<float>(v); }},
      {"dead_threshold", [](TrainConfig& c, const std::string& v) { c.rvq.dead_threshold = parse_number<float>(v); }},
      {"kmeans_iterations",
       [](TrainConfig& c, const std::string& v) { c.rvq.kmeans_iterations = parse_number<int>(v); }},
      {"disc_wave_scales", [](TrainConfig& c, const std::string& v) { c.disc.wave_scales = parse_number<int>(v); }},
      {"disc_wave_channels",
       [](TrainConfig& c, const std::string& v) { c.disc.wave_base_channels = parse_number<int>(v); }},
      {"disc_wave_max_channels",
       [](TrainConfig& c, const std::string& v) { c.disc.wave_max_channels = parse_number<int>(v); }},
      {"disc_stft_window", [](TrainConfig& c, const std::string& v) { c.disc.stft_window = parse_number<int>(v); }},
      {"disc_stft_hop", [](TrainConfig& c, const std::string& v) { c.disc.stft_hop = parse_number<int>(v); }},
      {"disc_stft_channels", [](TrainConfig& c, const std::string& v) { c.disc.stft_channels = parse_int_list(v); }},
  };
  return table;
}

Tensor waveform(const std::vector<float>& samples) {
  return Tensor({static_cast<std::int64_t>(samples.size())}, samples);
}

}  // namespace

std::int64_t TrainConfig::crop_samples() const {
  return static_cast<std::int64_t>(std::llround(crop_seconds * model.sample_rate));
}

void TrainConfig::validate() const {
  model.validate();
  disc.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (steps < 0) fail("steps must be >= 0");
  if (!(crop_seconds > 0.0)) fail("crop_seconds must be positive");
  const double samples = crop_seconds * model.sample_rate;
  if (std::abs(samples - std::round(samples)) > 1e-6 || crop_samples() % model.hop() != 0) {
    fail("crop length (" + std::to_string(samples) + " samples) must be a multiple of the hop " +
         std::to_string(model.hop()));
  }
  if (crop_samples() < (1 << kRecMaxLog2)) fail("crop shorter than the largest mel window");
  if (!reconstruction_only() && crop_samples() < disc.stft_window) fail("crop shorter than the discriminator window");
  if (!(lr_g > 0.0f) || !(lr_d > 0.0f)) fail("learning rates must be positive");
  if (!(adam_beta1 >= 0.0f && adam_beta1 < 1.0f && adam_beta2 >= 0.0f && adam_beta2 < 1.0f)) {
    fail("Adam betas must be in [0, 1)");
  }
  if (weights.adv < 0.0f || weights.feat < 0.0f || weights.rec < 0.0f) fail("loss weights must be >= 0");
  if (noise_min_db > noise_max_db) fail("noise gain range is empty");
  if (denoise != model.denoise) fail("denoise training needs a conditioned model");
  if (log_every < 0) fail("log_every must be >= 0");
}

TrainConfig parse_train_config(std::istream& in, TrainConfig config) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second(config, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return parse_train_config(in, std::move(base));
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "seed = " << c.seed << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "crop_seconds = " << c.crop_seconds << "\n"
      << "steps = " << c.steps << "\n"
      << "lr_g = " << c.lr_g << "\n"
      << "lr_d = " << c.lr_d << "\n"
      << "adam_beta1 = " << c.adam_beta1 << "\n"
      << "adam_beta2 = " << c.adam_beta2 << "\n"
      << "lambda_adv = " << c.weights.adv << "\n"
      << "lambda_feat = " << c.weights.feat << "\n"
      << "lambda_rec = " << c.weights.rec << "\n"
      << "dropout = " << (c.dropout ? "true" : "false") << "\n"
      << "denoise = " << (c.denoise ? "true" : "false") << "\n"
      << "sample_rate = " << c.model.sample_rate << "\n"
      << "enc_channels = " << c.model.enc_channels << "\n"
      << "dec_channels = " << c.model.dec_channels << "\n"
      << "strides = " << join(c.model.strides) << "\n"
      << "embedding_dim = " << c.model.embedding_dim << "\n"
      << "num_quantizers = " << c.model.num_quantizers << "\n"
      << "codebook_size = " << c.model.codebook_size << "\n"
      << "dead_threshold = " << c.rvq.dead_threshold << "\n";
  return out.str();
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const float b1 = options_.beta1;
  const float b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(static_cast<double>(b1), static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(static_cast<double>(b2), static_cast<double>(t_));
  const float step = static_cast<float>(options_.lr / c1);
  const float root_c2 = static_cast<float>(std::sqrt(c2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step * m[j] / (std::sqrt(v[j]) / root_c2 + options_.epsilon);
    }
  }
}

void peak_normalize(std::span<float> audio, float peak) {
  float m = 0.0f;
  for (float v : audio) m = std::max(m, std::abs(v));
  if (m == 0.0f) return;
  const float g = peak / m;
  for (float& v : audio) v *= g;
}

double sample_gain_db(std::mt19937_64& rng, double min_db, double max_db) {
  if (min_db > max_db) throw std::invalid_argument("sample_gain_db: empty range");
  return std::uniform_real_distribution<double>(min_db, max_db)(rng);
}

ExampleTuple make_noisy_example(std::span<const float> clean, std::span<const float> noise, std::mt19937_64& rng,
                                double min_db, double max_db) {
  if (clean.size() != noise.size()) throw std::invalid_argument("make_noisy_example: crop lengths differ");
  if (std::all_of(noise.begin(), noise.end(), [](float v) { return v == 0.0f; })) {
    throw std::invalid_argument("make_noisy_example: noise crop is silent, draw another");
  }
  const float g = static_cast<float>(std::pow(10.0, sample_gain_db(rng, min_db, max_db) / 20.0));
  ExampleTuple ex;
  ex.targets.assign(clean.begin(), clean.end());
  ex.inputs.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) ex.inputs[i] = clean[i] + g * noise[i];
  ex.denoise = true;
  return ex;
}

ExampleTuple make_clean_example(std::span<const float> clean, bool denoise) {
  ExampleTuple ex;
  ex.inputs.assign(clean.begin(), clean.end());
  ex.targets = ex.inputs;
  ex.denoise = denoise;
  return ex;
}

std::vector<ExampleTuple> make_denoise_batch(const std::vector<std::vector<float>>& clean,
                                             const std::vector<std::vector<float>>& noise, std::mt19937_64& rng,
                                             double min_db, double max_db) {
  if (clean.size() != noise.size()) throw std::invalid_argument("make_denoise_batch: batch sizes differ");
  std::vector<ExampleTuple> out;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
    const bool silent = std::all_of(noise[i].begin(), noise[i].end(), [](float v) { return v == 0.0f; });
    if (kind == 2 || silent) {
      out.push_back(make_clean_example(clean[i], std::bernoulli_distribution(0.5)(rng)));
      continue;
    }
    ExampleTuple ex = make_noisy_example(clean[i], noise[i], rng, min_db, max_db);
    if (kind == 1) ex = make_clean_example(ex.inputs, false);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::vector<float>> synthetic_clips(int count, std::int64_t samples, int sample_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<std::vector<float>> clips;
  for (int c = 0; c < count; ++c) {
    const double f0 = 80.0 * std::pow(5.0, u(rng));  // 80 .. 400 Hz
    const int harmonics = 3 + static_cast<int>(u(rng) * 6);
    const double vibrato_rate = 3.0 + 4.0 * u(rng);
    const double vibrato_depth = 0.01 * u(rng);
    const double decay = 0.5 + 3.0 * u(rng);
    std::vector<double> amp, phase;
    for (int h = 1; h <= harmonics; ++h) {
      amp.push_back((0.3 + 0.7 * u(rng)) / h);
      phase.push_back(two_pi * u(rng));
    }
    std::vector<float> x(static_cast<std::size_t>(samples));
    double theta = 0.0;
    for (std::int64_t n = 0; n < samples; ++n) {
      const double t = static_cast<double>(n) / sample_rate;
      const double f = f0 * (1.0 + vibrato_depth * std::sin(two_pi * vibrato_rate * t));
      theta += two_pi * f / sample_rate;
      const double env = std::min(1.0, t / 0.01) * std::exp(-decay * t);
      double v = 0.0;
      for (int h = 0; h < harmonics; ++h) {
        if (f0 * (h + 1) < 0.45 * sample_rate) v += amp[h] * std::sin((h + 1) * theta + phase[h]);
      }
      x[n] = static_cast<float>(env * v + 0.003 * noise(rng));
    }
    peak_normalize(x, 0.9f);
    clips.push_back(std::move(x));
  }
  return clips;
}

Dataset::Dataset(std::vector<std::vector<float>> clips) : clips_(std::move(clips)) {
  if (clips_.empty()) throw std::invalid_argument("dataset: no clips");
}

Dataset Dataset::from_directory(const std::string& dir, int sample_rate) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (e.is_regular_file() && ext == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .wav files in " + dir);
  std::vector<std::vector<float>> clips;
  for (const auto& f : files) {
    WavFile w = read_wav(f.string());
    if (w.sample_rate != sample_rate) {
      throw std::runtime_error(f.string() + ": sample rate " + std::to_string(w.sample_rate) + " Hz, model expects " +
                               std::to_string(sample_rate) + " Hz");
    }
    clips.push_back(std::move(w.samples));
  }
  return Dataset(std::move(clips));
}

std::vector<std::vector<float>> Dataset::next_batch(int batch_size, std::int64_t crop_samples, std::mt19937_64& rng) {
  std::vector<std::vector<float>> batch;
  for (int b = 0; b < batch_size; ++b) {
    if (cursor_ == order_.size()) {
      order_.resize(clips_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
    }
    const auto& clip = clips_[order_[cursor_++]];
    std::vector<float> crop(static_cast<std::size_t>(crop_samples), 0.0f);
    const auto len = static_cast<std::int64_t>(clip.size());
    std::int64_t start = 0;
    if (len > crop_samples) start = std::uniform_int_distribution<std::int64_t>(0, len - crop_samples)(rng);
    std::copy_n(clip.begin() + start, std::min(len - start, crop_samples), crop.begin());
    peak_normalize(crop);
    batch.push_back(std::move(crop));
  }
  return batch;
}

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)), rng_(config_.seed), model_((config_.validate(), config_.model), rng_(), config_.rvq) {
  const std::uint64_t disc_seed = rng_();
  std::vector<Tensor> gen;
  for (auto& [name, t] : model_.parameters()) gen.push_back(t);
  opt_g_ = Adam(std::move(gen), {config_.lr_g, config_.adam_beta1, config_.adam_beta2, config_.adam_epsilon});
  has_disc_ = !config_.reconstruction_only();
  if (has_disc_) {
    disc_ = Discriminators(config_.disc, disc_seed);
    std::vector<Tensor> d;
    for (auto& [name, t] : disc_.parameters()) d.push_back(t);
    opt_d_ = Adam(std::move(d), {config_.lr_d, config_.adam_beta1, config_.adam_beta2, config_.adam_epsilon});
  }
}

Tensor Trainer::condition(bool denoise) const {
  if (model_.film) return denoise_condition(denoise, 1);
  if (denoise) throw std::invalid_argument("denoise example given to a model without conditioning");
  return {};
}

Tensor Trainer::generate(const ExampleTuple& ex, int n_q, RvqQuantized* quantized) const {
  const Tensor cond = condition(ex.denoise);
  const Tensor y = model_.encode(waveform(ex.inputs), cond);
  RvqQuantized q;
  {
    NoGradScope no_grad;
    q = model_.rvq.quantize(y, n_q);
  }
  const Tensor x_hat = model_.decode(ops::straight_through(y, q.quantized), cond);
  if (quantized) *quantized = std::move(q);
  return x_hat;
}

void Trainer::initialize_codebooks(const std::vector<ExampleTuple>& batch) {
  if (model_.rvq.initialized()) return;
  NoGradScope no_grad;
  std::vector<float> frames;
  std::int64_t rows = 0;
  for (const auto& ex : batch) {
    const Tensor y = model_.encode(waveform(ex.inputs), condition(ex.denoise));
    frames.insert(frames.end(), y.data().begin(), y.data().end());
    rows += y.dim(0);
  }
  model_.rvq.kmeans_init(Tensor({rows, static_cast<std::int64_t>(config_.model.embedding_dim)}, std::move(frames)),
                         rng_);
}

double Trainer::train_step_d(const std::vector<ExampleTuple>& batch) {
  if (!has_disc_) throw std::logic_error("train_step_d: reconstruction-only configuration has no discriminator");
  if (batch.empty()) throw std::invalid_argument("train_step_d: empty batch");
  initialize_codebooks(batch);
  std::vector<Tensor> fakes;
  {
    NoGradScope no_grad;
    for (const auto& ex : batch) {
      fakes.push_back(generate(ex, sample_nq(rng_, config_.model.num_quantizers, config_.dropout), nullptr).detach());
    }
  }
  Tape tape;
  Tensor total;
  {
    TapeScope scope(tape);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto real = disc_.forward(waveform(batch[b].targets));
      const auto fake = disc_.forward(fakes[b]);
      const Tensor l = loss_d(logits_of(real), logits_of(fake));
      total = total.defined() ? ops::add(total, l) : l;
    }
    total = ops::scale(total, 1.0f / static_cast<float>(batch.size()));
  }
  const double value = total.item();
  if (!std::isfinite(value)) {
    throw std::runtime_error("discriminator loss is not finite at step " + std::to_string(steps_) + ": " +
                             std::to_string(value));
  }
  opt_d_.zero_grad();
  tape.backward(total);
  opt_d_.step();
  return value;
}

StepStats Trainer::train_step_g(const std::vector<ExampleTuple>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step_g: empty batch");
  initialize_codebooks(batch);
  const int layers = config_.model.num_quantizers;
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  StepStats stats;
  stats.step = steps_;
  std::vector<RvqQuantized> quantized(batch.size());

  Tape tape;
  Tensor total;
  {
    TapeScope scope(tape);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int n_q = sample_nq(rng_, layers, config_.dropout);
      stats.n_q.push_back(n_q);
      const Tensor x_hat = generate(batch[b], n_q, &quantized[b]);
      const Tensor target = waveform(batch[b].targets);
      const Tensor rec = loss_rec(target, x_hat, config_.model.sample_rate);
      stats.rec += rec.item() * inv_b;
      Tensor g;
      if (has_disc_) {
        std::vector<DiscriminatorOutput> real;
        {
          NoGradScope no_grad;
          real = disc_.forward(target);
        }
        const auto fake = disc_.forward(x_hat);
        const Tensor adv = loss_g_adv(logits_of(fake));
        const Tensor feat = loss_feat(features_of(real), features_of(fake));
        stats.adv += adv.item() * inv_b;
        stats.feat += feat.item() * inv_b;
        g = loss_g_total(adv, feat, rec, config_.weights);
      } else {
        g = ops::scale(rec, config_.weights.rec);
      }
      total = total.defined() ? ops::add(total, g) : g;
    }
    total = ops::scale(total, inv_b);
  }
  stats.loss_g = total.item();
  if (!std::isfinite(stats.loss_g)) {
    throw std::runtime_error("generator loss is not finite at step " + std::to_string(steps_) +
                             ": rec=" + std::to_string(stats.rec) + " adv=" + std::to_string(stats.adv) +
                             " feat=" + std::to_string(stats.feat));
  }
  opt_g_.zero_grad();
  tape.backward(total);
  opt_g_.step();

  // Codebooks: each layer sees the frames of the examples that used it.
  for (int q = 0; q < layers; ++q) {
    std::vector<float> inputs;
    std::vector<std::int32_t> assign;
    for (const auto& r : quantized) {
      if (q >= static_cast<int>(r.layer_inputs.size())) continue;
      inputs.insert(inputs.end(), r.layer_inputs[q].begin(), r.layer_inputs[q].end());
      assign.insert(assign.end(), r.layer_assignments[q].begin(), r.layer_assignments[q].end());
    }
    model_.rvq.ema_update(q, inputs, assign);
    if (!assign.empty()) stats.replaced += model_.rvq.replace_dead(q, inputs, rng_);
  }
  ++steps_;
  return stats;
}

StepStats Trainer::train_step(const std::vector<ExampleTuple>& batch) {
  double d = 0.0;
  if (has_disc_) d = train_step_d(batch);
  StepStats s = train_step_g(batch);
  s.loss_d = d;
  return s;
}

double Trainer::evaluate_rec(const std::vector<ExampleTuple>& examples, int n_q) const {
  if (examples.empty()) throw std::invalid_argument("evaluate_rec: no examples");
  NoGradScope no_grad;
  double sum = 0.0;
  for (const auto& ex : examples) {
    const Tensor x_hat = generate(ex, n_q, nullptr);
    sum += loss_rec(waveform(ex.targets), x_hat, config_.model.sample_rate).item();
  }
  return sum / static_cast<double>(examples.size());
}

}  // namespace soundstream
