#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "soundstream/discriminator.hpp"
#include "soundstream/losses.hpp"
#include "soundstream/model.hpp"
#include "soundstream/rvq.hpp"

namespace soundstream {

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 4;
  double crop_seconds = 1.0;
  int steps = 500;
  float lr_g = 1e-4f;
  float lr_d = 1e-4f;
  float adam_beta1 = 0.5f;
  float adam_beta2 = 0.9f;
  float adam_epsilon = 1e-8f;
  LossWeights weights;
  bool dropout = true;
  bool denoise = false;
  double noise_min_db = -30.0;
  double noise_max_db = 0.0;
  int log_every = 50;

  ModelConfig model;
  RvqOptions rvq;
  DiscriminatorConfig disc;

  std::int64_t crop_samples() const;
  // Adversarial and feature weights both zero: no discriminator is needed.
  bool reconstruction_only() const { return weights.adv == 0.0f && weights.feat == 0.0f; }
  void validate() const;  // throws std::invalid_argument
};

// Plain-text "key = value" lines; '#' starts a comment. Unknown keys and
// malformed values are errors naming the line.
TrainConfig parse_train_config(std::istream& in, TrainConfig base = {});
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});
std::string to_config_text(const TrainConfig& config);

struct AdamOptions {
  float lr = 1e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.9f;
  float epsilon = 1e-8f;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamOptions options);

  void zero_grad();
  void step();
  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

struct ExampleTuple {
  std::vector<float> inputs;
  std::vector<float> targets;
  bool denoise = false;
};

// Scales to a peak absolute value of `peak`; silent input is left unchanged.
void peak_normalize(std::span<float> audio, float peak = 1.0f);
double sample_gain_db(std::mt19937_64& rng, double min_db = -30.0, double max_db = 0.0);
// inputs = clean + g * noise, targets = clean, denoise = true. Throws on
// all-zero noise so the caller can draw another noise crop.
ExampleTuple make_noisy_example(std::span<const float> clean, std::span<const float> noise, std::mt19937_64& rng,
                                double min_db = -30.0, double max_db = 0.0);
// Clean pass-through tuple: targets are a bitwise copy of the inputs.
ExampleTuple make_clean_example(std::span<const float> clean, bool denoise = false);

// Mixes clean crops with noise crops for denoise training. Each example is,
// with equal probability, a denoise tuple (noisy -> clean, flag on), a noisy
// identity tuple (flag off) or a clean identity tuple with a random flag.
// Silent noise crops fall back to the clean identity tuple.
std::vector<ExampleTuple> make_denoise_batch(const std::vector<std::vector<float>>& clean,
                                             const std::vector<std::vector<float>>& noise, std::mt19937_64& rng,
                                             double min_db = -30.0, double max_db = 0.0);

// Harmonic tones with random pitch, timbre and envelope, peak-normalised.
std::vector<std::vector<float>> synthetic_clips(int count, std::int64_t samples, int sample_rate, std::uint64_t seed);

// Mono WAV files of one directory, loaded in file-name order.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<std::vector<float>> clips);
  static Dataset from_directory(const std::string& dir, int sample_rate);

  std::size_t size() const { return clips_.size(); }
  const std::vector<float>& clip(std::size_t i) const { return clips_.at(i); }

  // Walks the clips in a seeded permutation (reshuffled every epoch) and
  // returns peak-normalised random crops, zero-padded when a clip is short.
  std::vector<std::vector<float>> next_batch(int batch_size, std::int64_t crop_samples, std::mt19937_64& rng);

 private:
  std::vector<std::vector<float>> clips_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct StepStats {
  std::int64_t step = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double adv = 0.0;
  double feat = 0.0;
  double rec = 0.0;
  std::vector<int> n_q;  // per example
  int replaced = 0;      // dead codebook vectors reseeded this step
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  CodecModel& model() { return model_; }
  const CodecModel& model() const { return model_; }
  Discriminators& discriminators() { return disc_; }
  bool has_discriminators() const { return has_disc_; }
  std::mt19937_64& rng() { return rng_; }

  // Updates the discriminators only. Returns L_D.
  double train_step_d(const std::vector<ExampleTuple>& batch);
  // Updates encoder, decoder and FiLM, then the codebooks by EMA and dead
  // vector replacement. The first call initialises the codebooks by k-means.
  StepStats train_step_g(const std::vector<ExampleTuple>& batch);
  // One discriminator step (skipped for reconstruction-only weights) then
  // one generator step.
  StepStats train_step(const std::vector<ExampleTuple>& batch);

  // Mean L_rec of the quantised reconstruction, without updating anything.
  double evaluate_rec(const std::vector<ExampleTuple>& examples, int n_q) const;

  // k-means codebook initialisation from the embeddings of `batch`; a no-op
  // once the codebooks are initialised.
  void initialize_codebooks(const std::vector<ExampleTuple>& batch);

  std::int64_t steps_done() const { return steps_; }

 private:
  Tensor condition(bool denoise) const;
  Tensor generate(const ExampleTuple& ex, int n_q, RvqQuantized* quantized) const;

  TrainConfig config_;
  std::mt19937_64 rng_;
  CodecModel model_;
  Discriminators disc_;
  bool has_disc_ = false;
  Adam opt_g_;
  Adam opt_d_;
  std::int64_t steps_ = 0;
};

}  // namespace soundstream
