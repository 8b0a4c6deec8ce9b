#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soundstream/rvq.hpp"
#include "soundstream/tensor.hpp"

namespace soundstream {

enum class ConditionSite { EncoderBottleneck, DecoderBottleneck };

struct ModelConfig {
  int sample_rate = 24000;
  int enc_channels = 32;
  int dec_channels = 32;
  std::vector<int> strides{2, 4, 5, 8};
  int embedding_dim = 128;
  int num_quantizers = 8;
  int codebook_size = 1024;
  bool denoise = false;
  ConditionSite condition_site = ConditionSite::EncoderBottleneck;

  // Samples per embedding frame (product of the strides).
  int hop() const;
  int num_blocks() const { return static_cast<int>(strides.size()); }
  int bits_per_frame() const;
  void validate() const;  // throws std::invalid_argument
};

struct Latency {
  int samples = 0;
  double milliseconds = 0.0;
};

Latency architectural_latency(const ModelConfig& config);

struct CausalConv {
  Tensor weight;  // [C_out x C_in x K]
  Tensor bias;    // [C_out]
  int stride = 1;
  int dilation = 1;

  int kernel() const { return static_cast<int>(weight.dim(2)); }
  int in_channels() const { return static_cast<int>(weight.dim(1)); }
  int out_channels() const { return static_cast<int>(weight.dim(0)); }
  Tensor forward(const Tensor& x) const;
};

struct CausalConvTranspose {
  Tensor weight;  // [C_in x C_out x K]
  Tensor bias;    // [C_out]
  int stride = 1;

  int kernel() const { return static_cast<int>(weight.dim(2)); }
  Tensor forward(const Tensor& x) const;
};

// ELU -> dilated k3 conv -> ELU -> k1 conv, plus the input.
struct ResidualUnit {
  CausalConv dilated;
  CausalConv pointwise;
  Tensor forward(const Tensor& x) const;
};

struct EncoderBlock {
  std::vector<ResidualUnit> units;
  CausalConv down;  // preceded by ELU
};

struct DecoderBlock {
  CausalConvTranspose up;  // preceded by ELU
  std::vector<ResidualUnit> units;
};

struct Encoder {
  CausalConv input;
  std::vector<EncoderBlock> blocks;
  CausalConv output;  // preceded by ELU
  Tensor forward(const Tensor& x) const;  // [1 x T] -> [D x S]
};

struct Decoder {
  CausalConv input;
  std::vector<DecoderBlock> blocks;
  CausalConv output;  // preceded by ELU
  Tensor forward(const Tensor& y) const;  // [D x S] -> [1 x S*M]
};

struct FilmLayer {
  Tensor weight;  // [2D x 2]
  Tensor bias;    // [2D]
  Tensor forward(const Tensor& activations, const Tensor& cond) const;
};

inline constexpr int kResidualDilations[3] = {1, 3, 9};

Encoder build_encoder(const ModelConfig& config, std::mt19937_64& rng);
Decoder build_decoder(const ModelConfig& config, std::mt19937_64& rng);
FilmLayer build_film(int channels);

// One-hot conditioning [2 x frames]; row 1 selects denoising.
Tensor denoise_condition(bool denoise, std::int64_t frames = 1);

using NamedTensor = std::pair<std::string, Tensor>;

class CodecModel {
 public:
  explicit CodecModel(ModelConfig config, std::uint64_t seed = 0, RvqOptions rvq_options = {});

  const ModelConfig& config() const { return config_; }

  // x: [T] or [1 x T] with T a multiple of hop(). Returns [S x D].
  // `cond` is only used by models built with denoise enabled; undefined
  // means denoising off.
  Tensor encode(const Tensor& x, const Tensor& cond = {}) const;
  // y: [S x D]. Returns [S * hop()].
  Tensor decode(const Tensor& y, const Tensor& cond = {}) const;

  // Offline codec round trip for arbitrary lengths: zero-pads to a multiple
  // of hop(), quantizes with n_q layers and trims the output.
  std::vector<float> reconstruct(std::span<const float> audio, int n_q, bool denoise = false) const;
  IndexMatrix compress(std::span<const float> audio, int n_q, bool denoise = false) const;
  std::vector<float> decompress(const IndexMatrix& indices, bool denoise = false) const;

  // Trainable tensors (encoder, decoder, FiLM) with stable names.
  std::vector<NamedTensor> parameters() const;
  // Trainable weights plus the codebook vectors.
  std::int64_t parameter_count() const;

  Encoder encoder;
  Decoder decoder;
  std::optional<FilmLayer> film;
  ResidualVQ rvq;

 private:
  Tensor condition_for(const Tensor& cond) const;
  ModelConfig config_;
};

std::vector<float> pad_to_multiple(std::span<const float> audio, int multiple);

}  // namespace soundstream
