#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "soundstream/model.hpp"
#include "soundstream/tensor.hpp"

namespace soundstream {

struct DiscriminatorConfig {
  // Waveform discriminators.
  int wave_scales = 3;
  int wave_base_channels = 16;
  int wave_max_channels = 1024;
  int wave_grouped_layers = 4;
  // STFT discriminator.
  int stft_window = 1024;
  int stft_hop = 256;
  std::vector<int> stft_channels{32, 64, 128, 256, 256, 512, 512};  // stem, then one per residual block
  float slope = 0.2f;

  void validate() const;
};

// Logits and the intermediate activations used by the feature loss.
struct DiscriminatorOutput {
  Tensor logits;                 // [1 x T_k]
  std::vector<Tensor> features;  // every layer before the logit layer
};

struct Conv1dLayer {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int groups = 1;
};

// Multi-layer grouped 1-D convolution stack operating on one time scale.
struct WaveDiscriminator {
  std::vector<Conv1dLayer> layers;  // last layer produces the logits
  DiscriminatorOutput forward(const Tensor& x, float slope) const;
};

struct Conv2dLayer {
  Tensor weight;
  Tensor bias;
  int stride_f = 1;
  int stride_t = 1;
};

struct StftResidualBlock {
  Conv2dLayer conv;     // 3x3
  Conv2dLayer strided;  // (4 x 3) or (4 x 4) kernel, stride (2,1) or (2,2) over (freq, time)
  Conv2dLayer skip;     // 1x1 with the same stride
};

struct StftDiscriminator {
  int window = 1024;
  int hop = 256;
  Conv2dLayer stem;  // 7x7
  std::vector<StftResidualBlock> blocks;
  Conv2dLayer head;  // (F / 2^blocks) x 1, valid padding
  DiscriminatorOutput forward(const Tensor& x, float slope) const;
};

// The STFT discriminator (k = 0) followed by the waveform discriminators at
// successively halved sample rates.
class Discriminators {
 public:
  Discriminators() = default;
  Discriminators(DiscriminatorConfig config, std::uint64_t seed);

  const DiscriminatorConfig& config() const { return config_; }
  // x: [T] or [1 x T]. Returns one output per discriminator.
  std::vector<DiscriminatorOutput> forward(const Tensor& x) const;
  std::vector<NamedTensor> parameters() const;
  std::int64_t min_length() const { return config_.stft_window; }
  int count() const { return 1 + static_cast<int>(wave_.size()); }

  StftDiscriminator stft;

 private:
  DiscriminatorConfig config_;
  std::vector<WaveDiscriminator> wave_;
};

}  // namespace soundstream
