#include "soundstream/discriminator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "soundstream/ops.hpp"
#include "soundstream/spectral.hpp"

namespace soundstream {

namespace {

Tensor uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> u(-bound, bound);
  Tensor t(std::move(shape), true);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Conv1dLayer conv1(int cin, int cout, int kernel, int stride, int groups, std::mt19937_64& rng) {
  return {uniform({cout, cin / groups, kernel}, static_cast<std::int64_t>(cin / groups) * kernel, rng),
          Tensor::zeros({cout}, true), stride, groups};
}

Conv2dLayer conv2(int cin, int cout, int kf, int kt, int sf, int st, std::mt19937_64& rng) {
  return {uniform({cout, cin, kf, kt}, static_cast<std::int64_t>(cin) * kf * kt, rng), Tensor::zeros({cout}, true), sf,
          st};
}

Tensor apply(const Conv1dLayer& l, const Tensor& x) {
  return ops::conv1d(x, l.weight, l.bias,
                     {.stride = l.stride, .groups = l.groups, .padding = ops::ConvPadding::Centered});
}

Tensor apply(const Conv2dLayer& l, const Tensor& x, ops::Padding2d pad = ops::Padding2d::Same) {
  return ops::conv2d(x, l.weight, l.bias, {.stride_f = l.stride_f, .stride_t = l.stride_t, .padding = pad});
}

void add(std::vector<NamedTensor>& out, const std::string& name, const Tensor& w, const Tensor& b) {
  out.emplace_back(name + ".weight", w);
  out.emplace_back(name + ".bias", b);
}

}  // namespace

void DiscriminatorConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("discriminator config: " + m); };
  if (wave_scales < 0) fail("wave_scales must be >= 0");
  if (wave_base_channels < 1 || wave_max_channels < wave_base_channels) fail("bad wave channel counts");
  if (wave_grouped_layers < 0) fail("wave_grouped_layers must be >= 0");
  if (stft_window < 2 || (stft_window & (stft_window - 1)) != 0) fail("stft_window must be a power of two");
  if (stft_hop < 1 || stft_hop > stft_window) fail("stft_hop must be in [1, window]");
  if (stft_channels.size() < 2) fail("stft_channels needs a stem and at least one block");
  const int blocks = static_cast<int>(stft_channels.size()) - 1;
  if ((stft_window / 2) >> blocks < 1) fail("too many STFT blocks for the window length");
}

DiscriminatorOutput WaveDiscriminator::forward(const Tensor& x, float slope) const {
  DiscriminatorOutput out;
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = ops::leaky_relu(apply(layers[i], h), slope);
    out.features.push_back(h);
  }
  out.logits = apply(layers.back(), h);
  return out;
}

DiscriminatorOutput StftDiscriminator::forward(const Tensor& x, float slope) const {
  DiscriminatorOutput out;
  Tensor h = ops::leaky_relu(apply(stem, ops::stft(x, window, hop)), slope);
  out.features.push_back(h);
  for (const auto& b : blocks) {
    Tensor r = apply(b.strided, ops::leaky_relu(apply(b.conv, h), slope));
    h = ops::leaky_relu(ops::add(r, apply(b.skip, h)), slope);
    out.features.push_back(h);
  }
  // [1 x 1 x T'] -> [1 x T']
  Tensor logits = apply(head, h, ops::Padding2d::Valid);
  out.logits = ops::reshape(logits, {1, logits.dim(2)});
  return out;
}

Discriminators::Discriminators(DiscriminatorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);

  const auto& ch = config_.stft_channels;
  stft.window = config_.stft_window;
  stft.hop = config_.stft_hop;
  stft.stem = conv2(2, ch[0], 7, 7, 1, 1, rng);
  for (std::size_t i = 1; i < ch.size(); ++i) {
    // Frequency is halved by every block, time by every second one.
    const bool halve_time = i % 2 == 0;
    StftResidualBlock b;
    b.conv = conv2(ch[i - 1], ch[i - 1], 3, 3, 1, 1, rng);
    b.strided = conv2(ch[i - 1], ch[i], 4, halve_time ? 4 : 3, 2, halve_time ? 2 : 1, rng);
    b.skip = conv2(ch[i - 1], ch[i], 1, 1, 2, halve_time ? 2 : 1, rng);
    stft.blocks.push_back(std::move(b));
  }
  const int blocks = static_cast<int>(ch.size()) - 1;
  stft.head = conv2(ch.back(), 1, (config_.stft_window / 2) >> blocks, 1, 1, 1, rng);

  for (int k = 0; k < config_.wave_scales; ++k) {
    WaveDiscriminator d;
    int c = config_.wave_base_channels;
    d.layers.push_back(conv1(1, c, 15, 1, 1, rng));
    for (int l = 0; l < config_.wave_grouped_layers; ++l) {
      const int next = std::min(c * 4, config_.wave_max_channels);
      const int groups = std::max(1, c / 4);
      if (next % groups != 0) throw std::invalid_argument("discriminator config: channel counts incompatible with groups");
      d.layers.push_back(conv1(c, next, 41, 4, groups, rng));
      c = next;
    }
    d.layers.push_back(conv1(c, c, 5, 1, 1, rng));
    d.layers.push_back(conv1(c, 1, 3, 1, 1, rng));
    wave_.push_back(std::move(d));
  }
}

std::vector<DiscriminatorOutput> Discriminators::forward(const Tensor& x) const {
  const std::int64_t T = x.numel();
  if (T < min_length()) {
    throw std::invalid_argument("discriminator: input of " + std::to_string(T) + " samples is shorter than " +
                                std::to_string(min_length()));
  }
  Tensor wave = x.ndim() == 1 ? ops::reshape(x, {1, T}) : x;
  std::vector<DiscriminatorOutput> out;
  out.push_back(stft.forward(wave, config_.slope));
  for (std::size_t k = 0; k < wave_.size(); ++k) {
    if (k > 0) wave = ops::avg_pool1d(wave, 4, 2, 1);
    out.push_back(wave_[k].forward(wave, config_.slope));
  }
  return out;
}

std::vector<NamedTensor> Discriminators::parameters() const {
  std::vector<NamedTensor> out;
  add(out, "stft.stem", stft.stem.weight, stft.stem.bias);
  for (std::size_t i = 0; i < stft.blocks.size(); ++i) {
    const std::string p = "stft.block" + std::to_string(i);
    add(out, p + ".conv", stft.blocks[i].conv.weight, stft.blocks[i].conv.bias);
    add(out, p + ".strided", stft.blocks[i].strided.weight, stft.blocks[i].strided.bias);
    add(out, p + ".skip", stft.blocks[i].skip.weight, stft.blocks[i].skip.bias);
  }
  add(out, "stft.head", stft.head.weight, stft.head.bias);
  for (std::size_t k = 0; k < wave_.size(); ++k) {
    for (std::size_t l = 0; l < wave_[k].layers.size(); ++l) {
      add(out, "wave" + std::to_string(k) + ".layer" + std::to_string(l), wave_[k].layers[l].weight,
          wave_[k].layers[l].bias);
    }
  }
  return out;
}

}  // namespace soundstream
