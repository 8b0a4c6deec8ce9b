#include "soundstream/model.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

#include "soundstream/ops.hpp"

namespace soundstream {

int ModelConfig::hop() const {
  int m = 1;
  for (int s : strides) m *= s;
  return m;
}

int ModelConfig::bits_per_frame() const {
  return num_quantizers * std::countr_zero(static_cast<unsigned>(codebook_size));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (sample_rate <= 0) fail("sample_rate must be positive");
  if (enc_channels < 1 || dec_channels < 1) fail("channel counts must be positive");
  if (strides.empty()) fail("at least one stride is required");
  for (int s : strides)
    if (s < 1) fail("strides must be >= 1");
  if (embedding_dim < 1) fail("embedding_dim must be positive");
  if (num_quantizers < 1) fail("num_quantizers must be positive");
  if (codebook_size < 1 || !std::has_single_bit(static_cast<unsigned>(codebook_size)))
    fail("codebook_size must be a power of two");
}

Latency architectural_latency(const ModelConfig& config) {
  config.validate();
  const int m = config.hop();
  return {m, 1000.0 * m / config.sample_rate};
}

Tensor CausalConv::forward(const Tensor& x) const {
  return ops::conv1d(x, weight, bias, {.stride = stride, .dilation = dilation});
}

Tensor CausalConvTranspose::forward(const Tensor& x) const { return ops::conv_transpose1d(x, weight, bias, stride); }

Tensor ResidualUnit::forward(const Tensor& x) const {
  Tensor h = dilated.forward(ops::elu(x));
  h = pointwise.forward(ops::elu(h));
  return ops::add(x, h);
}

Tensor Encoder::forward(const Tensor& x) const {
  Tensor h = input.forward(x);
  for (const auto& block : blocks) {
    for (const auto& unit : block.units) h = unit.forward(h);
    h = block.down.forward(ops::elu(h));
  }
  return output.forward(ops::elu(h));
}

Tensor Decoder::forward(const Tensor& y) const {
  Tensor h = input.forward(y);
  for (const auto& block : blocks) {
    h = block.up.forward(ops::elu(h));
    for (const auto& unit : block.units) h = unit.forward(h);
  }
  return output.forward(ops::elu(h));
}

Tensor FilmLayer::forward(const Tensor& activations, const Tensor& cond) const {
  return ops::film(activations, cond, weight, bias);
}

namespace {

// Kaiming-uniform with a = sqrt(5): U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  std::uniform_real_distribution<float> u(-bound, bound);
  Tensor t(std::move(shape), true);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

CausalConv make_conv(int cin, int cout, int kernel, int stride, int dilation, std::mt19937_64& rng) {
  CausalConv c;
  c.weight = init_uniform({cout, cin, kernel}, static_cast<std::int64_t>(cin) * kernel, rng);
  c.bias = Tensor::zeros({cout}, true);
  c.stride = stride;
  c.dilation = dilation;
  return c;
}

CausalConvTranspose make_conv_transpose(int cin, int cout, int kernel, int stride, std::mt19937_64& rng) {
  CausalConvTranspose c;
  c.weight = init_uniform({cin, cout, kernel}, static_cast<std::int64_t>(cout) * kernel, rng);
  c.bias = Tensor::zeros({cout}, true);
  c.stride = stride;
  return c;
}

std::vector<ResidualUnit> make_units(int channels, std::mt19937_64& rng) {
  std::vector<ResidualUnit> units;
  for (int d : kResidualDilations) {
    units.push_back({make_conv(channels, channels, 3, 1, d, rng), make_conv(channels, channels, 1, 1, 1, rng)});
  }
  return units;
}

void add_conv(std::vector<NamedTensor>& out, const std::string& name, const Tensor& w, const Tensor& b) {
  out.emplace_back(name + ".weight", w);
  out.emplace_back(name + ".bias", b);
}

}  // namespace

Encoder build_encoder(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  Encoder enc;
  int ch = config.enc_channels;
  enc.input = make_conv(1, ch, 7, 1, 1, rng);
  for (int s : config.strides) {
    EncoderBlock block;
    block.units = make_units(ch, rng);
    block.down = make_conv(ch, 2 * ch, 2 * s, s, 1, rng);
    enc.blocks.push_back(std::move(block));
    ch *= 2;
  }
  enc.output = make_conv(ch, config.embedding_dim, 3, 1, 1, rng);
  return enc;
}

Decoder build_decoder(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  Decoder dec;
  int ch = config.dec_channels << config.num_blocks();
  dec.input = make_conv(config.embedding_dim, ch, 7, 1, 1, rng);
  for (auto it = config.strides.rbegin(); it != config.strides.rend(); ++it) {
    DecoderBlock block;
    block.up = make_conv_transpose(ch, ch / 2, 2 * *it, *it, rng);
    block.units = make_units(ch / 2, rng);
    dec.blocks.push_back(std::move(block));
    ch /= 2;
  }
  dec.output = make_conv(ch, 1, 7, 1, 1, rng);
  return dec;
}

FilmLayer build_film(int channels) {
  FilmLayer f;
  f.weight = Tensor::zeros({2 * channels, 2}, true);
  f.bias = Tensor::zeros({2 * channels}, true);
  for (int c = 0; c < channels; ++c) f.bias.data()[c] = 1.0f;
  return f;
}

Tensor denoise_condition(bool denoise, std::int64_t frames) {
  Tensor c({2, frames});
  for (std::int64_t n = 0; n < frames; ++n) c.data()[(denoise ? 1 : 0) * frames + n] = 1.0f;
  return c;
}

CodecModel::CodecModel(ModelConfig config, std::uint64_t seed, RvqOptions rvq_options) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  encoder = build_encoder(config_, rng);
  decoder = build_decoder(config_, rng);
  if (config_.denoise) film = build_film(config_.embedding_dim);
  rvq = ResidualVQ(config_.num_quantizers, config_.codebook_size, config_.embedding_dim, rvq_options);
}

Tensor CodecModel::condition_for(const Tensor& cond) const {
  return cond.defined() ? cond : denoise_condition(false, 1);
}

Tensor CodecModel::encode(const Tensor& x, const Tensor& cond) const {
  const std::int64_t T = x.numel();
  if (!(x.ndim() == 1 || (x.ndim() == 2 && x.dim(0) == 1))) {
    throw std::invalid_argument("encode: expected a mono waveform, got " + shape_to_string(x.shape()));
  }
  if (T % config_.hop() != 0) {
    throw std::invalid_argument("encode: length " + std::to_string(T) + " is not a multiple of the hop " +
                                std::to_string(config_.hop()));
  }
  Tensor h = encoder.forward(x.ndim() == 1 ? ops::reshape(x, {1, T}) : x);
  if (film && config_.condition_site == ConditionSite::EncoderBottleneck) {
    h = film->forward(h, condition_for(cond));
  }
  return ops::transpose(h);
}

Tensor CodecModel::decode(const Tensor& y, const Tensor& cond) const {
  if (y.ndim() != 2 || y.dim(1) != config_.embedding_dim) {
    throw std::invalid_argument("decode: expected [S x " + std::to_string(config_.embedding_dim) + "], got " +
                                shape_to_string(y.shape()));
  }
  Tensor h = ops::transpose(y);
  if (film && config_.condition_site == ConditionSite::DecoderBottleneck) {
    h = film->forward(h, condition_for(cond));
  }
  Tensor out = decoder.forward(h);
  return ops::reshape(out, {out.numel()});
}

std::vector<float> pad_to_multiple(std::span<const float> audio, int multiple) {
  const std::size_t n = audio.size();
  const std::size_t padded = std::max<std::size_t>(multiple, (n + multiple - 1) / multiple * multiple);
  std::vector<float> out(padded, 0.0f);
  std::copy(audio.begin(), audio.end(), out.begin());
  return out;
}

IndexMatrix CodecModel::compress(std::span<const float> audio, int n_q, bool denoise) const {
  NoGradScope no_grad;
  auto padded = pad_to_multiple(audio, config_.hop());
  const auto n = static_cast<std::int64_t>(padded.size());
  Tensor y = encode(Tensor({n}, std::move(padded)), denoise_condition(denoise));
  return rvq.encode(y, n_q);
}

std::vector<float> CodecModel::decompress(const IndexMatrix& indices, bool denoise) const {
  NoGradScope no_grad;
  Tensor out = decode(rvq.decode(indices), denoise_condition(denoise));
  return {out.data().begin(), out.data().end()};
}

std::vector<float> CodecModel::reconstruct(std::span<const float> audio, int n_q, bool denoise) const {
  auto out = decompress(compress(audio, n_q, denoise), denoise);
  out.resize(audio.size());
  return out;
}

std::vector<NamedTensor> CodecModel::parameters() const {
  std::vector<NamedTensor> out;
  add_conv(out, "encoder.input", encoder.input.weight, encoder.input.bias);
  for (std::size_t b = 0; b < encoder.blocks.size(); ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b);
    for (std::size_t u = 0; u < encoder.blocks[b].units.size(); ++u) {
      const auto& unit = encoder.blocks[b].units[u];
      add_conv(out, prefix + ".unit" + std::to_string(u) + ".dilated", unit.dilated.weight, unit.dilated.bias);
      add_conv(out, prefix + ".unit" + std::to_string(u) + ".pointwise", unit.pointwise.weight, unit.pointwise.bias);
    }
    add_conv(out, prefix + ".down", encoder.blocks[b].down.weight, encoder.blocks[b].down.bias);
  }
  add_conv(out, "encoder.output", encoder.output.weight, encoder.output.bias);
  add_conv(out, "decoder.input", decoder.input.weight, decoder.input.bias);
  for (std::size_t b = 0; b < decoder.blocks.size(); ++b) {
    const std::string prefix = "decoder.block" + std::to_string(b);
    add_conv(out, prefix + ".up", decoder.blocks[b].up.weight, decoder.blocks[b].up.bias);
    for (std::size_t u = 0; u < decoder.blocks[b].units.size(); ++u) {
      const auto& unit = decoder.blocks[b].units[u];
      add_conv(out, prefix + ".unit" + std::to_string(u) + ".dilated", unit.dilated.weight, unit.dilated.bias);
      add_conv(out, prefix + ".unit" + std::to_string(u) + ".pointwise", unit.pointwise.weight, unit.pointwise.bias);
    }
  }
  add_conv(out, "decoder.output", decoder.output.weight, decoder.output.bias);
  if (film) add_conv(out, "film", film->weight, film->bias);
  return out;
}

std::int64_t CodecModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  n += static_cast<std::int64_t>(rvq.num_layers()) * rvq.codebook_size() * rvq.dim();
  return n;
}

}  // namespace soundstream
