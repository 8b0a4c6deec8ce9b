#include "soundstream/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "conv_kernel.hpp"
#include "soundstream/ops.hpp"

namespace soundstream {

namespace {

LayerHistory history_for(const CausalConv& c) {
  const int pad = detail::conv_pad_left(c.kernel(), c.dilation, c.stride, ops::ConvPadding::Causal);
  if (pad < 0) throw std::invalid_argument("streaming: kernel shorter than stride is not supported");
  return {c.in_channels(), pad, std::vector<float>(static_cast<std::size_t>(c.in_channels()) * pad, 0.0f)};
}

LayerHistory history_for(const CausalConvTranspose& c) {
  const int cin = static_cast<int>(c.weight.dim(0));
  const int h = detail::conv_transpose_history(c.kernel(), c.stride);
  return {cin, h, std::vector<float>(static_cast<std::size_t>(cin) * h, 0.0f)};
}

// Prepends the layer history to x ([C x L]) and keeps the newest samples
// for the next call.
std::vector<float> with_history(LayerHistory& h, const Tensor& x) {
  const std::int64_t L = x.dim(1);
  const std::int64_t len = h.length + L;
  std::vector<float> buf(static_cast<std::size_t>(h.channels * len));
  for (int c = 0; c < h.channels; ++c) {
    float* row = buf.data() + c * len;
    std::copy_n(h.values.data() + static_cast<std::size_t>(c) * h.length, h.length, row);
    std::copy_n(x.ptr() + c * L, L, row + h.length);
    std::copy_n(row + len - h.length, h.length, h.values.data() + static_cast<std::size_t>(c) * h.length);
  }
  return buf;
}

struct Cursor {
  std::vector<LayerHistory>& layers;
  std::size_t next = 0;
  LayerHistory& take() { return layers.at(next++); }
};

Tensor step(const CausalConv& c, Cursor& cur, const Tensor& x) {
  LayerHistory& h = cur.take();
  const std::int64_t L = x.dim(1);
  if (L % c.stride != 0) throw std::logic_error("streaming: chunk not aligned to layer stride");
  const auto xp = with_history(h, x);
  Tensor out({c.out_channels(), L / c.stride});
  detail::conv1d_valid(xp.data(), h.length + L, h.channels, c.weight.ptr(), c.bias.ptr(), c.out_channels(), c.kernel(),
                       c.stride, c.dilation, 1, out.ptr(), L / c.stride);
  return out;
}

Tensor step(const CausalConvTranspose& c, Cursor& cur, const Tensor& x) {
  LayerHistory& h = cur.take();
  const std::int64_t L = x.dim(1);
  const auto xh = with_history(h, x);
  const int cout = static_cast<int>(c.weight.dim(1));
  Tensor out({cout, L * c.stride});
  detail::conv_transpose1d_valid(xh.data(), L, h.channels, c.weight.ptr(), c.bias.ptr(), cout, c.kernel(), c.stride,
                                 out.ptr());
  return out;
}

Tensor step(const ResidualUnit& u, Cursor& cur, const Tensor& x) {
  Tensor h = step(u.dilated, cur, ops::elu(x));
  h = step(u.pointwise, cur, ops::elu(h));
  return ops::add(x, h);
}

void check_model(const CodecModel& model, const CodecModel* owner) {
  if (owner != &model) throw std::invalid_argument("streaming: state was created for a different model");
}

// [1 x hop] -> [1 x D]
Tensor embed_chunk(std::vector<LayerHistory>& layers, const CodecModel& model, std::span<const float> chunk,
                   bool denoise) {
  const Encoder& enc = model.encoder;
  Cursor cur{layers};
  Tensor h = step(enc.input, cur, Tensor({1, static_cast<std::int64_t>(chunk.size())}, {chunk.begin(), chunk.end()}));
  for (const auto& block : enc.blocks) {
    for (const auto& unit : block.units) h = step(unit, cur, h);
    h = step(block.down, cur, ops::elu(h));
  }
  h = step(enc.output, cur, ops::elu(h));
  if (model.film && model.config().condition_site == ConditionSite::EncoderBottleneck) {
    h = model.film->forward(h, denoise_condition(denoise));
  }
  return ops::transpose(h);
}

// [1 x D] -> hop samples
std::vector<float> synthesize_frame(std::vector<LayerHistory>& layers, const CodecModel& model, const Tensor& y,
                                    bool denoise) {
  const Decoder& dec = model.decoder;
  Cursor cur{layers};
  Tensor h = ops::transpose(y);
  if (model.film && model.config().condition_site == ConditionSite::DecoderBottleneck) {
    h = model.film->forward(h, denoise_condition(denoise));
  }
  h = step(dec.input, cur, h);
  for (const auto& block : dec.blocks) {
    h = step(block.up, cur, ops::elu(h));
    for (const auto& unit : block.units) h = step(unit, cur, h);
  }
  h = step(dec.output, cur, ops::elu(h));
  return {h.data().begin(), h.data().end()};
}

void check_denoise(const CodecModel& model, bool denoise) {
  if (denoise && !model.film) throw std::invalid_argument("streaming: model has no denoising conditioning");
}

}  // namespace

StreamingState::StreamingState(const CodecModel& model) : model_(&model) {
  const Encoder& enc = model.encoder;
  encoder_.push_back(history_for(enc.input));
  for (const auto& block : enc.blocks) {
    for (const auto& unit : block.units) {
      encoder_.push_back(history_for(unit.dilated));
      encoder_.push_back(history_for(unit.pointwise));
    }
    encoder_.push_back(history_for(block.down));
  }
  encoder_.push_back(history_for(enc.output));

  const Decoder& dec = model.decoder;
  decoder_.push_back(history_for(dec.input));
  for (const auto& block : dec.blocks) {
    decoder_.push_back(history_for(block.up));
    for (const auto& unit : block.units) {
      decoder_.push_back(history_for(unit.dilated));
      decoder_.push_back(history_for(unit.pointwise));
    }
  }
  decoder_.push_back(history_for(dec.output));
}

void StreamingState::reset() {
  for (auto* layers : {&encoder_, &decoder_})
    for (auto& h : *layers) std::fill(h.values.begin(), h.values.end(), 0.0f);
  frames_encoded_ = 0;
  frames_decoded_ = 0;
}

std::size_t StreamingState::state_size() const {
  std::size_t n = 0;
  for (const auto* layers : {&encoder_, &decoder_})
    for (const auto& h : *layers) n += h.values.size();
  return n;
}

IndexMatrix stream_encode(StreamingState& state, const CodecModel& model, std::span<const float> chunk, int n_q,
                          bool denoise) {
  check_model(model, state.model_);
  check_denoise(model, denoise);
  if (static_cast<int>(chunk.size()) != model.config().hop()) {
    throw std::invalid_argument("stream_encode: chunk must hold exactly " + std::to_string(model.config().hop()) +
                                " samples, got " + std::to_string(chunk.size()));
  }
  NoGradScope no_grad;
  Tensor y = embed_chunk(state.encoder_, model, chunk, denoise);
  ++state.frames_encoded_;
  return model.rvq.encode(y, n_q);
}

std::vector<float> stream_decode(StreamingState& state, const CodecModel& model, const IndexMatrix& frame,
                                 bool denoise) {
  check_model(model, state.model_);
  check_denoise(model, denoise);
  if (frame.frames != 1) throw std::invalid_argument("stream_decode: expected a single frame of indices");
  NoGradScope no_grad;
  Tensor y = model.rvq.decode(frame);
  ++state.frames_decoded_;
  return synthesize_frame(state.decoder_, model, y, denoise);
}

FrameAccumulator::FrameAccumulator(int frame_size) : frame_size_(frame_size) {
  if (frame_size < 1) throw std::invalid_argument("FrameAccumulator: frame size must be positive");
}

std::vector<std::vector<float>> FrameAccumulator::push(std::span<const float> samples) {
  buffer_.insert(buffer_.end(), samples.begin(), samples.end());
  std::vector<std::vector<float>> out;
  std::size_t pos = 0;
  while (buffer_.size() - pos >= static_cast<std::size_t>(frame_size_)) {
    out.emplace_back(buffer_.begin() + static_cast<std::ptrdiff_t>(pos),
                     buffer_.begin() + static_cast<std::ptrdiff_t>(pos + frame_size_));
    pos += frame_size_;
  }
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos));
  return out;
}

std::vector<std::vector<float>> FrameAccumulator::flush() {
  if (buffer_.empty()) return {};
  buffer_.resize(static_cast<std::size_t>(frame_size_), 0.0f);
  std::vector<std::vector<float>> out{std::move(buffer_)};
  buffer_.clear();
  return out;
}

namespace {

const char* mode_name(BenchMode m) {
  switch (m) {
    case BenchMode::Encode:
      return "encode";
    case BenchMode::Decode:
      return "decode";
    case BenchMode::Both:
      return "both";
  }
  return "?";
}

}  // namespace

std::string RtfReport::to_key_value() const {
  std::ostringstream os;
  os << "mode=" << mode_name(mode) << "\n"
     << "audio_seconds=" << audio_seconds << "\n"
     << "wall_seconds=" << wall_seconds << "\n"
     << "rtf=" << rtf << "\n"
     << "encode_seconds=" << encode_seconds << "\n"
     << "quantize_seconds=" << quantize_seconds << "\n"
     << "decode_seconds=" << decode_seconds << "\n"
     << "runs=" << runs << "\n";
  return os.str();
}

std::string RtfReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "RTF " << rtf << "x (" << mode_name(mode) << ", " << audio_seconds << " s of audio in " << wall_seconds
     << " s, median of " << runs << " runs)\n"
     << "  encode   " << encode_seconds << " s\n"
     << "  quantize " << quantize_seconds << " s\n"
     << "  decode   " << decode_seconds << " s\n";
  return os.str();
}

RtfReport rtf_benchmark(const CodecModel& model, double seconds, BenchMode mode, int runs, int n_q) {
  if (seconds <= 0.0) throw std::invalid_argument("rtf_benchmark: seconds must be positive");
  if (runs < 1) throw std::invalid_argument("rtf_benchmark: runs must be positive");
  const auto& cfg = model.config();
  if (n_q < 0) n_q = cfg.num_quantizers;
  const int hop = cfg.hop();
  const auto frames = static_cast<std::int64_t>(std::ceil(seconds * cfg.sample_rate / hop));

  std::mt19937_64 rng(1234);
  std::normal_distribution<float> nd(0.0f, 0.1f);
  std::vector<float> audio(static_cast<std::size_t>(frames * hop));
  for (auto& v : audio) v = nd(rng);

  using Clock = std::chrono::steady_clock;
  auto since = [](Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); };

  // Indices for decode-only runs come from one untimed encoding pass.
  std::vector<IndexMatrix> indices;
  {
    StreamingState st(model);
    for (std::int64_t f = 0; f < frames; ++f)
      indices.push_back(stream_encode(st, model, std::span(audio).subspan(f * hop, hop), n_q));
  }

  struct Run {
    double total, enc, quant, dec;
  };
  std::vector<Run> results;
  StreamingState state(model);
  NoGradScope no_grad;
  for (int r = 0; r <= runs; ++r) {
    state.reset();
    Run run{0, 0, 0, 0};
    const auto start = Clock::now();
    for (std::int64_t f = 0; f < frames; ++f) {
      if (mode != BenchMode::Decode) {
        auto t0 = Clock::now();
        Tensor y = embed_chunk(state.encoder_, model, std::span(audio).subspan(f * hop, hop), false);
        run.enc += since(t0);
        t0 = Clock::now();
        indices[f] = model.rvq.encode(y, n_q);
        run.quant += since(t0);
      }
      if (mode != BenchMode::Encode) {
        auto t0 = Clock::now();
        Tensor y = model.rvq.decode(indices[f]);
        run.quant += since(t0);
        t0 = Clock::now();
        (void)synthesize_frame(state.decoder_, model, y, false);
        run.dec += since(t0);
      }
    }
    run.total = since(start);
    if (r > 0) results.push_back(run);  // run 0 is warm-up
  }
  std::sort(results.begin(), results.end(), [](const Run& a, const Run& b) { return a.total < b.total; });
  const Run& med = results[results.size() / 2];

  RtfReport rep;
  rep.mode = mode;
  rep.runs = runs;
  rep.audio_seconds = seconds;
  // Whole frames are processed; times are rescaled to the requested duration.
  rep.wall_seconds = med.total * seconds / (static_cast<double>(frames * hop) / cfg.sample_rate);
  rep.rtf = rep.audio_seconds / rep.wall_seconds;
  const double scale = rep.wall_seconds / med.total;
  rep.encode_seconds = med.enc * scale;
  rep.quantize_seconds = med.quant * scale;
  rep.decode_seconds = med.dec * scale;
  return rep;
}

}  // namespace soundstream
