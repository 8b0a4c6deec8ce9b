#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "soundstream/model.hpp"
#include "soundstream/rvq.hpp"

namespace soundstream {

// Past inputs a causal layer needs before the current chunk. Causal convs
// keep (K-1)*dilation - (stride-1) samples, transposed convs
// ceil(K/stride)-1 frames.
struct LayerHistory {
  int channels = 0;
  int length = 0;
  std::vector<float> values;  // [channels x length], oldest first
};

enum class BenchMode { Encode, Decode, Both };

struct RtfReport {
  double audio_seconds = 0.0;
  double wall_seconds = 0.0;  // median over runs
  double rtf = 0.0;
  double encode_seconds = 0.0;  // stage breakdown of the median run
  double quantize_seconds = 0.0;
  double decode_seconds = 0.0;
  int runs = 0;
  BenchMode mode = BenchMode::Both;

  std::string to_key_value() const;
  std::string to_text() const;
};

class StreamingState;

// Encodes one chunk of exactly hop() samples into a [1 x n_q] index row.
IndexMatrix stream_encode(StreamingState& state, const CodecModel& model, std::span<const float> chunk, int n_q,
                          bool denoise = false);
// Decodes one index row (any n_q in [1, N_q]) into hop() samples.
std::vector<float> stream_decode(StreamingState& state, const CodecModel& model, const IndexMatrix& frame,
                                 bool denoise = false);

// Frame-by-frame streaming over `seconds` of synthetic audio on the calling
// thread. One warm-up run is discarded; the median of `runs` is reported.
RtfReport rtf_benchmark(const CodecModel& model, double seconds, BenchMode mode, int runs = 10, int n_q = -1);

// Encoder and decoder state of one stream. Chunks are exactly one frame
// (hop() samples on the encoder side, one index row on the decoder side).
class StreamingState {
 public:
  explicit StreamingState(const CodecModel& model);

  void reset();
  std::int64_t frames_encoded() const { return frames_encoded_; }
  std::int64_t frames_decoded() const { return frames_decoded_; }
  // Total floats held across all layer buffers; independent of stream length.
  std::size_t state_size() const;

 private:
  friend IndexMatrix stream_encode(StreamingState&, const CodecModel&, std::span<const float>, int, bool);
  friend std::vector<float> stream_decode(StreamingState&, const CodecModel&, const IndexMatrix&, bool);
  friend RtfReport rtf_benchmark(const CodecModel&, double, BenchMode, int, int);

  const CodecModel* model_;
  std::vector<LayerHistory> encoder_;
  std::vector<LayerHistory> decoder_;
  std::int64_t frames_encoded_ = 0;
  std::int64_t frames_decoded_ = 0;
};

// Collects arbitrary-size input into hop()-sized chunks.
class FrameAccumulator {
 public:
  explicit FrameAccumulator(int frame_size);
  std::vector<std::vector<float>> push(std::span<const float> samples);
  std::size_t pending() const { return buffer_.size(); }
  // Zero-pads and returns the partial chunk, if any.
  std::vector<std::vector<float>> flush();

 private:
  int frame_size_;
  std::vector<float> buffer_;
};

}  // namespace soundstream
