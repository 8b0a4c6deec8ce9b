#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace soundstream {

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 16-bit PCM mono only. Samples are v / 32767; the most negative code maps
// slightly below -1 and is clamped to -32767 on write.
struct WavFile {
  int sample_rate = 0;
  int channels = 1;
  int bits_per_sample = 16;
  std::vector<float> samples;
};

float pcm_to_float(std::int16_t v);
// Clamp to [-1, 1], scale by 32767, round half away from zero.
std::int16_t float_to_pcm(float x);

WavFile parse_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate);

WavFile read_wav(const std::string& path);
void write_wav(const std::string& path, std::span<const float> samples, int sample_rate);

}  // namespace soundstream
