#include "soundstream/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "soundstream/bitstream.hpp"

namespace soundstream {

namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put(std::vector<std::uint8_t>& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

float pcm_to_float(std::int16_t v) { return static_cast<float>(v) / 32767.0f; }

std::int16_t float_to_pcm(float x) {
  if (std::isnan(x)) return 0;
  const float c = std::clamp(x, -1.0f, 1.0f);
  return static_cast<std::int16_t>(std::round(c * 32767.0f));
}

WavFile parse_wav(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw WavError("not a RIFF/WAVE file");
  }
  WavFile wav;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint8_t* chunk = b.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > b.size()) throw WavError("truncated fmt chunk");
      const std::uint16_t format = le16(b.data() + body);
      wav.channels = le16(b.data() + body + 2);
      wav.sample_rate = static_cast<int>(le32(b.data() + body + 4));
      wav.bits_per_sample = le16(b.data() + body + 14);
      const bool extensible = format == 0xfffe && size >= 40 && le16(b.data() + body + 24) == 1;
      if (format != 1 && !extensible) throw WavError("unsupported WAV encoding (only PCM is accepted)");
      if (wav.channels != 1) {
        throw WavError("expected mono audio, got " + std::to_string(wav.channels) + " channels");
      }
      if (wav.bits_per_sample != 16) {
        throw WavError("expected 16-bit PCM, got " + std::to_string(wav.bits_per_sample) + " bits");
      }
      if (wav.sample_rate <= 0) throw WavError("invalid sample rate");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw WavError("data chunk before fmt chunk");
      if (body + size > b.size()) throw WavError("truncated data chunk");
      const std::size_t n = size / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        wav.samples[i] = pcm_to_float(static_cast<std::int16_t>(le16(b.data() + body + 2 * i)));
      }
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw WavError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put(out, 36 + data_bytes, 4);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put(out, 16, 4);
  put(out, 1, 2);  // PCM
  put(out, 1, 2);  // mono
  put(out, static_cast<std::uint32_t>(sample_rate), 4);
  put(out, static_cast<std::uint32_t>(sample_rate) * 2, 4);
  put(out, 2, 2);
  put(out, 16, 2);
  put_tag(out, "data");
  put(out, data_bytes, 4);
  for (float x : samples) put(out, static_cast<std::uint16_t>(float_to_pcm(x)), 2);
  return out;
}

WavFile read_wav(const std::string& path) {
  try {
    return parse_wav(read_file(path));
  } catch (const WavError& e) {
    throw WavError(path + ": " + e.what());
  }
}

void write_wav(const std::string& path, std::span<const float> samples, int sample_rate) {
  write_file(path, encode_wav(samples, sample_rate));
}

}  // namespace soundstream
