#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "soundstream/wav.hpp"

namespace ss = soundstream;

namespace {

using Bytes = std::vector<std::uint8_t>;

void le(Bytes& b, std::uint32_t v, int n) {
  for (int i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void tag(Bytes& b, const char* t) { b.insert(b.end(), t, t + 4); }

struct Fmt {
  std::uint16_t format = 1;
  std::uint16_t channels = 1;
  std::uint32_t rate = 24000;
  std::uint16_t bits = 16;
  bool extensible = false;
  std::uint16_t sub_format = 1;
};

// Builds a RIFF file; `extra` is inserted as an unknown chunk before "data".
Bytes build(const Fmt& f, const std::vector<std::int16_t>& pcm, const std::string& extra = "") {
  Bytes body;
  tag(body, "WAVE");
  tag(body, "fmt ");
  le(body, f.extensible ? 40 : 16, 4);
  le(body, f.extensible ? 0xfffe : f.format, 2);
  le(body, f.channels, 2);
  le(body, f.rate, 4);
  le(body, f.rate * f.channels * f.bits / 8, 4);
  le(body, f.channels * f.bits / 8, 2);
  le(body, f.bits, 2);
  if (f.extensible) {
    le(body, 22, 2);
    le(body, f.bits, 2);
    le(body, 4, 4);  // channel mask
    le(body, f.sub_format, 2);
    const std::uint8_t guid_tail[14] = {0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80,
                                        0x00, 0x00, 0xaa, 0x00, 0x38, 0x9b, 0x71};
    body.insert(body.end(), guid_tail, guid_tail + 14);
  }
  if (!extra.empty()) {
    tag(body, "LIST");
    le(body, static_cast<std::uint32_t>(extra.size()), 4);
    body.insert(body.end(), extra.begin(), extra.end());
    if (extra.size() % 2) body.push_back(0);
  }
  tag(body, "data");
  le(body, static_cast<std::uint32_t>(pcm.size() * 2), 4);
  for (auto v : pcm) le(body, static_cast<std::uint16_t>(v), 2);
  Bytes out;
  tag(out, "RIFF");
  le(out, static_cast<std::uint32_t>(body.size()), 4);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

template <class F>
std::string wav_error(F&& f) {
  try {
    f();
  } catch (const ss::WavError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(Wav, WriterMatchesReferenceLayout) {
  const std::vector<std::int16_t> pcm{0, 1, -1, 32767, -32767, 1234};
  std::vector<float> x;
  for (auto v : pcm) x.push_back(static_cast<float>(v) / 32767.0f);
  EXPECT_EQ(ss::encode_wav(x, 24000), build({}, pcm));
}

TEST(Wav, EveryCodeRoundTripsExceptMostNegative) {
  std::vector<std::int16_t> pcm;
  for (int v = -32767; v <= 32767; ++v) pcm.push_back(static_cast<std::int16_t>(v));
  const Bytes bytes = build({}, pcm);
  const auto wav = ss::parse_wav(bytes);
  ASSERT_EQ(wav.samples.size(), pcm.size());
  EXPECT_EQ(wav.sample_rate, 24000);
  for (float s : wav.samples) ASSERT_LE(std::abs(s), 1.0f);
  EXPECT_EQ(ss::encode_wav(wav.samples, wav.sample_rate), bytes);

  const auto low = ss::parse_wav(build({}, {-32768}));
  EXPECT_EQ(ss::float_to_pcm(low.samples[0]), -32767);
}

TEST(Wav, FileRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "soundstream_test_wav_roundtrip.wav").string();
  const std::vector<float> x{0.0f, 0.25f, -0.5f, 1.0f, -1.0f};
  ss::write_wav(path, x, 16000);
  const auto wav = ss::read_wav(path);
  EXPECT_EQ(wav.sample_rate, 16000);
  ASSERT_EQ(wav.samples.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(wav.samples[i], x[i], 0.5f / 32767.0f);
  std::filesystem::remove(path);
}

TEST(Wav, ConversionClampsAndRoundsHalfAway) {
  EXPECT_EQ(ss::float_to_pcm(0.0f), 0);
  EXPECT_EQ(ss::float_to_pcm(1.0f), 32767);
  EXPECT_EQ(ss::float_to_pcm(-1.0f), -32767);
  EXPECT_EQ(ss::float_to_pcm(3.0f), 32767);
  EXPECT_EQ(ss::float_to_pcm(-3.0f), -32767);
  EXPECT_EQ(ss::float_to_pcm(std::numeric_limits<float>::infinity()), 32767);
  EXPECT_EQ(ss::float_to_pcm(std::numeric_limits<float>::quiet_NaN()), 0);
  // Find inputs whose scaled value is exactly k + 0.5 in float.
  int found = 0;
  for (int k = 0; k < 2000; ++k) {
    const float target = static_cast<float>(k) + 0.5f;
    float x = target / 32767.0f;
    for (int step = 0; step < 4 && x * 32767.0f != target; ++step)
      x = std::nextafter(x, x * 32767.0f < target ? 1.0f : 0.0f);
    if (x * 32767.0f != target) continue;
    ++found;
    EXPECT_EQ(ss::float_to_pcm(x), k + 1) << k;
    EXPECT_EQ(ss::float_to_pcm(-x), -(k + 1)) << k;
  }
  EXPECT_GT(found, 100);
}

TEST(Wav, SkipsUnknownChunksAndOddPadding) {
  const auto wav = ss::parse_wav(build({}, {7, -7}, "abc"));
  ASSERT_EQ(wav.samples.size(), 2u);
  EXPECT_EQ(ss::float_to_pcm(wav.samples[0]), 7);
  EXPECT_EQ(ss::float_to_pcm(wav.samples[1]), -7);
}

TEST(Wav, AcceptsExtensiblePcm) {
  Fmt f;
  f.extensible = true;
  const auto wav = ss::parse_wav(build(f, {100}));
  ASSERT_EQ(wav.samples.size(), 1u);
  EXPECT_EQ(ss::float_to_pcm(wav.samples[0]), 100);
  f.sub_format = 3;  // float
  EXPECT_NE(wav_error([&] { ss::parse_wav(build(f, {100})); }).find("only PCM"), std::string::npos);
}

TEST(Wav, RejectsStereo) {
  Fmt f;
  f.channels = 2;
  EXPECT_EQ(wav_error([&] { ss::parse_wav(build(f, {1, 2})); }), "expected mono audio, got 2 channels");
}

TEST(Wav, RejectsOtherDepthsAndEncodings) {
  Fmt depth;
  depth.bits = 24;
  EXPECT_EQ(wav_error([&] { ss::parse_wav(build(depth, {})); }), "expected 16-bit PCM, got 24 bits");
  Fmt fl;
  fl.format = 3;
  EXPECT_NE(wav_error([&] { ss::parse_wav(build(fl, {})); }).find("only PCM"), std::string::npos);
}

TEST(Wav, RejectsMalformedFiles) {
  EXPECT_EQ(wav_error([] { ss::parse_wav(Bytes{'R', 'I', 'F', 'F'}); }), "not a RIFF/WAVE file");
  auto truncated = build({}, {1, 2, 3});
  truncated.pop_back();
  EXPECT_EQ(wav_error([&] { ss::parse_wav(truncated); }), "truncated data chunk");
  const Bytes full = build({}, {});
  const Bytes no_data(full.begin(), full.begin() + 36);
  EXPECT_EQ(wav_error([&] { ss::parse_wav(no_data); }), "missing data chunk");
  EXPECT_THROW(ss::read_wav("/nonexistent/x.wav"), std::runtime_error);
}
