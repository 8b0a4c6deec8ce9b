#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "soundstream/bitstream.hpp"

namespace ss = soundstream;

namespace {

using Bytes = std::vector<std::uint8_t>;

ss::ModelConfig config(int n_q_max, int codebook, int fs = 24000, std::vector<int> strides = {2, 4, 5, 8},
                       int dim = 128) {
  ss::ModelConfig c;
  c.sample_rate = fs;
  c.strides = std::move(strides);
  c.embedding_dim = dim;
  c.num_quantizers = n_q_max;
  c.codebook_size = codebook;
  return c;
}

ss::IndexMatrix matrix(const std::vector<std::vector<int>>& rows, int n_q) {
  ss::IndexMatrix m(static_cast<std::int64_t>(rows.size()), n_q);
  for (std::size_t f = 0; f < rows.size(); ++f)
    for (int q = 0; q < n_q; ++q) m.at(static_cast<std::int64_t>(f), q) = rows[f][q];
  return m;
}

ss::IndexMatrix random_matrix(std::int64_t frames, int n_q, int codebook, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, codebook - 1);
  ss::IndexMatrix m(frames, n_q);
  for (std::int64_t f = 0; f < frames; ++f)
    for (int q = 0; q < n_q; ++q) m.at(f, q) = u(rng);
  return m;
}

// Reference bit writer: one character per bit, then grouped into bytes.
Bytes reference_payload(const ss::IndexMatrix& m, int bits) {
  std::string s;
  for (std::int64_t f = 0; f < m.frames; ++f)
    for (int q = 0; q < m.num_layers; ++q)
      for (int b = bits - 1; b >= 0; --b) s += ((m.at(f, q) >> b) & 1) ? '1' : '0';
  while (s.size() % 8) s += '0';
  Bytes out;
  for (std::size_t i = 0; i < s.size(); i += 8) out.push_back(static_cast<std::uint8_t>(std::stoi(s.substr(i, 8), nullptr, 2)));
  return out;
}

Bytes read_golden(const std::string& name) { return ss::read_file(std::string(SOUNDSTREAM_TEST_DATA) + "/" + name); }

template <class F>
void expect_bitstream_error(F&& f, const std::string& fragment) {
  try {
    f();
    ADD_FAILURE() << "no error, expected one containing '" << fragment << "'";
  } catch (const ss::BitstreamError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Pack, OneSecondAtSixKbps) {
  const auto c = config(8, 1024);
  std::mt19937_64 rng(3);
  const auto s = ss::pack(random_matrix(75, 8, 1024, rng), c);
  EXPECT_EQ(s.payload.size(), 750u);
  EXPECT_EQ(s.header.byte_size(), 23u);
  EXPECT_EQ(s.to_bytes().size(), 23u + 750u);
}

TEST(Pack, ZeroFramesIsHeaderOnly) {
  const auto s = ss::pack(ss::IndexMatrix(0, 3), config(8, 1024));
  EXPECT_TRUE(s.payload.empty());
  const auto bytes = s.to_bytes();
  EXPECT_EQ(bytes.size(), s.header.byte_size());
  const auto back = ss::EncodedStream::from_bytes(bytes);
  EXPECT_EQ(back.header.frame_count, 0u);
  EXPECT_EQ(ss::unpack(back).frames, 0);
}

TEST(Pack, SingleBitIsMostSignificant) {
  const auto s = ss::pack(matrix({{1}}, 1), config(1, 2));
  ASSERT_EQ(s.payload.size(), 1u);
  EXPECT_EQ(s.payload[0], 0x80);
}

TEST(Pack, MatchesReferenceBitWriter) {
  std::mt19937_64 rng(11);
  for (int codebook : {2, 4, 32, 1024, 65536}) {
    const int bits = static_cast<int>(std::log2(codebook));
    const auto m = random_matrix(7, 3, codebook, rng);
    EXPECT_EQ(ss::pack(m, config(3, codebook)).payload, reference_payload(m, bits)) << codebook;
  }
}

TEST(Pack, SizeFormula) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int codebook = 1 << std::uniform_int_distribution<int>(1, 12)(rng);
    const int n_q = std::uniform_int_distribution<int>(1, 8)(rng);
    const std::int64_t frames = std::uniform_int_distribution<int>(0, 40)(rng);
    const auto s = ss::pack(random_matrix(frames, n_q, codebook, rng), config(8, codebook));
    const auto bits = static_cast<std::uint64_t>(frames) * n_q * static_cast<std::uint64_t>(std::log2(codebook));
    EXPECT_EQ(s.to_bytes().size(), s.header.byte_size() + (bits + 7) / 8);
  }
}

TEST(Pack, RandomRoundTrips) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int codebook = 1 << std::uniform_int_distribution<int>(1, 16)(rng);
    const int n_q_max = std::uniform_int_distribution<int>(1, 16)(rng);
    const int n_q = std::uniform_int_distribution<int>(1, n_q_max)(rng);
    const std::int64_t frames = std::uniform_int_distribution<int>(0, 100)(rng);
    const auto c = config(n_q_max, codebook);
    const auto m = random_matrix(frames, n_q, codebook, rng);
    const auto bytes = ss::pack(m, c).to_bytes();
    const auto back = ss::EncodedStream::from_bytes(bytes);
    EXPECT_EQ(ss::unpack(back), m);
    EXPECT_EQ(back.to_bytes(), bytes);
    EXPECT_NO_THROW(ss::check_compatible(back.header, c));
  }
}

TEST(Pack, ExhaustiveSmallCases) {
  // Every matrix with N <= 4, S <= 3, n_q <= 2.
  int checked = 0;
  for (int codebook : {2, 4}) {
    for (int n_q = 1; n_q <= 2; ++n_q) {
      for (int frames = 0; frames <= 3; ++frames) {
        const int cells = frames * n_q;
        int total = 1;
        for (int i = 0; i < cells; ++i) total *= codebook;
        for (int code = 0; code < total; ++code) {
          ss::IndexMatrix m(frames, n_q);
          int rest = code;
          for (int i = 0; i < cells; ++i, rest /= codebook) m.data[static_cast<std::size_t>(i)] = rest % codebook;
          const auto s = ss::pack(m, config(2, codebook));
          ASSERT_EQ(ss::unpack(ss::EncodedStream::from_bytes(s.to_bytes())), m);
          ++checked;
        }
      }
    }
  }
  EXPECT_EQ(checked, (1 + 2 + 4 + 8) + (1 + 4 + 16 + 64) + (1 + 4 + 16 + 64) + (1 + 16 + 256 + 4096));
}

TEST(Pack, RejectsOverflowAndBadLayerCount) {
  EXPECT_THROW(ss::pack(matrix({{4}}, 1), config(1, 4)), std::invalid_argument);
  EXPECT_THROW(ss::pack(matrix({{-1}}, 1), config(1, 4)), std::invalid_argument);
  EXPECT_THROW(ss::pack(ss::IndexMatrix(2, 9), config(8, 1024)), std::invalid_argument);
}

TEST(Unpack, TruncationByOneByte) {
  std::mt19937_64 rng(1);
  auto bytes = ss::pack(random_matrix(10, 4, 1024, rng), config(8, 1024)).to_bytes();
  bytes.pop_back();
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(bytes); }, "truncated");
}

TEST(Unpack, TruncatedHeader) {
  auto bytes = ss::pack(ss::IndexMatrix(0, 1), config(8, 1024)).to_bytes();
  for (std::size_t n = 4; n < bytes.size(); ++n) {
    const std::span<const std::uint8_t> head(bytes.data(), n);
    expect_bitstream_error([&] { ss::EncodedStream::from_bytes(head); }, "truncated");
  }
}

TEST(Unpack, UnsupportedVersion) {
  auto bytes = ss::pack(matrix({{3}}, 1), config(8, 1024)).to_bytes();
  bytes[4] = 99;
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(bytes); }, "unsupported version 99");
}

TEST(Unpack, BadMagic) {
  auto bytes = ss::pack(matrix({{3}}, 1), config(8, 1024)).to_bytes();
  bytes[0] = 'X';
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(bytes); }, "bad magic");
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(Bytes{'S', 'S'}); }, "bad magic");
}

TEST(Unpack, TrailingBytes) {
  auto bytes = ss::pack(matrix({{3}}, 1), config(8, 1024)).to_bytes();
  bytes.push_back(0);
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(bytes); }, "trailing");
}

TEST(Unpack, HeaderInvariants) {
  auto bytes = ss::pack(matrix({{3}}, 1), config(8, 1024)).to_bytes();
  auto zero_nq = bytes;
  zero_nq[18] = 0;  // n_q_used
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(zero_nq); }, "n_q_used");
  auto too_many = bytes;
  too_many[18] = 9;
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(too_many); }, "n_q_used");
  auto wide = bytes;
  wide[17] = 17;  // bits_per_index
  expect_bitstream_error([&] { ss::EncodedStream::from_bytes(wide); }, "bits per index");
}

TEST(Header, CompatibilityWithModel) {
  const auto c = config(8, 1024);
  const auto h = ss::make_header(c, 4, 10);
  EXPECT_NO_THROW(ss::check_compatible(h, c));
  EXPECT_THROW(ss::check_compatible(h, config(8, 1024, 16000)), ss::BitstreamError);
  EXPECT_THROW(ss::check_compatible(h, config(8, 512)), ss::BitstreamError);
  EXPECT_THROW(ss::check_compatible(h, config(8, 1024, 24000, {4, 4, 5, 8})), ss::BitstreamError);
  EXPECT_THROW(ss::check_compatible(h, config(16, 1024)), ss::BitstreamError);
  EXPECT_THROW(ss::check_compatible(h, config(8, 1024, 24000, {2, 4, 5, 8}, 64)), ss::BitstreamError);
}

TEST(Rate, NominalBitrate) {
  EXPECT_DOUBLE_EQ(ss::nominal_bitrate(config(8, 1024), 8), 6000.0);
  EXPECT_DOUBLE_EQ(ss::nominal_bitrate(config(8, 1024), 4), 3000.0);
  EXPECT_THROW(ss::nominal_bitrate(config(8, 1024), 0), std::invalid_argument);
  EXPECT_THROW(ss::nominal_bitrate(config(8, 1024), 9), std::invalid_argument);
}

TEST(Rate, DepthCodebookTradeOffIsRateNeutral) {
  for (auto [n_q, codebook] : {std::pair{8, 1024}, std::pair{16, 32}, std::pair{80, 2}}) {
    const auto c = config(n_q, codebook);
    EXPECT_DOUBLE_EQ(ss::nominal_bitrate(c, n_q), 6000.0) << n_q;
    EXPECT_EQ(c.bits_per_frame(), 80) << n_q;
    std::mt19937_64 rng(static_cast<std::uint64_t>(n_q));
    const auto m = random_matrix(75, n_q, codebook, rng);
    const auto s = ss::pack(m, c);
    EXPECT_EQ(s.payload.size(), 750u);
    EXPECT_EQ(ss::unpack(ss::EncodedStream::from_bytes(s.to_bytes())), m);
  }
}

TEST(Entropy, ClosedForms) {
  EXPECT_NEAR(ss::empirical_entropy({{1, 3}}), 0.8112781244591328, 1e-12);
  EXPECT_DOUBLE_EQ(ss::empirical_entropy({{0, 7, 0, 0}, {5, 0, 0, 0}}), 0.0);
  // Uniform usage of every codeword in every layer.
  ss::SymbolCounts uniform(8, std::vector<std::uint64_t>(1024, 3));
  EXPECT_NEAR(ss::empirical_entropy(uniform), 80.0, 1e-9);
  EXPECT_THROW(ss::empirical_entropy({{0, 0}}), std::invalid_argument);
}

TEST(Entropy, CrossEntropyClosedForms) {
  EXPECT_DOUBLE_EQ(ss::cross_entropy_rate({{1.0, 0.0}}, {{0.5, 0.5}}), 1.0);
  const ss::SymbolDistribution r{{0.25, 0.75}, {0.1, 0.2, 0.3, 0.4}};
  EXPECT_NEAR(ss::cross_entropy_rate(r, r), ss::entropy(r), 1e-12);
  EXPECT_THROW(ss::cross_entropy_rate({{0.5, 0.5}}, {{1.0, 0.0}}), std::domain_error);
  EXPECT_THROW(ss::cross_entropy_rate({{1.0}}, {{0.5, 0.5}}), std::invalid_argument);
}

TEST(Entropy, GibbsInequality) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_dist = [&](int layers, int n) {
    ss::SymbolDistribution d(static_cast<std::size_t>(layers));
    for (auto& row : d) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) row.push_back(u(rng) + 1e-6), total += row.back();
      for (auto& v : row) v /= total;
    }
    return d;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = random_dist(3, 16);
    const auto p = random_dist(3, 16);
    EXPECT_GE(ss::cross_entropy_rate(r, p), ss::entropy(r) - 1e-9);
  }
}

TEST(Entropy, LaplaceSmoothing) {
  const auto p = ss::to_distribution({{3, 0, 1}}, 1.0);
  ASSERT_EQ(p[0].size(), 3u);
  EXPECT_DOUBLE_EQ(p[0][0], 4.0 / 7.0);
  EXPECT_DOUBLE_EQ(p[0][1], 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(p[0][2], 2.0 / 7.0);
  // Symbols unseen in the estimate no longer break the cross-entropy.
  const auto r = ss::to_distribution({{0, 5, 0}});
  EXPECT_NEAR(ss::cross_entropy_rate(r, p), -std::log2(1.0 / 7.0), 1e-12);
}

TEST(Entropy, BoundedByNominalBitsPerFrame) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int codebook = 1 << std::uniform_int_distribution<int>(1, 10)(rng);
    const int n_q = std::uniform_int_distribution<int>(1, 8)(rng);
    const auto m = random_matrix(std::uniform_int_distribution<int>(1, 300)(rng), n_q, codebook, rng);
    const auto counts = ss::count_symbols(m, codebook);
    EXPECT_LE(ss::empirical_entropy(counts), n_q * std::log2(codebook) + 1e-9);
  }
}

TEST(Entropy, CountSymbols) {
  const auto counts = ss::count_symbols(matrix({{0, 3}, {0, 1}, {2, 3}}, 2), 4);
  EXPECT_EQ(counts, (ss::SymbolCounts{{2, 0, 1, 0}, {0, 1, 0, 2}}));
  EXPECT_THROW(ss::count_symbols(matrix({{4}}, 1), 4), std::out_of_range);
}

struct Golden {
  const char* file;
  ss::ModelConfig config;
  ss::IndexMatrix indices;
  Bytes bytes;
};

std::vector<Golden> goldens() {
  return {
      {"rate6000_nq2.ssbc", config(8, 1024), matrix({{1, 1023}, {512, 0}, {5, 1000}}, 2),
       {0x53, 0x53, 0x42, 0x43, 0x01, 0xc0, 0x5d, 0x00, 0x00, 0x04, 0x02, 0x04, 0x05, 0x08, 0x80, 0x00,
        0x08, 0x0a, 0x02, 0x03, 0x00, 0x00, 0x00, 0x00, 0x7f, 0xf8, 0x00, 0x00, 0x01, 0x7e, 0x80}},
      {"binary_80layer.ssbc", config(80, 2),
       matrix({{1, 0, 1, 1, 0, 0, 1, 0, 1, 1}, {0, 1, 1, 1, 1, 0, 0, 0, 0, 1}}, 10),
       {0x53, 0x53, 0x42, 0x43, 0x01, 0xc0, 0x5d, 0x00, 0x00, 0x04, 0x02, 0x04, 0x05,
        0x08, 0x80, 0x00, 0x50, 0x01, 0x0a, 0x02, 0x00, 0x00, 0x00, 0xb2, 0xde, 0x10}},
      {"empty_16k.ssbc", config(16, 32, 16000, {4, 4, 5, 8}, 64), ss::IndexMatrix(0, 16),
       {0x53, 0x53, 0x42, 0x43, 0x01, 0x80, 0x3e, 0x00, 0x00, 0x04, 0x04, 0x04,
        0x05, 0x08, 0x40, 0x00, 0x10, 0x05, 0x10, 0x00, 0x00, 0x00, 0x00}},
  };
}

TEST(Golden, FilesMatchDocumentedBytes) {
  for (const auto& g : goldens()) EXPECT_EQ(read_golden(g.file), g.bytes) << g.file;
}

TEST(Golden, PackReproducesFiles) {
  for (const auto& g : goldens()) EXPECT_EQ(ss::pack(g.indices, g.config).to_bytes(), g.bytes) << g.file;
}

TEST(Golden, RoundTripBitwise) {
  for (const auto& g : goldens()) {
    const auto bytes = read_golden(g.file);
    const auto s = ss::EncodedStream::from_bytes(bytes);
    EXPECT_EQ(ss::unpack(s), g.indices) << g.file;
    EXPECT_EQ(ss::pack(ss::unpack(s), g.config).to_bytes(), bytes) << g.file;
    EXPECT_NO_THROW(ss::check_compatible(s.header, g.config)) << g.file;
  }
}
