#include "soundstream/bitstream.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace soundstream {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw BitstreamError("bitstream truncated: header ends early");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

int StreamHeader::hop() const {
  int m = 1;
  for (auto s : strides) m *= s;
  return m;
}

std::size_t StreamHeader::payload_size() const {
  const std::uint64_t bits = static_cast<std::uint64_t>(frame_count) * n_q_used * bits_per_index;
  return static_cast<std::size_t>((bits + 7) / 8);
}

void StreamHeader::validate() const {
  if (sample_rate == 0) throw BitstreamError("bitstream: sample rate is zero");
  if (strides.empty()) throw BitstreamError("bitstream: no strides");
  for (auto s : strides)
    if (s == 0) throw BitstreamError("bitstream: zero stride");
  if (embedding_dim == 0) throw BitstreamError("bitstream: embedding dimension is zero");
  if (bits_per_index < 1 || bits_per_index > 16) {
    throw BitstreamError("bitstream: bits per index " + std::to_string(bits_per_index) + " outside [1, 16]");
  }
  if (n_q_used < 1 || n_q_used > num_quantizers) {
    throw BitstreamError("bitstream: n_q_used " + std::to_string(n_q_used) + " outside [1, " +
                         std::to_string(num_quantizers) + "]");
  }
}

std::vector<std::uint8_t> EncodedStream::to_bytes() const {
  header.validate();
  if (payload.size() != header.payload_size()) throw BitstreamError("bitstream: payload size does not match header");
  std::vector<std::uint8_t> out(std::begin(kStreamMagic), std::end(kStreamMagic));
  out.push_back(kStreamVersion);
  put_u32(out, header.sample_rate);
  out.push_back(static_cast<std::uint8_t>(header.strides.size()));
  out.insert(out.end(), header.strides.begin(), header.strides.end());
  put_u16(out, header.embedding_dim);
  out.push_back(header.num_quantizers);
  out.push_back(header.bits_per_index);
  out.push_back(header.n_q_used);
  put_u32(out, header.frame_count);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

EncodedStream EncodedStream::from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kStreamMagic, 4) != 0) {
    throw BitstreamError("bitstream: bad magic (not an SSBC stream)");
  }
  Reader r(bytes.subspan(4));
  const std::uint8_t version = r.u8();
  if (version != kStreamVersion) {
    throw BitstreamError("bitstream: unsupported version " + std::to_string(version));
  }
  EncodedStream s;
  s.header.sample_rate = r.u32();
  const std::uint8_t count = r.u8();
  for (int i = 0; i < count; ++i) s.header.strides.push_back(r.u8());
  s.header.embedding_dim = r.u16();
  s.header.num_quantizers = r.u8();
  s.header.bits_per_index = r.u8();
  s.header.n_q_used = r.u8();
  s.header.frame_count = r.u32();
  s.header.validate();
  const std::size_t expected = s.header.payload_size();
  if (r.remaining() < expected) {
    throw BitstreamError("bitstream truncated: expected " + std::to_string(expected) + " payload bytes, found " +
                         std::to_string(r.remaining()));
  }
  if (r.remaining() > expected) {
    throw BitstreamError("bitstream: " + std::to_string(r.remaining() - expected) + " unexpected trailing bytes");
  }
  s.payload.assign(r.rest().begin(), r.rest().end());
  return s;
}

StreamHeader make_header(const ModelConfig& config, int n_q, std::int64_t frames) {
  config.validate();
  if (n_q < 1 || n_q > config.num_quantizers) {
    throw std::invalid_argument("n_q=" + std::to_string(n_q) + " outside [1, " + std::to_string(config.num_quantizers) +
                                "]");
  }
  if (frames < 0 || frames > 0xffffffffLL) throw std::invalid_argument("frame count out of range");
  StreamHeader h;
  h.sample_rate = static_cast<std::uint32_t>(config.sample_rate);
  for (int s : config.strides) {
    if (s > 255) throw std::invalid_argument("stride too large for the stream header");
    h.strides.push_back(static_cast<std::uint8_t>(s));
  }
  if (config.strides.size() > 255 || config.embedding_dim > 0xffff || config.num_quantizers > 255) {
    throw std::invalid_argument("model config does not fit the stream header");
  }
  h.embedding_dim = static_cast<std::uint16_t>(config.embedding_dim);
  h.num_quantizers = static_cast<std::uint8_t>(config.num_quantizers);
  h.bits_per_index = static_cast<std::uint8_t>(std::countr_zero(static_cast<unsigned>(config.codebook_size)));
  h.n_q_used = static_cast<std::uint8_t>(n_q);
  h.frame_count = static_cast<std::uint32_t>(frames);
  return h;
}

void check_compatible(const StreamHeader& h, const ModelConfig& config) {
  const StreamHeader expected = make_header(config, h.n_q_used >= 1 && h.n_q_used <= config.num_quantizers
                                                         ? h.n_q_used
                                                         : 1,
                                            h.frame_count);
  auto fail = [](const std::string& what) { throw BitstreamError("bitstream does not match the model: " + what); };
  if (h.sample_rate != expected.sample_rate) fail("sample rate " + std::to_string(h.sample_rate));
  if (h.strides != expected.strides) fail("strides");
  if (h.embedding_dim != expected.embedding_dim) fail("embedding dimension");
  if (h.num_quantizers != expected.num_quantizers) fail("quantizer count");
  if (h.bits_per_index != expected.bits_per_index) fail("codebook size");
  if (h.n_q_used < 1 || h.n_q_used > expected.num_quantizers) fail("n_q_used");
}

EncodedStream pack(const IndexMatrix& indices, const ModelConfig& config) {
  EncodedStream s;
  s.header = make_header(config, indices.num_layers, indices.frames);
  const int bits = s.header.bits_per_index;
  s.payload.assign(s.header.payload_size(), 0);
  std::uint64_t pos = 0;
  for (std::int64_t f = 0; f < indices.frames; ++f) {
    for (int q = 0; q < indices.num_layers; ++q) {
      const std::int32_t v = indices.at(f, q);
      if (v < 0 || v >= config.codebook_size) {
        throw std::invalid_argument("pack: index " + std::to_string(v) + " does not fit in " + std::to_string(bits) +
                                    " bits");
      }
      for (int b = bits - 1; b >= 0; --b, ++pos) {
        if ((v >> b) & 1) s.payload[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
      }
    }
  }
  return s;
}

IndexMatrix unpack(const EncodedStream& stream) {
  const StreamHeader& h = stream.header;
  h.validate();
  if (stream.payload.size() != h.payload_size()) throw BitstreamError("bitstream: payload size does not match header");
  IndexMatrix out(h.frame_count, h.n_q_used);
  std::uint64_t pos = 0;
  for (std::int64_t f = 0; f < out.frames; ++f) {
    for (int q = 0; q < out.num_layers; ++q) {
      std::int32_t v = 0;
      for (int b = 0; b < h.bits_per_index; ++b, ++pos) {
        v = (v << 1) | ((stream.payload[pos / 8] >> (7 - pos % 8)) & 1);
      }
      out.at(f, q) = v;
    }
  }
  return out;
}

double nominal_bitrate(const ModelConfig& config, int n_q) {
  config.validate();
  if (n_q < 1 || n_q > config.num_quantizers) {
    throw std::invalid_argument("nominal_bitrate: n_q=" + std::to_string(n_q) + " outside [1, " +
                                std::to_string(config.num_quantizers) + "]");
  }
  const double frame_rate = static_cast<double>(config.sample_rate) / config.hop();
  return frame_rate * n_q * std::countr_zero(static_cast<unsigned>(config.codebook_size));
}

SymbolCounts count_symbols(const IndexMatrix& indices, int codebook_size) {
  SymbolCounts counts(static_cast<std::size_t>(indices.num_layers),
                      std::vector<std::uint64_t>(static_cast<std::size_t>(codebook_size), 0));
  for (std::int64_t f = 0; f < indices.frames; ++f) {
    for (int q = 0; q < indices.num_layers; ++q) {
      const auto v = indices.at(f, q);
      if (v < 0 || v >= codebook_size) throw std::out_of_range("count_symbols: index out of range");
      ++counts[q][v];
    }
  }
  return counts;
}

SymbolDistribution to_distribution(const SymbolCounts& counts, double pseudo_count) {
  if (pseudo_count < 0.0) throw std::invalid_argument("to_distribution: negative pseudo count");
  SymbolDistribution p;
  for (const auto& layer : counts) {
    double total = 0.0;
    for (auto c : layer) total += static_cast<double>(c) + pseudo_count;
    if (total <= 0.0) throw std::invalid_argument("to_distribution: layer has no counts");
    std::vector<double> row;
    for (auto c : layer) row.push_back((static_cast<double>(c) + pseudo_count) / total);
    p.push_back(std::move(row));
  }
  return p;
}

double entropy(const SymbolDistribution& p) {
  double h = 0.0;
  for (const auto& layer : p)
    for (double v : layer)
      if (v > 0.0) h -= v * std::log2(v);
  return h;
}

double empirical_entropy(const SymbolCounts& counts) { return entropy(to_distribution(counts)); }

double cross_entropy_rate(const SymbolDistribution& r, const SymbolDistribution& p) {
  if (r.size() != p.size()) throw std::invalid_argument("cross_entropy_rate: layer count mismatch");
  double h = 0.0;
  for (std::size_t q = 0; q < r.size(); ++q) {
    if (r[q].size() != p[q].size()) throw std::invalid_argument("cross_entropy_rate: alphabet size mismatch");
    for (std::size_t i = 0; i < r[q].size(); ++i) {
      if (r[q][i] <= 0.0) continue;
      if (p[q][i] <= 0.0) {
        throw std::domain_error("cross_entropy_rate: symbol " + std::to_string(i) + " of layer " + std::to_string(q) +
                                " has zero model probability");
      }
      h -= r[q][i] * std::log2(p[q][i]);
    }
  }
  return h;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace soundstream
