#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "soundstream/model.hpp"
#include "soundstream/rvq.hpp"

namespace soundstream {

class BitstreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kStreamMagic[4] = {'S', 'S', 'B', 'C'};
inline constexpr std::uint8_t kStreamVersion = 1;

struct StreamHeader {
  std::uint32_t sample_rate = 0;
  std::vector<std::uint8_t> strides;
  std::uint16_t embedding_dim = 0;
  std::uint8_t num_quantizers = 0;
  std::uint8_t bits_per_index = 0;
  std::uint8_t n_q_used = 0;
  std::uint32_t frame_count = 0;

  int hop() const;
  std::size_t byte_size() const { return 4 + 1 + 4 + 1 + strides.size() + 2 + 1 + 1 + 1 + 4; }
  std::size_t payload_size() const;
  void validate() const;  // throws BitstreamError
  bool operator==(const StreamHeader&) const = default;
};

struct EncodedStream {
  StreamHeader header;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> to_bytes() const;
  static EncodedStream from_bytes(std::span<const std::uint8_t> bytes);
};

StreamHeader make_header(const ModelConfig& config, int n_q, std::int64_t frames);
// Checks that a stream can be decoded by a model of this configuration.
void check_compatible(const StreamHeader& header, const ModelConfig& config);

// Indices are written frame by frame, layer by layer, each as
// bits_per_index bits, most significant bit first.
EncodedStream pack(const IndexMatrix& indices, const ModelConfig& config);
IndexMatrix unpack(const EncodedStream& stream);

double nominal_bitrate(const ModelConfig& config, int n_q);

// counts[q][i]: occurrences of symbol i in layer q.
using SymbolCounts = std::vector<std::vector<std::uint64_t>>;
// p[q][i]: probability of symbol i in layer q.
using SymbolDistribution = std::vector<std::vector<double>>;

SymbolCounts count_symbols(const IndexMatrix& indices, int codebook_size);
// Laplace smoothing adds `pseudo_count` to every symbol before normalising.
SymbolDistribution to_distribution(const SymbolCounts& counts, double pseudo_count = 0.0);
// Sum over layers of the entropy in bits of each layer's symbol frequencies.
double empirical_entropy(const SymbolCounts& counts);
double entropy(const SymbolDistribution& p);
// -sum_q sum_i r_i log2 p_i, bits per frame.
double cross_entropy_rate(const SymbolDistribution& r, const SymbolDistribution& p);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace soundstream
