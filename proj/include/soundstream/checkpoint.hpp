#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "soundstream/discriminator.hpp"
#include "soundstream/model.hpp"

namespace soundstream {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  CodecModel model;
  std::optional<Discriminators> discriminators;
};

std::vector<std::uint8_t> serialize_checkpoint(const CodecModel& model, const Discriminators* disc = nullptr);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const CodecModel& model, const std::string& path, const Discriminators* disc = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// Copies weights and codebooks from a checkpoint into an existing model.
// Every tensor must match the model's name and shape.
void load_weights(CodecModel& model, const std::string& path);
void copy_weights(const CodecModel& from, CodecModel& to);

}  // namespace soundstream
