#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaegan/tensor.hpp"
#include "vaegan/training.hpp"

namespace vaegan {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Generic container: "VGCP", u32 version, header lines, tensor table, CRC32.
/// All integers little-endian.
struct CheckpointFile {
  std::map<std::string, std::string> header;
  std::map<std::string, Tensor> tensors;

  friend bool operator==(const CheckpointFile&, const CheckpointFile&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
/// Throws CheckpointError on bad magic, version mismatch, truncation or
/// checksum failure.
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames it into place.
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

/// Header kind of a training checkpoint; "gan" checkpoints hold no encoder.
std::string checkpoint_kind(const TrainingState& state);

CheckpointFile to_checkpoint(const TrainingState& state);
/// Rebuilds the full state; every expected tensor must be present with its
/// configured shape and no others may appear.
TrainingState from_checkpoint(const CheckpointFile& file);

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_checkpoint(const std::filesystem::path& path);

}  // namespace vaegan
