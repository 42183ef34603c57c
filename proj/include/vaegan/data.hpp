#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaegan/tensor.hpp"

namespace vaegan {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, test };

/// Images in [-1, 1] with 0/1 attribute rows.
struct AttributedDataset {
  Tensor images;      // N x C x H x W
  Tensor attributes;  // N x A; A may be 0, in which case the tensor is empty
  std::vector<std::string> attribute_names;
  Split split = Split::train;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  std::size_t attr_count() const { return attribute_names.size(); }
  std::optional<std::size_t> attribute_index(const std::string& name) const;

  /// Gathers the given sample indices into a new dataset.
  AttributedDataset subset(const std::vector<std::size_t>& indices) const;
  Tensor image_batch(const std::vector<std::size_t>& indices) const;
  Tensor attribute_batch(const std::vector<std::size_t>& indices) const;

  /// Throws DataError when any invariant fails.
  void validate() const;
};

/// Render rules available to the synthetic generator.
const std::vector<std::string>& synthetic_attribute_catalog();

struct SyntheticSpec {
  std::size_t resolution = 16;
  std::size_t channels = 3;
  std::vector<std::string> attributes{"bright_disk", "vertical_bar", "large_shape"};
  std::size_t count = 200;
  std::uint64_t seed = 1;
  Split split = Split::train;

  void validate() const;
  /// key=value lines; '#' starts a comment.
  static SyntheticSpec parse(const std::string& text);
  std::string to_text() const;
};

/// Shapes on a dark background. Each attribute toggles one render rule with
/// probability 1/2, independently; shape positions are jittered so pixels do
/// not align across samples.
///
/// Channel 0 carries the disk brightness, channel 1 the disk footprint and
/// channel 2 the bars and marks; single-channel images take their mean.
AttributedDataset generate_synthetic(const SyntheticSpec& spec);

/// IDX u8 images (magic 0x00000803, N x H x W) and optional u8 labels
/// (0x00000801, N). Pixels map linearly from [0, 255] to [-1, 1]; labels
/// become one-hot attributes named label_<k>.
AttributedDataset load_idx(const std::filesystem::path& images,
                           const std::optional<std::filesystem::path>& labels = std::nullopt);

/// Inverse of load_idx for single-channel datasets.
void write_idx(const AttributedDataset& data, const std::filesystem::path& images,
               const std::optional<std::filesystem::path>& labels = std::nullopt);

/// Sample indices of each full mini-batch for one epoch. The order is a pure
/// function of (n, batch_size, seed, epoch); the ragged tail is dropped.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch);

inline std::vector<std::vector<std::size_t>> batch_iterator(const AttributedDataset& data,
                                                            std::size_t batch_size, std::uint64_t seed,
                                                            std::uint64_t epoch) {
  return batch_iterator(data.size(), batch_size, seed, epoch);
}

/// Parses "key=value" lines with '#' comments into a map. Later keys win.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace vaegan
