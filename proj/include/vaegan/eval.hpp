#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vaegan/checkpoint.hpp"
#include "vaegan/data.hpp"
#include "vaegan/layers.hpp"
#include "vaegan/models.hpp"
#include "vaegan/rng.hpp"

namespace vaegan {

struct RegressorConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double rms_rho = 0.9;
  double rms_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Width scale of the encoder-trunk architecture.
  double scale = 0.125;

  void validate() const;
};

/// Encoder trunk followed by an A-way dense layer and a sigmoid.
class Regressor {
 public:
  Regressor() = default;
  Regressor(std::size_t resolution, std::size_t channels, double scale, std::vector<std::string> attribute_names,
            std::uint64_t init_seed);

  std::size_t attr_count() const { return names_.size(); }
  const std::vector<std::string>& attribute_names() const { return names_; }
  const ModelConfig& arch() const { return arch_; }
  Network& network() { return net_; }
  NamedTensors& params() { return params_; }
  const NamedTensors& params() const { return params_; }

  /// Probabilities N x A in eval mode, `chunk` rows at a time.
  Tensor predict(const Tensor& images, std::size_t chunk = 128);

  CheckpointFile to_checkpoint() const;
  static Regressor from_checkpoint(const CheckpointFile& file);

 private:
  ModelConfig arch_;
  std::vector<std::string> names_;
  Network net_;
  NamedTensors params_;
};

/// Elementwise binary cross-entropy, mean over rows, summed over attributes.
Var binary_cross_entropy(Var probs, Var targets);

/// Trains with binary cross-entropy and RMSProp on shuffled mini-batches.
Regressor train_regressor(const AttributedDataset& data, const RegressorConfig& cfg);

/// Fraction of rows whose thresholded prediction matches, per attribute.
std::vector<double> regressor_accuracy(Regressor& reg, const AttributedDataset& data);

struct AttributeScore {
  double cosine_mean = 0.0;
  double cosine_std = 0.0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  std::size_t runs = 0;
  std::size_t samples_per_vector = 0;
  /// Requested rows with an all-zero vector, excluded from the cosine.
  std::size_t excluded_rows = 0;
  std::vector<double> run_cosine;
  std::vector<double> run_mse;
};

/// Images for the requested attribute rows, one per row.
using Generator = std::function<Tensor(const Tensor& attrs, Rng& rng)>;
/// Attribute probabilities for a batch of images.
using Predictor = std::function<Tensor(const Tensor& images)>;

/// Prior samples decoded conditionally in eval mode.
Generator conditional_generator(VaeGan& model);
Predictor regressor_predictor(Regressor& reg);

/// Per run r (seeded with derive_seed(seed, r)) draws samples_per_vector
/// generations for every row. The cosine between requested and predicted
/// attributes is the best over the samples, averaged over rows; the MSE is
/// the per-row sum of squared errors of the first sample, averaged over rows.
AttributeScore score_conditional(const Generator& gen, const Predictor& predict, const Tensor& attrs,
                                 std::size_t samples_per_vector = 10, std::size_t runs = 5, std::uint64_t seed = 0);

struct NamedGenerator {
  std::string name;
  Generator generate;
};

struct ComparisonRow {
  std::string model;
  AttributeScore score;
};

struct ComparisonReport {
  /// Sorted by ascending MSE mean, then descending cosine mean.
  std::vector<ComparisonRow> rows;

  std::string to_csv() const;
  std::string to_text() const;
};

ComparisonReport compare_models(const std::vector<NamedGenerator>& models, const Predictor& predict,
                                const Tensor& attrs, std::size_t samples_per_vector = 10, std::size_t runs = 5,
                                std::uint64_t seed = 0);

}  // namespace vaegan
