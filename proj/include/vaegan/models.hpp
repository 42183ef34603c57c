#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "vaegan/graph.hpp"
#include "vaegan/layers.hpp"
#include "vaegan/tensor.hpp"

namespace vaegan {

struct ModelConfig {
  std::size_t resolution = 64;
  std::size_t channels = 3;
  /// Divides every channel and unit count of the reference architecture.
  double scale = 1.0;
  /// 0 selects 128 * scale.
  std::size_t latent_dim = 0;
  /// Width of the conditioning attribute vector; 0 for unconditional models.
  std::size_t attr_count = 0;

  std::size_t latent() const;
  /// Reference width w scaled by `scale`, at least 1.
  std::size_t width(std::size_t w) const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Encoder trunk: three stride-2 5x5 convs (64, 128, 256) with batch norm and
/// ReLU, then a conditioned 2048-unit dense layer with batch norm and ReLU.
std::vector<LayerSpec> encoder_trunk_layers(const ModelConfig& cfg);
/// Decoder: dense to (R/8)^2 * 256, three stride-2 upsampling convs
/// (256, 128, 32) and a stride-1 5x5 conv to image channels with tanh.
std::vector<LayerSpec> decoder_layers(const ModelConfig& cfg);
/// Discriminator: stride-1 5x5 32 conv with ReLU, three stride-2 convs
/// (128, 256, 256) with batch norm and ReLU, dense 512 with batch norm and
/// ReLU, dense 1 with sigmoid.
std::vector<LayerSpec> discriminator_layers(const ModelConfig& cfg);

/// Index of the activation that follows the third stride-2 conv.
std::size_t third_downsampling_tap(const std::vector<LayerSpec>& layers);

enum class NetworkId { enc, dec, gen, dis };

const char* network_name(NetworkId id);

/// Trainable tensors of the three networks. The generator is not a separate
/// network: NetworkId::gen resolves to the decoder's entries.
class ParameterStore {
 public:
  NamedTensors& network(NetworkId id);
  const NamedTensors& network(NetworkId id) const;

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  NamedTensors enc_, dec_, dis_;
};

struct LatentCode {
  Var mu;
  Var log_var;
  Var z;  // invalid until reparameterize()
};

struct DiscriminatorOutput {
  Var y;          // N x 1, in (0, 1)
  Var feature_l;  // activation at the configured tap layer
};

enum class ConditionSite { latent, top_fc };

/// Encoder, decoder/generator and discriminator with their batch-norm state.
class VaeGan {
 public:
  VaeGan() = default;
  VaeGan(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  Network& enc() { return enc_; }
  Network& dec() { return dec_; }
  Network& dis() { return dis_; }
  const Network& enc() const { return enc_; }
  const Network& dec() const { return dec_; }
  const Network& dis() const { return dis_; }
  Network& network(NetworkId id);
  const Network& network(NetworkId id) const;

  std::size_t feature_tap() const { return tap_; }
  void set_feature_tap(std::size_t layer);

 private:
  ModelConfig cfg_;
  ParameterStore params_;
  Network enc_, dec_, dis_;
  std::size_t tap_ = 0;
};

inline constexpr double kLogVarClamp = 10.0;

/// Posterior parameters from the encoder trunk and two linear heads;
/// log_var is clamped to [-10, 10].
LatentCode encode(VaeGan& model, const BoundParams& enc, Var x, BnMode mode,
                  std::optional<Var> attrs = std::nullopt);
/// z = mu + exp(log_var / 2) * eps.
LatentCode reparameterize(const LatentCode& code, Var eps);
Var decode(VaeGan& model, const BoundParams& dec, Var z, BnMode mode,
           std::optional<Var> attrs = std::nullopt);
DiscriminatorOutput discriminate(VaeGan& model, const BoundParams& dis, Var x, BnMode mode,
                                 std::optional<Var> attrs = std::nullopt);

/// Widens `input` (N x d) by the N x A attribute matrix. Attributes must be
/// 0/1 and A must equal `expected_width`; A = 0 returns input unchanged.
Var concat_condition(Var input, std::optional<Var> attrs, std::size_t expected_width, ConditionSite site);

/// Checks that attrs is N x expected_width with 0/1 entries.
void validate_attributes(const Tensor& attrs, std::size_t rows, std::size_t expected_width);

// Graph-free conveniences running in eval mode with constant parameters.
struct Posterior {
  Tensor mu;
  Tensor log_var;
};
Posterior encode_eval(VaeGan& model, const Tensor& x, const Tensor* attrs = nullptr);
Tensor decode_eval(VaeGan& model, const Tensor& z, const Tensor* attrs = nullptr);
struct Discrimination {
  Tensor y;
  Tensor feature_l;
};
Discrimination discriminate_eval(VaeGan& model, const Tensor& x, const Tensor* attrs = nullptr);

}  // namespace vaegan
