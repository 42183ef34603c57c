#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>

#include "vaegan/data.hpp"
#include "vaegan/graph.hpp"
#include "vaegan/losses.hpp"
#include "vaegan/models.hpp"
#include "vaegan/rng.hpp"

namespace vaegan {

enum class TrainMode {
  vae,             // pixel-wise VAE
  vae_frozen_dis,  // GAN pretraining, then a VAE on the frozen discriminator's features
  vaegan,
  gan,
};

const char* mode_name(TrainMode m);
TrainMode parse_mode(const std::string& s);
const char* llike_name(LlikeVariant v);
LlikeVariant parse_llike(const std::string& s);
const char* gan_terms_name(GanTerms t);
GanTerms parse_gan_terms(const std::string& s);
const char* dec_style_name(DecGanStyle s);
DecGanStyle parse_dec_style(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::vaegan;
  double gamma = 1.0;
  double learning_rate = 3e-4;
  std::size_t batch_size = 64;
  std::uint64_t max_steps = 1000;
  std::uint64_t seed = 0;
  LlikeVariant llike = LlikeVariant::dis_l;
  GanTerms gan_terms = GanTerms::three;
  DecGanStyle dec_gan_style = DecGanStyle::non_saturating;
  /// GAN steps run before the discriminator freezes (vae_frozen_dis only).
  std::uint64_t pretrain_steps = 0;
  double rms_rho = 0.9;
  double rms_eps = 1e-8;
  std::uint64_t telemetry_every = 10;
  std::uint64_t checkpoint_every = 0;
  /// Wall-clock budget; 0 disables it.
  double time_budget_seconds = 0.0;

  /// Rejects combinations the mode cannot run.
  void validate() const;

  std::map<std::string, std::string> to_key_values() const;
  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::map<std::string, std::string> model_config_key_values(const ModelConfig& cfg);
ModelConfig model_config_from_key_values(const std::map<std::string, std::string>& kv);

/// Formats a double so that parsing it back yields the identical value.
std::string format_double(double v);
double parse_double(const std::string& s);

/// r <- rho * r + (1 - rho) * g^2; param <- param - lr * g / (sqrt(r) + eps_hat).
void rmsprop_update(Tensor& param, const Tensor& grad, Tensor& accumulator, double lr, double rho,
                    double eps_hat);

/// Which forward paths a step runs. vae_frozen_dis runs the GAN path while
/// pretraining.
enum class StepPath { vae, vae_frozen_dis, vaegan, gan };
StepPath step_path(const TrainConfig& cfg, std::uint64_t step);

/// One training step's graph. Each network's parameters are bound once;
/// the likelihood path sees the discriminator through stop_gradient and the
/// adversarial path sees the posterior sample through stop_gradient.
struct StepGraph {
  std::unique_ptr<Graph> graph;
  BoundParams enc, dec, dis;
  std::optional<Var> l_prior, l_llike, l_gan_dis, l_gan_dec;
  std::optional<Var> y_real, y_fake_prior, y_fake_recon;
  StepPath path = StepPath::vaegan;

  std::vector<Var> leaves(NetworkId id) const;
  /// Gradient of `loss` w.r.t. every tensor of network `id`; a missing loss
  /// yields zeros.
  NamedTensors gradient(const std::optional<Var>& loss, NetworkId id) const;
  /// Same as gradient() for several networks with a single backward pass.
  std::map<NetworkId, NamedTensors> gradients(const std::optional<Var>& loss,
                                              std::initializer_list<NetworkId> ids) const;
  LossBundle losses(const TrainConfig& cfg) const;
};

/// Builds the forward graph for one step. Consumes noise from `rng` in a
/// fixed order: posterior noise, then prior samples.
StepGraph build_step_graph(VaeGan& model, const TrainConfig& cfg, StepPath path, const Tensor& batch,
                           const Tensor* attrs, Rng& rng);

struct StepGradients {
  LossBundle losses;
  /// Gradients each network descends; networks a path does not train are absent.
  std::map<NetworkId, NamedTensors> apply;
  /// Decoder components before gamma weighting.
  NamedTensors dec_llike, dec_gan;
};

/// Simultaneous-gradient semantics: every gradient is taken at the step's
/// initial parameters.
///   enc: d(L_prior + L_llike)
///   dec: gamma * d(L_llike) + d(dec adversarial loss)   (gamma only with a GAN term)
///   dis: -d(GAN objective)
StepGradients compute_step_gradients(VaeGan& model, const TrainConfig& cfg, StepPath path, const Tensor& batch,
                                     const Tensor* attrs, Rng& rng);

/// Model, optimizer and RNG state: everything a checkpoint holds.
struct TrainingState {
  TrainConfig config;
  VaeGan model;
  std::map<NetworkId, NamedTensors> rms;
  Rng rng;
  std::uint64_t step = 0;
};

TrainingState init_training(const TrainConfig& cfg, const ModelConfig& model_cfg);

/// One step of the training algorithm on a batch; applies exactly one
/// RMSProp update to every trainable tensor of the networks the step trains.
LossBundle train_step(TrainingState& state, const Tensor& batch, const Tensor* attrs = nullptr);

struct TrainCallbacks {
  std::function<void(std::uint64_t step, const LossBundle&, double wall_seconds)> telemetry;
  std::function<void(const TrainingState&)> checkpoint;
};

/// Runs steps until state.step reaches config.max_steps (or the time budget
/// runs out). Batches for step s come from epoch s / (N / batch) of the
/// seeded shuffle, so a resumed run sees the same data as an unbroken one.
void train_loop(TrainingState& state, const AttributedDataset& data, const TrainCallbacks& callbacks = {});

/// Fraction of real images scored above 0.5 plus prior samples scored below
/// 0.5, in eval mode.
double discriminator_accuracy(VaeGan& model, const Tensor& real, const Tensor* attrs, Rng& rng);

}  // namespace vaegan
