#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vaegan/graph.hpp"
#include "vaegan/ops.hpp"
#include "vaegan/rng.hpp"
#include "vaegan/tensor.hpp"

namespace vaegan {

using NamedTensors = std::map<std::string, Tensor>;
using BoundParams = std::map<std::string, Var>;

enum class LayerKind { dense, conv_down, conv_up, batch_norm, relu, tanh, sigmoid, reshape };

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  /// Output units (dense) or output channels (conv).
  std::size_t units = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  /// Per-sample target shape for reshape.
  Shape target;
  /// Dense only: the attribute vector is concatenated to this layer's input.
  bool conditioned = false;

  static LayerSpec dense(std::size_t units, bool conditioned = false);
  static LayerSpec conv_down(std::size_t channels, std::size_t kernel, std::size_t stride);
  static LayerSpec conv_up(std::size_t channels, std::size_t kernel, std::size_t stride);
  static LayerSpec batch_norm();
  static LayerSpec relu();
  static LayerSpec tanh();
  static LayerSpec sigmoid();
  static LayerSpec reshape(Shape per_sample);

  /// "Same"-style padding: floor(kernel / 2).
  std::size_t pad() const { return kernel / 2; }
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}

  /// running <- momentum * running + (1 - momentum) * batch; the variance
  /// uses the unbiased batch estimate.
  void update(const BatchStats& stats);
};

enum class BnMode {
  train,         // batch statistics, running statistics updated
  train_frozen,  // batch statistics, running statistics untouched
  eval,          // running statistics
};

Var dense(Var x, Var weight, std::optional<Var> bias);
Var batch_norm(Var x, Var gain, Var bias, BatchNormState& state, BnMode mode);
Var activation(LayerKind kind, Var x);

/// Leaf nodes for every tensor in `params`, in name order.
BoundParams bind_params(Graph& g, const NamedTensors& params, bool trainable);
/// stop_gradient() applied to every bound parameter.
BoundParams freeze(const BoundParams& bound);

/// A feed-forward stack of LayerSpecs with a validated shape plan.
///
/// Parameters are named "<layer index>.<weight|bias|gain|shift>". Convs and
/// dense layers carry a bias only when not followed by batch_norm.
class Network {
 public:
  Network() = default;
  Network(std::string name, std::vector<LayerSpec> layers, Shape input, std::size_t cond_width = 0);

  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& input_shape() const { return input_; }
  /// Per-sample output shape of layer i.
  const Shape& output_shape(std::size_t i) const { return shapes_.at(i); }
  const Shape& output_shape() const { return shapes_.back(); }
  std::size_t cond_width() const { return cond_width_; }

  /// Shapes of every trainable tensor.
  std::map<std::string, Shape> param_shapes() const;
  /// Gaussian(0, 0.02) weights, unit gains, zero biases and shifts.
  NamedTensors init_params(Rng& rng) const;

  std::map<std::string, BatchNormState>& bn_states() { return bn_; }
  const std::map<std::string, BatchNormState>& bn_states() const { return bn_; }

  struct Tap {
    std::size_t layer = 0;
    Var value;
  };

  /// Runs the stack on x (N x input_shape). When `tap` is given, the output
  /// of layer tap->layer is stored in tap->value.
  Var forward(Graph& g, const BoundParams& params, Var x, BnMode mode,
              std::optional<Var> attrs = std::nullopt, Tap* tap = nullptr);

 private:
  std::string name_;
  std::vector<LayerSpec> layers_;
  Shape input_;
  std::size_t cond_width_ = 0;
  std::vector<Shape> shapes_;
  std::map<std::string, BatchNormState> bn_;
};

std::string param_name(std::size_t layer, const char* what);

}  // namespace vaegan
