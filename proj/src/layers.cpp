#include "vaegan/layers.hpp"

#include <stdexcept>

namespace vaegan {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv_down: return "conv_down";
    case LayerKind::conv_up: return "conv_up";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t units, bool conditioned) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  s.conditioned = conditioned;
  return s;
}

LayerSpec LayerSpec::conv_down(std::size_t channels, std::size_t kernel, std::size_t stride) {
  if (stride < 1) throw std::invalid_argument("conv_down stride must be >= 1");
  LayerSpec s;
  s.kind = LayerKind::conv_down;
  s.units = channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::conv_up(std::size_t channels, std::size_t kernel, std::size_t stride) {
  if (stride < 1) throw std::invalid_argument("conv_up stride must be >= 1");
  LayerSpec s;
  s.kind = LayerKind::conv_up;
  s.units = channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

namespace {
LayerSpec of_kind(LayerKind kind) {
  LayerSpec s;
  s.kind = kind;
  return s;
}
}  // namespace

LayerSpec LayerSpec::batch_norm() { return of_kind(LayerKind::batch_norm); }
LayerSpec LayerSpec::relu() { return of_kind(LayerKind::relu); }
LayerSpec LayerSpec::tanh() { return of_kind(LayerKind::tanh); }
LayerSpec LayerSpec::sigmoid() { return of_kind(LayerKind::sigmoid); }

LayerSpec LayerSpec::reshape(Shape per_sample) {
  LayerSpec s;
  s.kind = LayerKind::reshape;
  s.target = std::move(per_sample);
  return s;
}

void BatchNormState::update(const BatchStats& stats) {
  const double n = static_cast<double>(stats.count);
  const double unbias = stats.count > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t c = 0; c < running_mean.numel(); ++c) {
    running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * stats.mean[c];
    running_var[c] = momentum * running_var[c] + (1.0 - momentum) * stats.variance[c] * unbias;
  }
}

Var dense(Var x, Var weight, std::optional<Var> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0])
    throw ShapeError("dense: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  Var y = matmul(x, weight);
  if (bias) {
    if (bias->shape() != Shape{ws[1]}) throw ShapeError("dense: bias shape " + shape_str(bias->shape()));
    y = add(y, *bias);
  }
  return y;
}

Var batch_norm(Var x, Var gain, Var bias, BatchNormState& state, BnMode mode) {
  if (mode == BnMode::eval)
    return batch_norm_fixed(x, gain, bias, state.running_mean, state.running_var, state.eps);
  BatchStats stats;
  Var y = batch_norm_train(x, gain, bias, state.eps, &stats);
  if (mode == BnMode::train) state.update(stats);
  return y;
}

Var activation(LayerKind kind, Var x) {
  switch (kind) {
    case LayerKind::relu: return relu(x);
    case LayerKind::tanh: return tanh(x);
    case LayerKind::sigmoid: return sigmoid(x);
    default: throw std::invalid_argument(std::string("not an activation: ") + layer_kind_name(kind));
  }
}

BoundParams bind_params(Graph& g, const NamedTensors& params, bool trainable) {
  BoundParams out;
  for (const auto& [name, t] : params) out.emplace(name, g.leaf(t, trainable));
  return out;
}

BoundParams freeze(const BoundParams& bound) {
  BoundParams out;
  for (const auto& [name, v] : bound) out.emplace(name, stop_gradient(v));
  return out;
}

std::string param_name(std::size_t layer, const char* what) {
  return std::to_string(layer) + "." + what;
}

Network::Network(std::string name, std::vector<LayerSpec> layers, Shape input, std::size_t cond_width)
    : name_(std::move(name)), layers_(std::move(layers)), input_(std::move(input)), cond_width_(cond_width) {
  Shape cur = input_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::string where = name_ + " layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::dense: {
        if (cur.size() != 1) throw ShapeError(where + ": dense needs a flat input, got " + shape_str(cur));
        if (l.units == 0) throw ShapeError(where + ": zero units");
        cur = {l.units};
        break;
      }
      case LayerKind::conv_down: {
        if (cur.size() != 3) throw ShapeError(where + ": conv needs C x H x W, got " + shape_str(cur));
        const Shape os = kernels::conv2d_output_shape({1, cur[0], cur[1], cur[2]},
                                                      {l.units, cur[0], l.kernel, l.kernel}, l.stride, l.pad());
        cur = {os[1], os[2], os[3]};
        break;
      }
      case LayerKind::conv_up: {
        if (cur.size() != 3) throw ShapeError(where + ": conv needs C x H x W, got " + shape_str(cur));
        const std::size_t op = l.stride - 1;
        auto extent = [&](std::size_t in) {
          const long long e = static_cast<long long>((in - 1) * l.stride + l.kernel + op) -
                              2 * static_cast<long long>(l.pad());
          if (e <= 0) throw ShapeError(where + ": non-positive output extent");
          return static_cast<std::size_t>(e);
        };
        cur = {l.units, extent(cur[1]), extent(cur[2])};
        break;
      }
      case LayerKind::batch_norm: {
        if (cur.size() != 1 && cur.size() != 3) throw ShapeError(where + ": unsupported input " + shape_str(cur));
        bn_.emplace(std::to_string(i), BatchNormState(cur[0]));
        break;
      }
      case LayerKind::reshape: {
        if (shape_numel(l.target) != shape_numel(cur))
          throw ShapeError(where + ": cannot reshape " + shape_str(cur) + " to " + shape_str(l.target));
        cur = l.target;
        break;
      }
      default: break;
    }
    shapes_.push_back(cur);
  }
  if (layers_.empty()) shapes_.push_back(input_);
}

std::map<std::string, Shape> Network::param_shapes() const {
  std::map<std::string, Shape> out;
  Shape cur = input_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const bool biased = i + 1 >= layers_.size() || layers_[i + 1].kind != LayerKind::batch_norm;
    switch (l.kind) {
      case LayerKind::dense: {
        const std::size_t in = cur[0] + (l.conditioned ? cond_width_ : 0);
        out[param_name(i, "weight")] = {in, l.units};
        if (biased) out[param_name(i, "bias")] = {l.units};
        break;
      }
      case LayerKind::conv_down:
        out[param_name(i, "weight")] = {l.units, cur[0], l.kernel, l.kernel};
        if (biased) out[param_name(i, "bias")] = {l.units};
        break;
      case LayerKind::conv_up:
        // conv2d_transpose takes the conv2d layout: in-channels first.
        out[param_name(i, "weight")] = {cur[0], l.units, l.kernel, l.kernel};
        if (biased) out[param_name(i, "bias")] = {l.units};
        break;
      case LayerKind::batch_norm:
        out[param_name(i, "gain")] = {cur[0]};
        out[param_name(i, "shift")] = {cur[0]};
        break;
      default: break;
    }
    cur = shapes_[i];
  }
  return out;
}

NamedTensors Network::init_params(Rng& rng) const {
  NamedTensors out;
  for (const auto& [name, shape] : param_shapes()) {
    if (name.ends_with(".weight")) {
      Tensor w = rng.normal_tensor(shape);
      w *= 0.02;
      out.emplace(name, std::move(w));
    } else if (name.ends_with(".gain")) {
      out.emplace(name, Tensor::ones(shape));
    } else {
      out.emplace(name, Tensor::zeros(shape));
    }
  }
  return out;
}

Var Network::forward(Graph&, const BoundParams& params, Var x, BnMode mode, std::optional<Var> attrs,
                     Tap* tap) {
  const Shape& xs = x.shape();
  if (xs.empty() || Shape(xs.begin() + 1, xs.end()) != input_)
    throw ShapeError(name_ + ": input " + shape_str(xs) + " does not match configured per-sample shape " +
                     shape_str(input_));
  const std::size_t n = xs[0];
  auto param = [&](std::size_t i, const char* what) -> Var {
    auto it = params.find(param_name(i, what));
    if (it == params.end()) throw std::invalid_argument(name_ + ": missing parameter " + param_name(i, what));
    return it->second;
  };
  auto maybe_param = [&](std::size_t i, const char* what) -> std::optional<Var> {
    auto it = params.find(param_name(i, what));
    if (it == params.end()) return std::nullopt;
    return it->second;
  };

  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    switch (l.kind) {
      case LayerKind::dense: {
        Var in = h;
        if (l.conditioned && cond_width_ > 0) {
          if (!attrs) throw std::invalid_argument(name_ + ": conditional network called without attributes");
          const Var parts[] = {h, *attrs};
          in = concat(parts, 1);
        }
        h = dense(in, param(i, "weight"), maybe_param(i, "bias"));
        break;
      }
      case LayerKind::conv_down:
        h = conv2d(h, param(i, "weight"), l.stride, l.pad());
        if (auto b = maybe_param(i, "bias")) h = add(h, *b);
        break;
      case LayerKind::conv_up:
        h = conv2d_transpose(h, param(i, "weight"), l.stride, l.pad(), l.stride - 1);
        if (auto b = maybe_param(i, "bias")) h = add(h, *b);
        break;
      case LayerKind::batch_norm:
        h = vaegan::batch_norm(h, param(i, "gain"), param(i, "shift"), bn_.at(std::to_string(i)), mode);
        break;
      case LayerKind::relu:
      case LayerKind::tanh:
      case LayerKind::sigmoid:
        h = activation(l.kind, h);
        break;
      case LayerKind::reshape: {
        Shape s{n};
        s.insert(s.end(), l.target.begin(), l.target.end());
        h = vaegan::reshape(h, std::move(s));
        break;
      }
    }
    if (tap && tap->layer == i) tap->value = h;
  }
  return h;
}

}  // namespace vaegan
