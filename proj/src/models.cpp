#include "vaegan/models.hpp"

#include <cmath>
#include <stdexcept>

#include "vaegan/ops.hpp"

namespace vaegan {

std::size_t ModelConfig::width(std::size_t w) const {
  const auto v = static_cast<std::size_t>(std::llround(static_cast<double>(w) * scale));
  return v == 0 ? 1 : v;
}

std::size_t ModelConfig::latent() const { return latent_dim ? latent_dim : width(128); }

void ModelConfig::validate() const {
  if (resolution == 0 || resolution % 8 != 0)
    throw std::invalid_argument("resolution must be a positive multiple of 8, got " + std::to_string(resolution));
  if (channels == 0) throw std::invalid_argument("channels must be positive");
  if (!(scale > 0.0) || scale > 1.0) throw std::invalid_argument("scale must be in (0, 1]");
}

std::vector<LayerSpec> encoder_trunk_layers(const ModelConfig& c) {
  const std::size_t r8 = c.resolution / 8;
  return {
      LayerSpec::conv_down(c.width(64), 5, 2),  LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_down(c.width(128), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_down(c.width(256), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::reshape({c.width(256) * r8 * r8}),
      LayerSpec::dense(c.width(2048), true),     LayerSpec::batch_norm(), LayerSpec::relu(),
  };
}

std::vector<LayerSpec> decoder_layers(const ModelConfig& c) {
  const std::size_t r8 = c.resolution / 8;
  return {
      LayerSpec::dense(r8 * r8 * c.width(256), true), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::reshape({c.width(256), r8, r8}),
      LayerSpec::conv_up(c.width(256), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_up(c.width(128), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_up(c.width(32), 5, 2),  LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_down(c.channels, 5, 1), LayerSpec::tanh(),
  };
}

std::vector<LayerSpec> discriminator_layers(const ModelConfig& c) {
  const std::size_t r8 = c.resolution / 8;
  return {
      LayerSpec::conv_down(c.width(32), 5, 1),  LayerSpec::relu(),
      LayerSpec::conv_down(c.width(128), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_down(c.width(256), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::conv_down(c.width(256), 5, 2), LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::reshape({c.width(256) * r8 * r8}),
      LayerSpec::dense(c.width(512), true),     LayerSpec::batch_norm(), LayerSpec::relu(),
      LayerSpec::dense(1),                      LayerSpec::sigmoid(),
  };
}

std::size_t third_downsampling_tap(const std::vector<LayerSpec>& layers) {
  int seen = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::conv_down && layers[i].stride == 2) ++seen;
    if (seen == 3) {
      for (std::size_t j = i + 1; j < layers.size(); ++j)
        if (layers[j].kind == LayerKind::relu) return j;
      break;
    }
  }
  throw std::invalid_argument("network has no activation after a third stride-2 conv");
}

const char* network_name(NetworkId id) {
  switch (id) {
    case NetworkId::enc: return "enc";
    case NetworkId::dec: return "dec";
    case NetworkId::gen: return "dec";
    case NetworkId::dis: return "dis";
  }
  return "?";
}

NamedTensors& ParameterStore::network(NetworkId id) {
  switch (id) {
    case NetworkId::enc: return enc_;
    case NetworkId::dec:
    case NetworkId::gen: return dec_;
    case NetworkId::dis: return dis_;
  }
  throw std::invalid_argument("unknown network");
}

const NamedTensors& ParameterStore::network(NetworkId id) const {
  return const_cast<ParameterStore*>(this)->network(id);
}

VaeGan::VaeGan(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t dz = cfg_.latent();
  const std::size_t res = cfg_.resolution;
  enc_ = Network("enc", encoder_trunk_layers(cfg_), {cfg_.channels, res, res}, cfg_.attr_count);
  dec_ = Network("dec", decoder_layers(cfg_), {dz}, cfg_.attr_count);
  dis_ = Network("dis", discriminator_layers(cfg_), {cfg_.channels, res, res}, cfg_.attr_count);
  tap_ = third_downsampling_tap(dis_.layers());

  Rng rng(init_seed);
  params_.network(NetworkId::enc) = enc_.init_params(rng);
  // Posterior heads on top of the trunk: plain linear maps.
  const std::size_t trunk = enc_.output_shape()[0];
  for (const char* head : {"mu", "log_var"}) {
    Tensor w = rng.normal_tensor({trunk, dz});
    w *= 0.02;
    params_.network(NetworkId::enc)[std::string(head) + ".weight"] = std::move(w);
    params_.network(NetworkId::enc)[std::string(head) + ".bias"] = Tensor::zeros({dz});
  }
  params_.network(NetworkId::dec) = dec_.init_params(rng);
  params_.network(NetworkId::dis) = dis_.init_params(rng);
}

Network& VaeGan::network(NetworkId id) {
  switch (id) {
    case NetworkId::enc: return enc_;
    case NetworkId::dec:
    case NetworkId::gen: return dec_;
    case NetworkId::dis: return dis_;
  }
  throw std::invalid_argument("unknown network");
}

const Network& VaeGan::network(NetworkId id) const { return const_cast<VaeGan*>(this)->network(id); }

void VaeGan::set_feature_tap(std::size_t layer) {
  if (layer >= dis_.layers().size()) throw std::invalid_argument("feature tap beyond discriminator depth");
  tap_ = layer;
}

void validate_attributes(const Tensor& attrs, std::size_t rows, std::size_t expected_width) {
  if (attrs.rank() != 2 || attrs.dim(0) != rows || attrs.dim(1) != expected_width)
    throw ShapeError("attribute matrix " + shape_str(attrs.shape()) + " does not match " +
                     std::to_string(rows) + " x " + std::to_string(expected_width));
  for (double v : attrs.data())
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("attributes must be 0/1 valued");
}

Var concat_condition(Var input, std::optional<Var> attrs, std::size_t expected_width, ConditionSite) {
  if (expected_width == 0) {
    if (attrs && attrs->shape().size() == 2 && attrs->shape()[1] != 0)
      throw ShapeError("unconditional model given attributes");
    return input;
  }
  if (!attrs) throw std::invalid_argument("conditional model needs attributes");
  if (input.shape().size() != 2) throw ShapeError("conditioning expects a flat N x d input");
  validate_attributes(attrs->value(), input.shape()[0], expected_width);
  const Var parts[] = {input, *attrs};
  return concat(parts, 1);
}

namespace {

std::optional<Var> checked_attrs(const VaeGan& model, Var x, std::optional<Var> attrs) {
  const std::size_t a = model.config().attr_count;
  if (a == 0) {
    if (attrs) throw std::invalid_argument("unconditional model given attributes");
    return std::nullopt;
  }
  if (!attrs) throw std::invalid_argument("conditional model needs attributes");
  validate_attributes(attrs->value(), x.shape()[0], a);
  return attrs;
}

void check_image(const VaeGan& model, Var x) {
  const auto& c = model.config();
  const Shape expect{c.channels, c.resolution, c.resolution};
  const Shape& s = x.shape();
  if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != expect)
    throw ShapeError("image batch " + shape_str(s) + " does not match configured resolution " +
                     shape_str(expect));
}

}  // namespace

LatentCode encode(VaeGan& model, const BoundParams& enc, Var x, BnMode mode, std::optional<Var> attrs) {
  check_image(model, x);
  attrs = checked_attrs(model, x, attrs);
  Var h = model.enc().forward(x.graph(), enc, x, mode, attrs);
  LatentCode code;
  code.mu = dense(h, enc.at("mu.weight"), enc.at("mu.bias"));
  code.log_var = clamp(dense(h, enc.at("log_var.weight"), enc.at("log_var.bias")), -kLogVarClamp, kLogVarClamp);
  return code;
}

LatentCode reparameterize(const LatentCode& code, Var eps) {
  if (eps.shape() != code.mu.shape() || code.log_var.shape() != code.mu.shape())
    throw ShapeError("reparameterize: noise " + shape_str(eps.shape()) + " vs mu " + shape_str(code.mu.shape()));
  LatentCode out = code;
  out.z = add(code.mu, mul(exp(mul_scalar(code.log_var, 0.5)), eps));
  return out;
}

Var decode(VaeGan& model, const BoundParams& dec, Var z, BnMode mode, std::optional<Var> attrs) {
  const std::size_t dz = model.config().latent();
  if (z.shape().size() != 2 || z.shape()[1] != dz)
    throw ShapeError("decode: latent " + shape_str(z.shape()) + " does not have width " + std::to_string(dz));
  attrs = checked_attrs(model, z, attrs);
  return model.dec().forward(z.graph(), dec, z, mode, attrs);
}

DiscriminatorOutput discriminate(VaeGan& model, const BoundParams& dis, Var x, BnMode mode,
                                 std::optional<Var> attrs) {
  check_image(model, x);
  attrs = checked_attrs(model, x, attrs);
  Network::Tap tap{model.feature_tap(), {}};
  DiscriminatorOutput out;
  out.y = model.dis().forward(x.graph(), dis, x, mode, attrs, &tap);
  out.feature_l = tap.value;
  return out;
}

Posterior encode_eval(VaeGan& model, const Tensor& x, const Tensor* attrs) {
  Graph g;
  auto p = bind_params(g, model.params().network(NetworkId::enc), false);
  std::optional<Var> a;
  if (attrs) a = g.constant(*attrs);
  auto code = encode(model, p, g.constant(x), BnMode::eval, a);
  return {code.mu.value(), code.log_var.value()};
}

Tensor decode_eval(VaeGan& model, const Tensor& z, const Tensor* attrs) {
  Graph g;
  auto p = bind_params(g, model.params().network(NetworkId::dec), false);
  std::optional<Var> a;
  if (attrs) a = g.constant(*attrs);
  return decode(model, p, g.constant(z), BnMode::eval, a).value();
}

Discrimination discriminate_eval(VaeGan& model, const Tensor& x, const Tensor* attrs) {
  Graph g;
  auto p = bind_params(g, model.params().network(NetworkId::dis), false);
  std::optional<Var> a;
  if (attrs) a = g.constant(*attrs);
  auto out = discriminate(model, p, g.constant(x), BnMode::eval, a);
  return {out.y.value(), out.feature_l.value()};
}

}  // namespace vaegan
