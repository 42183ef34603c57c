#include "vaegan/training.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "vaegan/ops.hpp"

namespace vaegan {

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::vae: return "vae";
    case TrainMode::vae_frozen_dis: return "vae-disl";
    case TrainMode::vaegan: return "vaegan";
    case TrainMode::gan: return "gan";
  }
  return "?";
}

TrainMode parse_mode(const std::string& s) {
  if (s == "vae") return TrainMode::vae;
  if (s == "vae-disl" || s == "vae_frozen_dis") return TrainMode::vae_frozen_dis;
  if (s == "vaegan") return TrainMode::vaegan;
  if (s == "gan") return TrainMode::gan;
  throw std::invalid_argument("unknown mode '" + s + "' (expected vae, vae-disl, vaegan, gan)");
}

const char* llike_name(LlikeVariant v) { return v == LlikeVariant::pixel ? "pixel" : "disl"; }

LlikeVariant parse_llike(const std::string& s) {
  if (s == "pixel") return LlikeVariant::pixel;
  if (s == "disl" || s == "dis_l") return LlikeVariant::dis_l;
  throw std::invalid_argument("unknown likelihood '" + s + "' (expected pixel, disl)");
}

const char* gan_terms_name(GanTerms t) { return t == GanTerms::two ? "two" : "three"; }

GanTerms parse_gan_terms(const std::string& s) {
  if (s == "two" || s == "2") return GanTerms::two;
  if (s == "three" || s == "3") return GanTerms::three;
  throw std::invalid_argument("unknown GAN term count '" + s + "' (expected two, three)");
}

const char* dec_style_name(DecGanStyle s) {
  return s == DecGanStyle::saturating ? "saturating" : "non-saturating";
}

DecGanStyle parse_dec_style(const std::string& s) {
  if (s == "saturating") return DecGanStyle::saturating;
  if (s == "non-saturating" || s == "non_saturating") return DecGanStyle::non_saturating;
  throw std::invalid_argument("unknown decoder GAN style '" + s + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

namespace {

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw std::invalid_argument("not an unsigned integer: '" + s + "'");
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (batch normalization)");
  if (!(rms_rho > 0.0 && rms_rho < 1.0)) throw std::invalid_argument("rms_rho must be in (0, 1)");
  if (!(rms_eps >= 0.0)) throw std::invalid_argument("rms_eps must be non-negative");
  if (mode == TrainMode::vae && llike != LlikeVariant::pixel)
    throw std::invalid_argument("mode vae uses the pixel likelihood; use vae-disl for discriminator features");
  if (mode == TrainMode::vae_frozen_dis && llike != LlikeVariant::dis_l)
    throw std::invalid_argument("mode vae-disl requires the disl likelihood");
  if (mode == TrainMode::gan && gan_terms == GanTerms::three)
    throw std::invalid_argument("mode gan has no encoder; only the two-term objective applies");
  if (mode != TrainMode::vae_frozen_dis && pretrain_steps != 0)
    throw std::invalid_argument("pretrain_steps only applies to mode vae-disl");
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
  return {
      {"mode", mode_name(mode)},
      {"gamma", format_double(gamma)},
      {"learning_rate", format_double(learning_rate)},
      {"batch_size", std::to_string(batch_size)},
      {"max_steps", std::to_string(max_steps)},
      {"seed", std::to_string(seed)},
      {"llike", llike_name(llike)},
      {"gan_terms", gan_terms_name(gan_terms)},
      {"dec_gan_style", dec_style_name(dec_gan_style)},
      {"pretrain_steps", std::to_string(pretrain_steps)},
      {"rms_rho", format_double(rms_rho)},
      {"rms_eps", format_double(rms_eps)},
      {"telemetry_every", std::to_string(telemetry_every)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"time_budget_seconds", format_double(time_budget_seconds)},
  };
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto get = [&](const char* k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("mode")) c.mode = parse_mode(*v);
  if (auto v = get("gamma")) c.gamma = parse_double(*v);
  if (auto v = get("learning_rate")) c.learning_rate = parse_double(*v);
  if (auto v = get("batch_size")) c.batch_size = parse_u64(*v);
  if (auto v = get("max_steps")) c.max_steps = parse_u64(*v);
  if (auto v = get("seed")) c.seed = parse_u64(*v);
  if (auto v = get("llike")) c.llike = parse_llike(*v);
  if (auto v = get("gan_terms")) c.gan_terms = parse_gan_terms(*v);
  if (auto v = get("dec_gan_style")) c.dec_gan_style = parse_dec_style(*v);
  if (auto v = get("pretrain_steps")) c.pretrain_steps = parse_u64(*v);
  if (auto v = get("rms_rho")) c.rms_rho = parse_double(*v);
  if (auto v = get("rms_eps")) c.rms_eps = parse_double(*v);
  if (auto v = get("telemetry_every")) c.telemetry_every = parse_u64(*v);
  if (auto v = get("checkpoint_every")) c.checkpoint_every = parse_u64(*v);
  if (auto v = get("time_budget_seconds")) c.time_budget_seconds = parse_double(*v);
  return c;
}

std::map<std::string, std::string> model_config_key_values(const ModelConfig& cfg) {
  return {
      {"resolution", std::to_string(cfg.resolution)},
      {"channels", std::to_string(cfg.channels)},
      {"scale", format_double(cfg.scale)},
      {"latent_dim", std::to_string(cfg.latent_dim)},
      {"attr_count", std::to_string(cfg.attr_count)},
  };
}

ModelConfig model_config_from_key_values(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::invalid_argument(std::string("missing model key ") + k);
    return it->second;
  };
  c.resolution = parse_u64(get("resolution"));
  c.channels = parse_u64(get("channels"));
  c.scale = parse_double(get("scale"));
  c.latent_dim = parse_u64(get("latent_dim"));
  c.attr_count = parse_u64(get("attr_count"));
  c.validate();
  return c;
}

void rmsprop_update(Tensor& param, const Tensor& grad, Tensor& accumulator, double lr, double rho,
                    double eps_hat) {
  if (param.shape() != grad.shape() || param.shape() != accumulator.shape())
    throw ShapeError("rmsprop_update shape mismatch: " + shape_str(param.shape()) + ", " +
                     shape_str(grad.shape()) + ", " + shape_str(accumulator.shape()));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    accumulator[i] = rho * accumulator[i] + (1.0 - rho) * g * g;
    param[i] -= lr * g / (std::sqrt(accumulator[i]) + eps_hat);
  }
}

StepPath step_path(const TrainConfig& cfg, std::uint64_t step) {
  switch (cfg.mode) {
    case TrainMode::vae: return StepPath::vae;
    case TrainMode::vaegan: return StepPath::vaegan;
    case TrainMode::gan: return StepPath::gan;
    case TrainMode::vae_frozen_dis: return step < cfg.pretrain_steps ? StepPath::gan : StepPath::vae_frozen_dis;
  }
  return StepPath::vaegan;
}

std::vector<Var> StepGraph::leaves(NetworkId id) const {
  const BoundParams& b = id == NetworkId::enc ? enc : (id == NetworkId::dis ? dis : dec);
  std::vector<Var> out;
  for (const auto& [name, v] : b) out.push_back(v);
  return out;
}

NamedTensors StepGraph::gradient(const std::optional<Var>& loss, NetworkId id) const {
  return gradients(loss, {id}).at(id);
}

std::map<NetworkId, NamedTensors> StepGraph::gradients(const std::optional<Var>& loss,
                                                      std::initializer_list<NetworkId> ids) const {
  if (loss) {
    std::vector<Var> wrt;
    for (NetworkId id : ids)
      for (const Var& v : leaves(id)) wrt.push_back(v);
    graph->backward(*loss, wrt);
  }
  std::map<NetworkId, NamedTensors> out;
  for (NetworkId id : ids) {
    const BoundParams& b = id == NetworkId::enc ? enc : (id == NetworkId::dis ? dis : dec);
    for (const auto& [name, v] : b) out[id].emplace(name, loss ? graph->grad(v) : Tensor::zeros_like(v.value()));
  }
  return out;
}

LossBundle StepGraph::losses(const TrainConfig& cfg) const {
  LossBundle l;
  if (l_prior) l.l_prior = l_prior->value().item();
  if (l_llike) l.l_llike = l_llike->value().item();
  if (l_gan_dis) l.l_gan_dis = l_gan_dis->value().item();
  if (l_gan_dec) l.l_gan_dec = l_gan_dec->value().item();
  l.llike = cfg.llike;
  l.gan_terms = cfg.gan_terms;
  l.dec_style = cfg.dec_gan_style;
  return l;
}

namespace {

std::optional<Var> repeat_rows(const std::optional<Var>& a, std::size_t times) {
  if (!a) return std::nullopt;
  std::vector<Var> parts(times, *a);
  return concat(parts, 0);
}

}  // namespace

StepGraph build_step_graph(VaeGan& model, const TrainConfig& cfg, StepPath path, const Tensor& batch,
                           const Tensor* attrs, Rng& rng) {
  StepGraph sg;
  sg.graph = std::make_unique<Graph>();
  sg.path = path;
  Graph& g = *sg.graph;
  const std::size_t n = batch.dim(0);
  const std::size_t dz = model.config().latent();
  const bool uses_enc = path != StepPath::gan;
  const bool uses_dis = path != StepPath::vae;
  const bool trains_dis = path == StepPath::vaegan || path == StepPath::gan;
  const bool feature_llike =
      path == StepPath::vae_frozen_dis || (path == StepPath::vaegan && cfg.llike == LlikeVariant::dis_l);

  if (uses_enc) sg.enc = bind_params(g, model.params().network(NetworkId::enc), true);
  sg.dec = bind_params(g, model.params().network(NetworkId::dec), true);
  if (uses_dis) sg.dis = bind_params(g, model.params().network(NetworkId::dis), trains_dis);

  const Var x = g.constant(batch);
  std::optional<Var> a;
  if (attrs && !attrs->empty()) a = g.constant(*attrs);

  std::optional<Var> z_post;
  if (uses_enc) {
    LatentCode code = encode(model, sg.enc, x, BnMode::train, a);
    const Var eps = g.constant(rng.normal_tensor({n, dz}));
    code = reparameterize(code, eps);
    sg.l_prior = kl_prior(code);
    const Var x_tilde = decode(model, sg.dec, code.z, BnMode::train, a);
    if (feature_llike) {
      // The discriminator is a fixed metric here: no gradient reaches its
      // parameters and its running statistics are left alone.
      const BoundParams metric = freeze(sg.dis);
      const Var pair[] = {x, x_tilde};
      const auto d = discriminate(model, metric, concat(pair, 0), BnMode::train_frozen, repeat_rows(a, 2));
      sg.l_llike = llike_feature(slice_rows(d.feature_l, 0, n), slice_rows(d.feature_l, n, 2 * n));
    } else {
      sg.l_llike = llike_pixel(x, x_tilde);
    }
    z_post = code.z;
  }

  if (path == StepPath::vaegan || path == StepPath::gan) {
    const Var z_prior = g.constant(rng.normal_tensor({n, dz}));
    const Var x_prior = decode(model, sg.dec, z_prior, BnMode::train, a);
    std::vector<Var> streams{x, x_prior};
    const bool three = path == StepPath::vaegan && cfg.gan_terms == GanTerms::three;
    if (three) {
      // Same decoder pass as x_tilde, but the adversarial signal must not
      // reach the encoder.
      streams.push_back(decode(model, sg.dec, stop_gradient(*z_post), BnMode::train_frozen, a));
    }
    const auto d = discriminate(model, sg.dis, concat(streams, 0), BnMode::train, repeat_rows(a, streams.size()));
    sg.y_real = slice_rows(d.y, 0, n);
    sg.y_fake_prior = slice_rows(d.y, n, 2 * n);
    if (three) sg.y_fake_recon = slice_rows(d.y, 2 * n, 3 * n);
    sg.l_gan_dis = gan_objective_dis(*sg.y_real, *sg.y_fake_prior, sg.y_fake_recon);
    sg.l_gan_dec = gan_objective_dec(*sg.y_fake_prior, sg.y_fake_recon, cfg.dec_gan_style);
  }
  return sg;
}

StepGradients compute_step_gradients(VaeGan& model, const TrainConfig& cfg, StepPath path, const Tensor& batch,
                                     const Tensor* attrs, Rng& rng) {
  StepGraph sg = build_step_graph(model, cfg, path, batch, attrs, rng);
  StepGradients out;
  out.losses = sg.losses(cfg);

  if (path != StepPath::gan) {
    NamedTensors enc = sg.gradient(sg.l_prior, NetworkId::enc);
    auto llike = sg.gradients(sg.l_llike, {NetworkId::enc, NetworkId::dec});
    for (auto& [name, t] : enc) t += llike.at(NetworkId::enc).at(name);
    out.apply[NetworkId::enc] = std::move(enc);
    out.dec_llike = std::move(llike.at(NetworkId::dec));
  }

  if (sg.l_gan_dec) {
    out.dec_gan = sg.gradient(sg.l_gan_dec, NetworkId::dec);
    NamedTensors dec = out.dec_gan;
    if (!out.dec_llike.empty()) {
      for (auto& [name, t] : dec) {
        Tensor weighted = out.dec_llike.at(name);
        weighted *= cfg.gamma;
        weighted += t;
        t = std::move(weighted);
      }
    }
    out.apply[NetworkId::dec] = std::move(dec);
  } else {
    out.apply[NetworkId::dec] = out.dec_llike;
  }

  if (path == StepPath::vaegan || path == StepPath::gan) {
    NamedTensors dis = sg.gradient(sg.l_gan_dis, NetworkId::dis);
    for (auto& [name, t] : dis) t *= -1.0;
    out.apply[NetworkId::dis] = std::move(dis);
  }
  return out;
}

TrainingState init_training(const TrainConfig& cfg, const ModelConfig& model_cfg) {
  cfg.validate();
  TrainingState s;
  s.config = cfg;
  s.model = VaeGan(model_cfg, derive_seed(cfg.seed, 0));
  for (NetworkId id : {NetworkId::enc, NetworkId::dec, NetworkId::dis})
    for (const auto& [name, t] : s.model.params().network(id)) s.rms[id].emplace(name, Tensor::zeros_like(t));
  s.rng = Rng(derive_seed(cfg.seed, 2));
  return s;
}

LossBundle train_step(TrainingState& state, const Tensor& batch, const Tensor* attrs) {
  const TrainConfig& cfg = state.config;
  const StepPath path = step_path(cfg, state.step);
  StepGradients grads = compute_step_gradients(state.model, cfg, path, batch, attrs, state.rng);
  check_finite(grads.losses, static_cast<long long>(state.step));
  for (auto& [id, named] : grads.apply) {
    NamedTensors& params = state.model.params().network(id);
    NamedTensors& acc = state.rms[id];
    for (auto& [name, g] : named) {
      auto it = acc.find(name);
      if (it == acc.end()) it = acc.emplace(name, Tensor::zeros_like(g)).first;
      rmsprop_update(params.at(name), g, it->second, cfg.learning_rate, cfg.rms_rho, cfg.rms_eps);
    }
  }
  ++state.step;
  return grads.losses;
}

void train_loop(TrainingState& state, const AttributedDataset& data, const TrainCallbacks& callbacks) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (state.step >= cfg.max_steps) return;
  if (data.size() == 0) throw DataError("training dataset is empty");
  data.validate();
  const ModelConfig& mc = state.model.config();
  const Shape expect{mc.channels, mc.resolution, mc.resolution};
  if (Shape(data.images.shape().begin() + 1, data.images.shape().end()) != expect)
    throw DataError("dataset images " + shape_str(data.images.shape()) + " do not match model input " +
                    shape_str(expect));
  if (mc.attr_count != 0 && mc.attr_count != data.attr_count())
    throw DataError("conditional model expects " + std::to_string(mc.attr_count) + " attributes, dataset has " +
                    std::to_string(data.attr_count()));

  const std::size_t per_epoch = data.size() / cfg.batch_size;
  if (per_epoch == 0) throw std::invalid_argument("batch_size exceeds dataset size");
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, 1);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::vector<std::size_t>> batches;

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  while (state.step < cfg.max_steps) {
    if (cfg.time_budget_seconds > 0.0 && elapsed() >= cfg.time_budget_seconds) break;
    const std::uint64_t epoch = state.step / per_epoch;
    if (epoch != cached_epoch) {
      batches = batch_iterator(data.size(), cfg.batch_size, shuffle_seed, epoch);
      cached_epoch = epoch;
    }
    const auto& idx = batches[state.step % per_epoch];
    const Tensor batch = data.image_batch(idx);
    const Tensor attrs = mc.attr_count ? data.attribute_batch(idx) : Tensor();
    const LossBundle losses = train_step(state, batch, mc.attr_count ? &attrs : nullptr);
    if (callbacks.telemetry && cfg.telemetry_every && state.step % cfg.telemetry_every == 0)
      callbacks.telemetry(state.step, losses, elapsed());
    if (callbacks.checkpoint && cfg.checkpoint_every && state.step % cfg.checkpoint_every == 0)
      callbacks.checkpoint(state);
  }
}

double discriminator_accuracy(VaeGan& model, const Tensor& real, const Tensor* attrs, Rng& rng) {
  const std::size_t n = real.dim(0);
  const Tensor z = rng.normal_tensor({n, model.config().latent()});
  const Tensor fake = decode_eval(model, z, attrs);
  const Tensor y_real = discriminate_eval(model, real, attrs).y;
  const Tensor y_fake = discriminate_eval(model, fake, attrs).y;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y_real[i] > 0.5) ++correct;
    if (y_fake[i] < 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * n);
}

}  // namespace vaegan
