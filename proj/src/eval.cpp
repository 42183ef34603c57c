#include "vaegan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vaegan/losses.hpp"
#include "vaegan/ops.hpp"
#include "vaegan/training.hpp"

namespace vaegan {
namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

void RegressorConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("regressor batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("regressor learning_rate must be positive");
  if (!(scale > 0.0) || scale > 1.0) throw std::invalid_argument("regressor scale must be in (0, 1]");
}

Regressor::Regressor(std::size_t resolution, std::size_t channels, double scale,
                     std::vector<std::string> attribute_names, std::uint64_t init_seed)
    : names_(std::move(attribute_names)) {
  if (names_.empty()) throw std::invalid_argument("regressor needs at least one attribute");
  arch_.resolution = resolution;
  arch_.channels = channels;
  arch_.scale = scale;
  arch_.validate();
  auto layers = encoder_trunk_layers(arch_);
  layers.push_back(LayerSpec::dense(names_.size()));
  layers.push_back(LayerSpec::sigmoid());
  net_ = Network("reg", std::move(layers), {channels, resolution, resolution});
  Rng rng(init_seed);
  params_ = net_.init_params(rng);
}

Tensor Regressor::predict(const Tensor& images, std::size_t chunk) {
  if (images.rank() != 4) throw ShapeError("regressor input must be N x C x H x W");
  const std::size_t n = images.dim(0);
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    Graph g;
    const BoundParams p = bind_params(g, params_, false);
    const Var x = g.constant(images.slice_rows(begin, std::min(n, begin + chunk)));
    parts.push_back(net_.forward(g, p, x, BnMode::eval).value());
  }
  return concat_rows(parts);
}

CheckpointFile Regressor::to_checkpoint() const {
  CheckpointFile f;
  f.header["kind"] = "regressor";
  f.header["resolution"] = std::to_string(arch_.resolution);
  f.header["channels"] = std::to_string(arch_.channels);
  f.header["scale"] = format_double(arch_.scale);
  f.header["attr_count"] = std::to_string(names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) f.header["attr." + std::to_string(i)] = names_[i];
  for (const auto& [name, t] : params_) f.tensors.emplace("reg/" + name, t);
  for (const auto& [layer, bn] : net_.bn_states()) {
    f.tensors.emplace("reg/" + layer + ".running_mean", bn.running_mean);
    f.tensors.emplace("reg/" + layer + ".running_var", bn.running_var);
  }
  return f;
}

Regressor Regressor::from_checkpoint(const CheckpointFile& f) {
  auto header = [&](const std::string& k) {
    auto it = f.header.find(k);
    if (it == f.header.end()) throw CheckpointError("regressor file lacks '" + k + "'");
    return it->second;
  };
  if (header("kind") != "regressor") throw CheckpointError("not a regressor file (kind " + header("kind") + ")");
  Regressor r;
  try {
    std::vector<std::string> names(std::stoull(header("attr_count")));
    for (std::size_t i = 0; i < names.size(); ++i) names[i] = header("attr." + std::to_string(i));
    r = Regressor(std::stoull(header("resolution")), std::stoull(header("channels")), parse_double(header("scale")),
                  std::move(names), 0);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid regressor header: ") + e.what());
  }
  std::size_t used = 0;
  auto take = [&](const std::string& key, Tensor& dst) {
    auto it = f.tensors.find(key);
    if (it == f.tensors.end() || it->second.shape() != dst.shape())
      throw CheckpointError("regressor tensor '" + key + "' missing or misshapen");
    dst = it->second;
    ++used;
  };
  for (auto& [name, t] : r.params_) take("reg/" + name, t);
  for (auto& [layer, bn] : r.net_.bn_states()) {
    take("reg/" + layer + ".running_mean", bn.running_mean);
    take("reg/" + layer + ".running_var", bn.running_var);
  }
  if (used != f.tensors.size()) throw CheckpointError("regressor file holds unexpected tensors");
  return r;
}

Var binary_cross_entropy(Var probs, Var targets) {
  if (probs.shape() != targets.shape())
    throw ShapeError("binary_cross_entropy: " + shape_str(probs.shape()) + " vs " + shape_str(targets.shape()));
  const Var p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  const Var pos = mul(targets, log(p));
  const Var negs = mul(add_scalar(neg(targets), 1.0), log(add_scalar(neg(p), 1.0)));
  return mul_scalar(sum(add(pos, negs)), -1.0 / static_cast<double>(probs.shape()[0]));
}

Regressor train_regressor(const AttributedDataset& data, const RegressorConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.attr_count() == 0) throw DataError("regressor training needs an attributed dataset");
  if (cfg.batch_size > data.size()) throw std::invalid_argument("regressor batch_size exceeds dataset size");
  const auto& s = data.images.shape();
  Regressor reg(s[2], s[1], cfg.scale, data.attribute_names, derive_seed(cfg.seed, 0));
  NamedTensors acc;
  for (const auto& [name, t] : reg.params()) acc.emplace(name, Tensor::zeros_like(t));

  const std::size_t per_epoch = data.size() / cfg.batch_size;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (step % per_epoch == 0) batches = batch_iterator(data.size(), cfg.batch_size, derive_seed(cfg.seed, 1),
                                                        step / per_epoch);
    const auto& idx = batches[step % per_epoch];
    Graph g;
    const BoundParams p = bind_params(g, reg.params(), true);
    const Var y = reg.network().forward(g, p, g.constant(data.image_batch(idx)), BnMode::train);
    const Var loss = binary_cross_entropy(y, g.constant(data.attribute_batch(idx)));
    if (!std::isfinite(loss.value().item()))
      throw NumericalError("non-finite regressor loss at step " + std::to_string(step));
    g.backward(loss);
    for (auto& [name, v] : p)
      rmsprop_update(reg.params().at(name), g.grad(v), acc.at(name), cfg.learning_rate, cfg.rms_rho, cfg.rms_eps);
  }
  return reg;
}

std::vector<double> regressor_accuracy(Regressor& reg, const AttributedDataset& data) {
  if (data.attr_count() != reg.attr_count()) throw DataError("regressor and dataset attribute counts differ");
  const Tensor probs = reg.predict(data.images);
  const std::size_t a = reg.attr_count();
  std::vector<double> acc(a, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < a; ++j)
      if ((probs[i * a + j] >= 0.5) == (data.attributes[i * a + j] == 1.0)) acc[j] += 1.0;
  for (double& v : acc) v /= static_cast<double>(data.size());
  return acc;
}

Generator conditional_generator(VaeGan& model) {
  if (model.config().attr_count == 0)
    throw std::invalid_argument("conditional scoring needs a conditional model");
  return [&model](const Tensor& attrs, Rng& rng) {
    const Tensor z = rng.normal_tensor({attrs.dim(0), model.config().latent()});
    return decode_eval(model, z, &attrs);
  };
}

Predictor regressor_predictor(Regressor& reg) {
  return [&reg](const Tensor& images) { return reg.predict(images); };
}

AttributeScore score_conditional(const Generator& gen, const Predictor& predict, const Tensor& attrs,
                                 std::size_t samples_per_vector, std::size_t runs, std::uint64_t seed) {
  if (samples_per_vector < 1) throw std::invalid_argument("samples_per_vector must be >= 1");
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  if (attrs.rank() != 2) throw ShapeError("requested attributes must be M x A");
  const std::size_t m = attrs.dim(0);
  const std::size_t a = attrs.dim(1);

  AttributeScore score;
  score.runs = runs;
  score.samples_per_vector = samples_per_vector;
  std::vector<double> target_norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < a; ++j) ss += attrs[i * a + j] * attrs[i * a + j];
    target_norm[i] = std::sqrt(ss);
    if (ss == 0.0) ++score.excluded_rows;
  }

  for (std::size_t r = 0; r < runs; ++r) {
    Rng rng(derive_seed(seed, r));
    std::vector<double> best(m, -1.0);
    double mse = 0.0;
    for (std::size_t s = 0; s < samples_per_vector; ++s) {
      const Tensor pred = predict(gen(attrs, rng));
      if (pred.shape() != attrs.shape())
        throw ShapeError("predictions " + shape_str(pred.shape()) + " do not match requests " +
                         shape_str(attrs.shape()));
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0, pp = 0.0, se = 0.0;
        for (std::size_t j = 0; j < a; ++j) {
          const double t = attrs[i * a + j];
          const double p = pred[i * a + j];
          dot += t * p;
          pp += p * p;
          se += (p - t) * (p - t);
        }
        if (s == 0) mse += se;
        if (target_norm[i] == 0.0) continue;
        const double cos = pp == 0.0 ? 0.0 : std::clamp(dot / (target_norm[i] * std::sqrt(pp)), -1.0, 1.0);
        best[i] = std::max(best[i], cos);
      }
    }
    double cos_sum = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (target_norm[i] != 0.0) cos_sum += best[i];
    const std::size_t counted = m - score.excluded_rows;
    score.run_cosine.push_back(counted ? cos_sum / static_cast<double>(counted) : 0.0);
    score.run_mse.push_back(mse / static_cast<double>(m));
  }
  score.cosine_mean = mean_of(score.run_cosine);
  score.cosine_std = sample_std(score.run_cosine);
  score.mse_mean = mean_of(score.run_mse);
  score.mse_std = sample_std(score.run_mse);
  return score;
}

ComparisonReport compare_models(const std::vector<NamedGenerator>& models, const Predictor& predict,
                                const Tensor& attrs, std::size_t samples_per_vector, std::size_t runs,
                                std::uint64_t seed) {
  if (models.empty()) throw std::invalid_argument("compare_models needs at least one model");
  ComparisonReport report;
  for (const auto& m : models)
    report.rows.push_back({m.name, score_conditional(m.generate, predict, attrs, samples_per_vector, runs, seed)});
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const ComparisonRow& x, const ComparisonRow& y) {
    if (x.score.mse_mean != y.score.mse_mean) return x.score.mse_mean < y.score.mse_mean;
    return x.score.cosine_mean > y.score.cosine_mean;
  });
  return report;
}

std::string ComparisonReport::to_csv() const {
  std::string out = "model,cosine_mean,cosine_std,mse_mean,mse_std,runs,samples_per_vector\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g,%zu,%zu\n", r.score.cosine_mean, r.score.cosine_std,
                  r.score.mse_mean, r.score.mse_std, r.score.runs, r.score.samples_per_vector);
    out += r.model + buf;
  }
  return out;
}

std::string ComparisonReport::to_text() const {
  std::ostringstream os;
  os << "Attribute similarity of conditional generations\n"
     << "MSE is over {0,1} attribute targets and regressor probabilities (sum over attributes, mean over rows);\n"
     << "it is not on the scale of real-valued attribute strengths.\n\n";
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.model.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-17s  %-17s  %4s  %7s  %8s\n", static_cast<int>(width), "model", "cosine",
                "mse", "runs", "samples", "excluded");
  os << buf;
  for (const auto& r : rows) {
    const auto& s = r.score;
    std::snprintf(buf, sizeof buf, "%-*s  %.4f +- %-7.4f  %.4f +- %-7.4f  %4zu  %7zu  %8zu\n", static_cast<int>(width),
                  r.model.c_str(), s.cosine_mean, s.cosine_std, s.mse_mean, s.mse_std, s.runs, s.samples_per_vector,
                  s.excluded_rows);
    os << buf;
  }
  return os.str();
}

}  // namespace vaegan
