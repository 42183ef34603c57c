#include "vaegan/losses.hpp"

#include <cmath>

#include "vaegan/ops.hpp"

namespace vaegan {
namespace {

double batch_scale(Var v) {
  const Shape& s = v.shape();
  if (s.empty()) throw ShapeError("loss input needs a batch axis");
  return 1.0 / static_cast<double>(s[0]);
}

void check_probabilities(Var y, const char* what) {
  for (double v : y.value().data())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::domain_error(std::string(what) + ": discriminator output outside [0, 1]: " + std::to_string(v));
}

Var clamped(Var y) { return clamp(y, kProbClamp, 1.0 - kProbClamp); }

Var log_one_minus(Var y) { return log(add_scalar(neg(clamped(y)), 1.0)); }

}  // namespace

Var kl_prior(Var mu, Var log_var) {
  if (mu.shape() != log_var.shape())
    throw ShapeError("kl_prior: mu " + shape_str(mu.shape()) + " vs log_var " + shape_str(log_var.shape()));
  // 1/2 sum(exp(lv) + mu^2 - 1 - lv)
  Var t = sub(add(exp(log_var), square(mu)), add_scalar(log_var, 1.0));
  return mul_scalar(sum(t), 0.5 * batch_scale(mu));
}

Var kl_prior(const LatentCode& code) { return kl_prior(code.mu, code.log_var); }

Var llike_pixel(Var x, Var x_tilde) {
  if (x.shape() != x_tilde.shape())
    throw ShapeError("llike_pixel: " + shape_str(x.shape()) + " vs " + shape_str(x_tilde.shape()));
  return mul_scalar(sum(square(sub(x, x_tilde))), 0.5 * batch_scale(x));
}

Var llike_feature(Var feat_x, Var feat_x_tilde) {
  if (feat_x.shape() != feat_x_tilde.shape())
    throw ShapeError("llike_feature: features from different layers or batches: " + shape_str(feat_x.shape()) +
                     " vs " + shape_str(feat_x_tilde.shape()));
  return mul_scalar(sum(square(sub(feat_x, feat_x_tilde))), 0.5 * batch_scale(feat_x));
}

Var gan_objective_dis(Var y_real, Var y_fake_prior, std::optional<Var> y_fake_recon) {
  check_probabilities(y_real, "gan_objective_dis");
  check_probabilities(y_fake_prior, "gan_objective_dis");
  if (y_real.shape() != y_fake_prior.shape()) throw ShapeError("gan_objective_dis: stream shapes differ");
  Var total = add(sum(log(clamped(y_real))), sum(log_one_minus(y_fake_prior)));
  if (y_fake_recon) {
    check_probabilities(*y_fake_recon, "gan_objective_dis");
    if (y_fake_recon->shape() != y_real.shape()) throw ShapeError("gan_objective_dis: stream shapes differ");
    total = add(total, sum(log_one_minus(*y_fake_recon)));
  }
  return mul_scalar(total, batch_scale(y_real));
}

Var gan_objective_dec(Var y_fake_prior, std::optional<Var> y_fake_recon, DecGanStyle style) {
  check_probabilities(y_fake_prior, "gan_objective_dec");
  if (y_fake_recon) check_probabilities(*y_fake_recon, "gan_objective_dec");
  auto term = [style](Var y) {
    return style == DecGanStyle::saturating ? sum(log_one_minus(y)) : neg(sum(log(clamped(y))));
  };
  Var total = term(y_fake_prior);
  if (y_fake_recon) {
    if (y_fake_recon->shape() != y_fake_prior.shape()) throw ShapeError("gan_objective_dec: stream shapes differ");
    total = add(total, term(*y_fake_recon));
  }
  return mul_scalar(total, batch_scale(y_fake_prior));
}

bool LossBundle::all_finite() const {
  return std::isfinite(l_prior) && std::isfinite(l_llike) && std::isfinite(l_gan_dis) && std::isfinite(l_gan_dec);
}

void check_finite(const LossBundle& l, long long step) {
  const std::pair<const char*, double> terms[] = {
      {"l_prior", l.l_prior}, {"l_llike", l.l_llike}, {"l_gan_dis", l.l_gan_dis}, {"l_gan_dec", l.l_gan_dec}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v))
      throw NumericalError(std::string("non-finite ") + name + " at step " + std::to_string(step));
}

}  // namespace vaegan
