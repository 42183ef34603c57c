#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "vaegan/graph.hpp"
#include "vaegan/models.hpp"

namespace vaegan {

// All terms are batch means. Gaussian log-likelihoods drop their additive
// normalization constant, so they are half squared distances.

/// Closed-form KL(q(z|x) || N(0, I)) for diagonal Gaussian q.
Var kl_prior(const LatentCode& code);
Var kl_prior(Var mu, Var log_var);

/// Half squared pixel distance (identity-covariance Gaussian).
Var llike_pixel(Var x, Var x_tilde);

/// Half squared distance between discriminator features at the tap layer.
Var llike_feature(Var feat_x, Var feat_x_tilde);

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

/// log Dis(x) + log(1 - Dis(Dec(z_p))) [+ log(1 - Dis(Dec(Enc(x))))], batch
/// mean. The discriminator ascends this value.
Var gan_objective_dis(Var y_real, Var y_fake_prior, std::optional<Var> y_fake_recon = std::nullopt);

enum class DecGanStyle { saturating, non_saturating };

/// Decoder's adversarial loss (descended). Saturating: sum over fake streams
/// of log(1 - y). Non-saturating: sum over fake streams of -log(y). Batch mean.
Var gan_objective_dec(Var y_fake_prior, std::optional<Var> y_fake_recon, DecGanStyle style);

enum class LlikeVariant { pixel, dis_l };
enum class GanTerms { two, three };

struct LossBundle {
  double l_prior = 0.0;
  double l_llike = 0.0;
  double l_gan_dis = 0.0;
  double l_gan_dec = 0.0;
  LlikeVariant llike = LlikeVariant::dis_l;
  GanTerms gan_terms = GanTerms::three;
  DecGanStyle dec_style = DecGanStyle::non_saturating;

  bool all_finite() const;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws NumericalError naming the first non-finite term.
void check_finite(const LossBundle& losses, long long step);

}  // namespace vaegan
