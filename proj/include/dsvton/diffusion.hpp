#pragma once

// Forward/reverse diffusion arithmetic in closed form, standard and
// residual-guided. All randomness (eps, z) is supplied by the caller.

#include <cmath>
#include <optional>
#include <string>
#include <type_traits>

#include "dsvton/errors.hpp"
#include "dsvton/image.hpp"
#include "dsvton/schedule.hpp"

namespace dsvton {

enum class DiffusionMode { standard, residual };

/// Balance between noise and the upsampled low-resolution guide in the
/// high-resolution stage's latent: x_T = alpha * eps + beta * guide.
struct ResidualCoefficients {
  double alpha = 0.5;
  double beta = 0.5;

  void validate() const {
    require(std::isfinite(alpha) && std::isfinite(beta), "residual coefficients must be finite");
    require(alpha >= 0.0 && beta >= 0.0, "residual coefficients must be nonnegative");
    require(alpha + beta > 0.0, "residual coefficients must not both be zero");
  }

  static ResidualCoefficients identity() { return {1.0, 0.0}; }
};

namespace detail {

inline void check_t(int t, const NoiseSchedule& sched, int lo) {
  if (t < lo || t > sched.T()) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(sched.T()) + "]");
  }
}

}  // namespace detail

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename Scalar>
ImageT<Scalar> forward_standard(const ImageT<Scalar>& x0, int t, const ImageT<Scalar>& eps,
                                const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_standard");
  detail::check_t(t, sched, 0);
  if (t == 0) return x0;
  const Scalar a = static_cast<Scalar>(std::sqrt(sched.alpha_bar(t)));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - sched.alpha_bar(t)));
  ImageT<Scalar> out(x0.height(), x0.width(), x0.channels());
  out.pixels() = a * x0.pixels() + b * eps.pixels();
  return out;
}

/// alpha * eps + beta * guide. Both the residual initial latent and the
/// residual training target.
template <typename Scalar>
ImageT<Scalar> composite_noise(const ImageT<Scalar>& eps, const ImageT<Scalar>& guide,
                               const ResidualCoefficients& coeffs) {
  require_same_shape(eps, guide, "composite_noise");
  coeffs.validate();
  ImageT<Scalar> out(eps.height(), eps.width(), eps.channels());
  out.pixels() = static_cast<Scalar>(coeffs.alpha) * eps.pixels() +
                 static_cast<Scalar>(coeffs.beta) * guide.pixels();
  return out;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) (alpha eps + beta guide)
template <typename Scalar>
ImageT<Scalar> forward_residual(const ImageT<Scalar>& x0, const ImageT<Scalar>& guide, int t,
                                const ImageT<Scalar>& eps, const NoiseSchedule& sched,
                                const ResidualCoefficients& coeffs) {
  require_same_shape(x0, guide, "forward_residual");
  require_same_shape(x0, eps, "forward_residual");
  detail::check_t(t, sched, 0);
  if (t == 0) return x0;
  return forward_standard(x0, t, composite_noise(eps, guide, coeffs), sched);
}

/// Starting latent of the high-resolution stage: alpha * eps + beta * guide.
template <typename Scalar>
ImageT<Scalar> init_residual_latent(const ImageT<Scalar>& guide, const ImageT<Scalar>& eps,
                                    const ResidualCoefficients& coeffs) {
  return composite_noise(eps, guide, coeffs);
}

/// One Markov step of the standard forward chain:
/// x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) eps_t.
template <typename Scalar>
ImageT<Scalar> forward_standard_step(const ImageT<Scalar>& x_prev, int t,
                                     const ImageT<Scalar>& eps_t, const NoiseSchedule& sched) {
  require_same_shape(x_prev, eps_t, "forward_standard_step");
  detail::check_t(t, sched, 1);
  ImageT<Scalar> out(x_prev.height(), x_prev.width(), x_prev.channels());
  out.pixels() = static_cast<Scalar>(std::sqrt(sched.alpha(t))) * x_prev.pixels() +
                 static_cast<Scalar>(std::sqrt(1.0 - sched.alpha(t))) * eps_t.pixels();
  return out;
}

/// One Markov step of the residual forward chain whose t-step marginal is
/// exactly forward_residual. The noise part advances like the standard chain
/// (variances add); the deterministic guide part advances by the increment
/// that keeps its coefficient at sqrt(1 - abar_t):
///   x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) alpha eps_t
///         + (sqrt(1 - abar_t) - sqrt(alpha_t (1 - abar_{t-1}))) beta guide.
template <typename Scalar>
ImageT<Scalar> forward_residual_step(const ImageT<Scalar>& x_prev, const ImageT<Scalar>& guide,
                                     int t, const ImageT<Scalar>& eps_t,
                                     const NoiseSchedule& sched,
                                     const ResidualCoefficients& coeffs) {
  require_same_shape(x_prev, guide, "forward_residual_step");
  require_same_shape(x_prev, eps_t, "forward_residual_step");
  detail::check_t(t, sched, 1);
  coeffs.validate();
  const double guide_increment = std::sqrt(1.0 - sched.alpha_bar(t)) -
                                 std::sqrt(sched.alpha(t) * (1.0 - sched.alpha_bar(t - 1)));
  ImageT<Scalar> out(x_prev.height(), x_prev.width(), x_prev.channels());
  out.pixels() =
      static_cast<Scalar>(std::sqrt(sched.alpha(t))) * x_prev.pixels() +
      static_cast<Scalar>(std::sqrt(1.0 - sched.alpha(t)) * coeffs.alpha) * eps_t.pixels() +
      static_cast<Scalar>(guide_increment * coeffs.beta) * guide.pixels();
  return out;
}

/// What the denoiser learns to predict: eps (standard) or
/// alpha * eps + beta * guide (residual).
template <typename Scalar>
ImageT<Scalar> training_target(DiffusionMode mode, const ImageT<Scalar>& eps,
                               const std::type_identity_t<ImageT<Scalar>>* guide,
                               const ResidualCoefficients& coeffs) {
  if (mode == DiffusionMode::standard) return eps;
  if (guide == nullptr) throw ValidationError("residual training target needs a guide image");
  return composite_noise(eps, *guide, coeffs);
}

/// Inverts the closed-form forward process with `pred` standing in for the
/// noise term: (x_t - sqrt(1 - abar_t) pred) / sqrt(abar_t).
template <typename Scalar>
ImageT<Scalar> predict_x0(const ImageT<Scalar>& x_t, const ImageT<Scalar>& pred, int t,
                          const NoiseSchedule& sched) {
  require_same_shape(x_t, pred, "predict_x0");
  detail::check_t(t, sched, 1);
  const double abar = sched.alpha_bar(t);
  if (abar < 1e-12) throw NumericalError("predict_x0: alpha_bar below 1e-12, inversion unstable");
  const Scalar inv = static_cast<Scalar>(1.0 / std::sqrt(abar));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - abar));
  ImageT<Scalar> out(x_t.height(), x_t.width(), x_t.channels());
  out.pixels() = (x_t.pixels() - b * pred.pixels()) * inv;
  return out;
}

/// Reverse step with raw coefficients:
/// x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) pred) / sqrt(alpha_t) + sigma_t z.
template <typename Scalar>
ImageT<Scalar> ddpm_step(const ImageT<Scalar>& x_t, const ImageT<Scalar>& pred, double alpha_t,
                         double alpha_bar_t, double sigma_t, const ImageT<Scalar>& z) {
  require_same_shape(x_t, pred, "ddpm_step");
  require_same_shape(x_t, z, "ddpm_step");
  require(alpha_t > 0.0 && alpha_t <= 1.0, "ddpm_step: alpha_t must lie in (0, 1]");
  const double noise_scale = alpha_bar_t < 1.0 ? (1.0 - alpha_t) / std::sqrt(1.0 - alpha_bar_t) : 0.0;
  ImageT<Scalar> out(x_t.height(), x_t.width(), x_t.channels());
  out.pixels() = (x_t.pixels() - static_cast<Scalar>(noise_scale) * pred.pixels()) *
                     static_cast<Scalar>(1.0 / std::sqrt(alpha_t)) +
                 static_cast<Scalar>(sigma_t) * z.pixels();
  return out;
}

template <typename Scalar>
ImageT<Scalar> ddpm_step(const ImageT<Scalar>& x_t, const ImageT<Scalar>& pred, int t,
                         const ImageT<Scalar>& z, const NoiseSchedule& sched) {
  detail::check_t(t, sched, 1);
  return ddpm_step(x_t, pred, sched.alpha(t), sched.alpha_bar(t), sched.sigma(t), z);
}

/// Deterministic DDIM jump from t_from to t_to < t_from. Returns x0_hat at t_to = 0.
template <typename Scalar>
ImageT<Scalar> ddim_step(const ImageT<Scalar>& x_t, const ImageT<Scalar>& pred, int t_from,
                         int t_to, const NoiseSchedule& sched) {
  detail::check_t(t_from, sched, 1);
  detail::check_t(t_to, sched, 0);
  if (t_to >= t_from) throw ValidationError("ddim_step needs t_to < t_from");
  ImageT<Scalar> x0_hat = predict_x0(x_t, pred, t_from, sched);
  if (t_to == 0) return x0_hat;
  const double abar_to = sched.alpha_bar(t_to);
  ImageT<Scalar> out(x_t.height(), x_t.width(), x_t.channels());
  out.pixels() = static_cast<Scalar>(std::sqrt(abar_to)) * x0_hat.pixels() +
                 static_cast<Scalar>(std::sqrt(1.0 - abar_to)) * pred.pixels();
  return out;
}

template <typename Scalar>
double mse_loss(const ImageT<Scalar>& pred, const ImageT<Scalar>& target) {
  require_same_shape(pred, target, "mse_loss");
  if (pred.size() == 0) return 0.0;
  return (pred.pixels().template cast<double>() - target.pixels().template cast<double>())
             .squaredNorm() /
         static_cast<double>(pred.size());
}

}  // namespace dsvton
