#include "dsvton/schedule.hpp"

#include <cmath>
#include <string>

#include "dsvton/errors.hpp"

namespace dsvton {

NoiseSchedule::NoiseSchedule(const std::vector<double>& betas) {
  require(!betas.empty(), "schedule needs T >= 1");
  const Eigen::Index n = static_cast<Eigen::Index>(betas.size());
  betas_ = Eigen::VectorXd::Zero(n + 1);
  alphas_ = Eigen::VectorXd::Ones(n + 1);
  alpha_bars_ = Eigen::VectorXd::Ones(n + 1);
  sigmas_ = Eigen::VectorXd::Zero(n + 1);
  for (Eigen::Index t = 1; t <= n; ++t) {
    const double b = betas[static_cast<std::size_t>(t - 1)];
    if (!std::isfinite(b) || b <= 0.0 || b >= 1.0) {
      throw ValidationError("beta_" + std::to_string(t) + " must lie in (0, 1)");
    }
    betas_(t) = b;
    alphas_(t) = 1.0 - b;
    alpha_bars_(t) = alpha_bars_(t - 1) * alphas_(t);
    sigmas_(t) = std::sqrt(b);
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T()) throw ValidationError("timestep " + std::to_string(t) + " outside [1, T]");
}

void NoiseSchedule::check_index(int t) const {
  if (t < 0 || t > T()) throw ValidationError("timestep " + std::to_string(t) + " outside [0, T]");
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return betas_(t);
}

double NoiseSchedule::alpha(int t) const {
  check_step(t);
  return alphas_(t);
}

double NoiseSchedule::alpha_bar(int t) const {
  check_index(t);
  return alpha_bars_(t);
}

double NoiseSchedule::sigma(int t) const {
  check_step(t);
  return sigmas_(t);
}

std::vector<double> NoiseSchedule::betas() const {
  return std::vector<double>(betas_.data() + 1, betas_.data() + betas_.size());
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  require(T >= 1, "schedule needs T >= 1");
  require(std::isfinite(beta_start) && std::isfinite(beta_end), "beta endpoints must be finite");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "beta endpoints must satisfy 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(T));
  if (T == 1) {
    betas[0] = beta_start;
  } else {
    for (int i = 0; i < T; ++i) {
      betas[static_cast<std::size_t>(i)] =
          beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
    }
  }
  return NoiseSchedule(betas);
}

std::vector<int> ddim_timesteps(int T, int steps) {
  require(T >= 1, "T must be positive");
  require(steps >= 1 && steps <= T, "DDIM steps must lie in [1, T]");
  const int stride = T / steps;
  std::vector<int> out(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) out[static_cast<std::size_t>(steps - 1 - k)] = T - k * stride;
  return out;
}

}  // namespace dsvton
