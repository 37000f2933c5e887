#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dsvton {

/// Timestep tables for a discrete diffusion process of length T.
///
/// Timesteps are 1-based: beta(t), alpha(t) and sigma(t) are defined for
/// t in [1, T]; alpha_bar(t) is defined for t in [0, T] with alpha_bar(0) = 1.
/// Immutable after construction.
class NoiseSchedule {
 public:
  /// Builds all derived tables from betas[0..T-1] (beta_1 .. beta_T).
  explicit NoiseSchedule(const std::vector<double>& betas);

  int T() const { return static_cast<int>(betas_.size()) - 1; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  double sigma(int t) const;

  /// beta_1 .. beta_T, the serialized form.
  std::vector<double> betas() const;

  /// True when alpha_bar(T) is small enough for the residual pipeline's
  /// x_T initialization to agree with the closed-form forward process.
  bool residual_ready() const { return alpha_bar(T()) <= kResidualAlphaBarGate; }

  static constexpr double kResidualAlphaBarGate = 1e-4;

 private:
  void check_step(int t) const;
  void check_index(int t) const;

  // Index 0 unused for beta/alpha/sigma.
  Eigen::VectorXd betas_;
  Eigen::VectorXd alphas_;
  Eigen::VectorXd alpha_bars_;
  Eigen::VectorXd sigmas_;
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

/// DDIM subsequence: `steps` timesteps with stride floor(T / steps) ending at T,
/// returned in increasing order.
std::vector<int> ddim_timesteps(int T, int steps);

}  // namespace dsvton
