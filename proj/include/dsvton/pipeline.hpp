#pragma once

// Two-scale generation: a low-resolution structural stage, bilinear
// upsampling, and a residual-guided high-resolution stage. Also hosts the
// noising-denoising refinement baseline and the resampling kernels.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "dsvton/denoiser.hpp"
#include "dsvton/diffusion.hpp"
#include "dsvton/image.hpp"
#include "dsvton/schedule.hpp"

namespace dsvton {

enum class StageMode { standard, residual, noising_denoising };

std::string to_string(StageMode mode);
StageMode parse_stage_mode(const std::string& text);

/// Area-average pooling over sigma x sigma blocks. sigma must divide both
/// dimensions. Each block mean is computed as first + mean(v - first) so that
/// constant blocks come out bit-exact.
Image downsample(const Image& img, int sigma);

/// Bilinear upsampling by an integer factor with half-pixel centres: output
/// pixel y samples the source at (y + 0.5) / sigma - 0.5, clamped to the
/// edge. Interpolation is a + f (b - a), so constant images stay bit-exact.
Image upsample(const Image& img, int sigma);

struct StageConfig {
  int sigma = 1;  // downsampling ratio relative to the full resolution
  int steps = 20;
  ResidualCoefficients coeffs = ResidualCoefficients::identity();
  StageMode mode = StageMode::standard;
  int tau = 0;  // starting timestep, noising_denoising only
  bool clip_x0 = true;  // clamp each DDIM x0 estimate to [-1, 1]

  void validate(const NoiseSchedule& sched) const;
};

struct PipelineConfig {
  StageConfig low{2, 20, ResidualCoefficients::identity(), StageMode::standard};
  StageConfig high{1, 20, ResidualCoefficients{0.5, 0.5}, StageMode::residual};
  std::uint64_t seed = 0;
};

/// The noise (or composite) predictor at timestep t; the denoiser bound to
/// one sample's person image and cached reference features.
using Predictor = std::function<Image(const Image& x_t, int t)>;

/// Encodes the garment once; `params` must outlive the returned predictor.
Predictor make_predictor(const Image& person, const Image& garment, const DenoiserParams& params);

/// Deterministic DDIM descent from x_start at t_start through
/// ddim_timesteps(t_start, steps) down to 0. With clip_x0 each step's x0
/// estimate is clamped to [-1, 1] and the prediction re-derived from it.
Image ddim_sample(Image x_start, int t_start, int steps, const Predictor& predict,
                  const NoiseSchedule& sched, bool clip_x0);

/// One stage of generation at the resolution of `person`.
///   standard:           x_T = eps
///   residual:           x_T = alpha eps + beta guide
///   noising_denoising:  x_tau = forward_standard(guide, tau, eps), then descend from tau
/// Output is clamped to [-1, 1]. eps is drawn from `seed`.
Image run_stage(const Image& person, const Image& garment, const Image* guide,
                const StageConfig& stage, const Predictor& predict, const NoiseSchedule& sched,
                std::uint64_t seed);

Image run_stage(const Image& person, const Image& garment, const Image* guide,
                const StageConfig& stage, const DenoiserParams& params,
                const NoiseSchedule& sched, std::uint64_t seed);

struct DualScaleResult {
  Image lr;  // (H / low.sigma) x (W / low.sigma)
  Image hr;  // H x W
  double lr_seconds = 0.0;  // wall time per stage
  double hr_seconds = 0.0;
};

/// Downsamples the inputs by low.sigma, runs the low stage, upsamples its
/// result into the high stage's guide and runs the high stage at full
/// resolution. Stage seeds are derived from cfg.seed.
DualScaleResult run_dual_scale(const Image& person, const Image& garment, const PipelineConfig& cfg,
                               const DenoiserParams& lr_params, const DenoiserParams& hr_params,
                               const NoiseSchedule& sched);

/// Stage seeds used by run_dual_scale.
std::uint64_t low_stage_seed(std::uint64_t seed);
std::uint64_t high_stage_seed(std::uint64_t seed);

/// Default start for the noising-denoising baseline: the timestep nearest
/// 20% of T (at least 1).
int default_tau(int T);

}  // namespace dsvton
