#include "dsvton/pipeline.hpp"

#include <chrono>

#include <algorithm>
#include <cmath>
#include <memory>

#include "dsvton/errors.hpp"
#include "dsvton/random.hpp"

namespace dsvton {

std::string to_string(StageMode mode) {
  switch (mode) {
    case StageMode::standard:
      return "standard";
    case StageMode::residual:
      return "residual";
    case StageMode::noising_denoising:
      return "noising_denoising";
  }
  return "unknown";
}

StageMode parse_stage_mode(const std::string& text) {
  if (text == "standard") return StageMode::standard;
  if (text == "residual") return StageMode::residual;
  if (text == "noising_denoising" || text == "nd") return StageMode::noising_denoising;
  throw ValidationError("unknown stage mode '" + text + "'");
}

Image downsample(const Image& img, int sigma) {
  require(sigma >= 1, "downsample: sigma must be >= 1");
  if (img.height() % sigma != 0 || img.width() % sigma != 0) {
    throw ValidationError("downsample: sigma " + std::to_string(sigma) + " does not divide " +
                          shape_string(img));
  }
  if (sigma == 1) return img;
  const Index h = img.height() / sigma;
  const Index w = img.width() / sigma;
  const double inv = 1.0 / static_cast<double>(sigma * sigma);
  Image out(h, w, img.channels());
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < img.channels(); ++c) {
        const double anchor = img(y * sigma, x * sigma, c);
        double dev = 0.0;
        for (int dy = 0; dy < sigma; ++dy) {
          for (int dx = 0; dx < sigma; ++dx) dev += img(y * sigma + dy, x * sigma + dx, c) - anchor;
        }
        out(y, x, c) = anchor + dev * inv;
      }
    }
  }
  return out;
}

namespace {

struct Tap {
  Index lo;
  Index hi;
  double f;
};

Tap source_tap(Index i, int sigma, Index n) {
  const double s = (static_cast<double>(i) + 0.5) / sigma - 0.5;
  const double clamped = std::clamp(s, 0.0, static_cast<double>(n - 1));
  const Index lo = static_cast<Index>(std::floor(clamped));
  const Index hi = std::min(lo + 1, n - 1);
  return {lo, hi, clamped - static_cast<double>(lo)};
}

}  // namespace

Image upsample(const Image& img, int sigma) {
  require(sigma >= 1, "upsample: sigma must be >= 1");
  if (sigma == 1) return img;
  require(!img.empty(), "upsample: empty image");
  const Index h = img.height() * sigma;
  const Index w = img.width() * sigma;
  Image out(h, w, img.channels());
  for (Index y = 0; y < h; ++y) {
    const Tap ty = source_tap(y, sigma, img.height());
    for (Index x = 0; x < w; ++x) {
      const Tap tx = source_tap(x, sigma, img.width());
      for (Index c = 0; c < img.channels(); ++c) {
        const double a0 = img(ty.lo, tx.lo, c);
        const double a1 = img(ty.lo, tx.hi, c);
        const double b0 = img(ty.hi, tx.lo, c);
        const double b1 = img(ty.hi, tx.hi, c);
        const double top = a0 + tx.f * (a1 - a0);
        const double bottom = b0 + tx.f * (b1 - b0);
        out(y, x, c) = top + ty.f * (bottom - top);
      }
    }
  }
  return out;
}

void StageConfig::validate(const NoiseSchedule& sched) const {
  require(sigma >= 1, "stage sigma must be >= 1");
  require(steps >= 1, "stage steps must be >= 1");
  coeffs.validate();
  if (mode == StageMode::noising_denoising) {
    require(tau >= 1 && tau <= sched.T(), "noising_denoising tau must lie in [1, T]");
    require(steps <= tau, "noising_denoising needs steps <= tau");
  } else {
    require(steps <= sched.T(), "stage steps must not exceed T");
  }
  if (mode == StageMode::residual) {
    require(sched.residual_ready(),
            "residual stage needs alpha_bar(T) <= 1e-4 so its x_T initialization matches "
            "the forward process");
  }
}

Predictor make_predictor(const Image& person, const Image& garment, const DenoiserParams& params) {
  auto ref = std::make_shared<const ReferenceFeatures>(reference_encode(garment, params));
  return [person, ref, &params](const Image& x_t, int t) {
    return predict_noise(x_t, person, t, *ref, params);
  };
}

Image ddim_sample(Image x, int t_start, int steps, const Predictor& predict,
                  const NoiseSchedule& sched, bool clip_x0) {
  const std::vector<int> ts = ddim_timesteps(t_start, steps);
  for (std::size_t i = ts.size(); i-- > 0;) {
    const int t = ts[i];
    const int t_to = i == 0 ? 0 : ts[i - 1];
    Image pred = predict(x, t);
    require_same_shape(x, pred, "predictor output");
    if (!pred.all_finite()) throw NumericalError("predictor produced non-finite values");
    if (clip_x0) {
      const Image x0 = predict_x0(x, pred, t, sched);
      const Image clipped = clamp_unit(x0);
      if (!(clipped == x0)) {
        const double a = std::sqrt(sched.alpha_bar(t));
        const double b = std::sqrt(1.0 - sched.alpha_bar(t));
        pred.pixels() = (x.pixels() - a * clipped.pixels()) / b;
      }
    }
    x = ddim_step(x, pred, t, t_to, sched);
  }
  if (!x.all_finite()) throw NumericalError("sampler produced non-finite values");
  return x;
}

Image run_stage(const Image& person, const Image& garment, const Image* guide,
                const StageConfig& stage, const Predictor& predict, const NoiseSchedule& sched,
                std::uint64_t seed) {
  stage.validate(sched);
  require(person.height() == garment.height() && person.width() == garment.width(),
          "run_stage: person " + shape_string(person) + " and garment " + shape_string(garment) +
              " differ in resolution");
  Rng rng(seed);
  const Image eps = gaussian_like(person, rng);
  switch (stage.mode) {
    case StageMode::standard:
      return clamp_unit(ddim_sample(eps, sched.T(), stage.steps, predict, sched, stage.clip_x0));
    case StageMode::residual: {
      if (guide == nullptr) throw ValidationError("residual stage needs a guide image");
      const Image x_T = init_residual_latent(*guide, eps, stage.coeffs);
      return clamp_unit(ddim_sample(x_T, sched.T(), stage.steps, predict, sched, stage.clip_x0));
    }
    case StageMode::noising_denoising: {
      if (guide == nullptr) throw ValidationError("noising_denoising stage needs a guide image");
      const Image x_tau = forward_standard(*guide, stage.tau, eps, sched);
      return clamp_unit(ddim_sample(x_tau, stage.tau, stage.steps, predict, sched, stage.clip_x0));
    }
  }
  throw ValidationError("unknown stage mode");
}

Image run_stage(const Image& person, const Image& garment, const Image* guide,
                const StageConfig& stage, const DenoiserParams& params,
                const NoiseSchedule& sched, std::uint64_t seed) {
  return run_stage(person, garment, guide, stage, make_predictor(person, garment, params), sched,
                   seed);
}

std::uint64_t low_stage_seed(std::uint64_t seed) { return derive_seed(seed, {1}); }
std::uint64_t high_stage_seed(std::uint64_t seed) { return derive_seed(seed, {2}); }

DualScaleResult run_dual_scale(const Image& person, const Image& garment, const PipelineConfig& cfg,
                               const DenoiserParams& lr_params, const DenoiserParams& hr_params,
                               const NoiseSchedule& sched) {
  require(cfg.high.sigma == 1, "run_dual_scale: the high stage runs at full resolution");
  const Image person_lr = downsample(person, cfg.low.sigma);
  const Image garment_lr = downsample(garment, cfg.low.sigma);
  using Clock = std::chrono::steady_clock;
  DualScaleResult out;
  const auto t0 = Clock::now();
  out.lr = run_stage(person_lr, garment_lr, nullptr, cfg.low, lr_params, sched,
                     low_stage_seed(cfg.seed));
  const auto t1 = Clock::now();
  const Image guide = upsample(out.lr, cfg.low.sigma);
  out.hr = run_stage(person, garment, &guide, cfg.high, hr_params, sched,
                     high_stage_seed(cfg.seed));
  out.lr_seconds = std::chrono::duration<double>(t1 - t0).count();
  out.hr_seconds = std::chrono::duration<double>(Clock::now() - t1).count();
  return out;
}

int default_tau(int T) {
  require(T >= 1, "default_tau: T must be >= 1");
  return std::max(1, static_cast<int>(std::lround(0.2 * T)));
}

}  // namespace dsvton
