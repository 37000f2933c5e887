#pragma once

// Denoiser training: batch assembly from clean examples, AdamW steps, and a
// fixed-draw held-out loss. Every random draw of step k comes from
// derive_seed(seed, {k}), so a run resumed at step k continues bitwise
// identically to an uninterrupted one.

#include <cstdint>
#include <functional>
#include <vector>

#include "dsvton/denoiser.hpp"
#include "dsvton/diffusion.hpp"
#include "dsvton/schedule.hpp"

namespace dsvton {

/// A clean training pair at the stage's resolution. `guide` is the upsampled
/// low-resolution result (residual stages only; empty otherwise).
struct TrainExample {
  Image x0;
  Image person;
  Image garment;
  Image guide;
};

struct TrainSpec {
  DiffusionMode mode = DiffusionMode::standard;
  ResidualCoefficients coeffs = ResidualCoefficients::identity();
};

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 2e-3;
  double weight_decay = 0.0;
  int warmup_steps = 50;      // linear learning-rate ramp
  bool cosine_decay = true;  // after warmup, anneal to 0 at max_steps
  int max_steps = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  double rate_at(std::int64_t step) const;
};

struct TrainerState {
  DenoiserParams params;
  AdamState adam;
  std::int64_t step = 0;  // completed optimizer steps
};

TrainerState fresh_trainer(const NetworkConfig& cfg, std::uint64_t seed);

/// Noised inputs and targets for step `step`: examples drawn with
/// replacement, t uniform in [1, T], eps standard normal.
std::vector<TrainItem> make_batch(const std::vector<TrainExample>& examples, std::int64_t step,
                                  const TrainConfig& cfg, const NoiseSchedule& sched,
                                  const TrainSpec& spec);

/// One optimizer step; returns the batch loss before the update. A
/// non-finite loss or gradient throws NumericalError and leaves state intact.
double train_step(TrainerState& state, const std::vector<TrainExample>& examples,
                  const NoiseSchedule& sched, const TrainSpec& spec, const TrainConfig& cfg);

/// Steps until state.step == cfg.max_steps. on_step receives (step, loss)
/// after each update.
void train(TrainerState& state, const std::vector<TrainExample>& examples,
           const NoiseSchedule& sched, const TrainSpec& spec, const TrainConfig& cfg,
           const std::function<void(std::int64_t, double)>& on_step = {});

/// Mean loss over `draws` fixed (t, eps) draws per example, seeded by `seed`.
double heldout_loss(const DenoiserParams& params, const std::vector<TrainExample>& examples,
                    const NoiseSchedule& sched, const TrainSpec& spec, std::uint64_t seed,
                    int draws = 4);

}  // namespace dsvton
