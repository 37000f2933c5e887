#include "dsvton/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dsvton/errors.hpp"
#include "dsvton/random.hpp"

namespace dsvton {

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be > 0");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be >= 0");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(max_steps >= 0, "max_steps must be >= 0");
}

double TrainConfig::rate_at(std::int64_t step) const {
  if (step < warmup_steps) {
    return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (!cosine_decay || max_steps <= warmup_steps) return learning_rate;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) /
                                            static_cast<double>(max_steps - warmup_steps));
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainerState fresh_trainer(const NetworkConfig& cfg, std::uint64_t seed) {
  TrainerState s;
  s.params = init_params(cfg, seed);
  s.adam = AdamState::zeros(s.params.size());
  return s;
}

namespace {

TrainItem noised_item(const TrainExample& ex, int t, const Image& eps, const NoiseSchedule& sched,
                      const TrainSpec& spec) {
  TrainItem item;
  item.person = ex.person;
  item.garment = ex.garment;
  item.t = t;
  if (spec.mode == DiffusionMode::standard) {
    item.x_in = forward_standard(ex.x0, t, eps, sched);
    item.target = eps;
  } else {
    if (ex.guide.empty()) throw ValidationError("residual training example has no guide");
    item.x_in = forward_residual(ex.x0, ex.guide, t, eps, sched, spec.coeffs);
    item.target = training_target(spec.mode, eps, &ex.guide, spec.coeffs);
  }
  return item;
}

}  // namespace

std::vector<TrainItem> make_batch(const std::vector<TrainExample>& examples, std::int64_t step,
                                  const TrainConfig& cfg, const NoiseSchedule& sched,
                                  const TrainSpec& spec) {
  require(!examples.empty(), "training needs at least one example");
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(step)}));
  std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, sched.T());
  std::vector<TrainItem> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int b = 0; b < cfg.batch_size; ++b) {
    const TrainExample& ex = examples[pick(rng)];
    const int t = pick_t(rng);
    const Image eps = gaussian_like(ex.x0, rng);
    batch.push_back(noised_item(ex, t, eps, sched, spec));
  }
  return batch;
}

double train_step(TrainerState& state, const std::vector<TrainExample>& examples,
                  const NoiseSchedule& sched, const TrainSpec& spec, const TrainConfig& cfg) {
  const std::vector<TrainItem> batch = make_batch(examples, state.step, cfg, sched, spec);
  const LossAndGrad lg = loss_and_grad(batch, state.params);
  if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
    throw NumericalError("non-finite loss at step " + std::to_string(state.step) + " (loss " +
                         std::to_string(lg.loss) + ", learning rate " + std::to_string(cfg.rate_at(state.step)) +
                         ", parameter norm " + std::to_string(state.params.values.norm()) + ")");
  }
  adamw_step(state.params, lg.grad, state.adam, cfg.rate_at(state.step), cfg.weight_decay);
  ++state.step;
  return lg.loss;
}

void train(TrainerState& state, const std::vector<TrainExample>& examples,
           const NoiseSchedule& sched, const TrainSpec& spec, const TrainConfig& cfg,
           const std::function<void(std::int64_t, double)>& on_step) {
  cfg.validate();
  spec.coeffs.validate();
  while (state.step < cfg.max_steps) {
    const double loss = train_step(state, examples, sched, spec, cfg);
    if (on_step) on_step(state.step, loss);
  }
}

double heldout_loss(const DenoiserParams& params, const std::vector<TrainExample>& examples,
                    const NoiseSchedule& sched, const TrainSpec& spec, std::uint64_t seed,
                    int draws) {
  require(!examples.empty(), "held-out loss needs at least one example");
  require(draws >= 1, "held-out loss needs draws >= 1");
  std::vector<TrainItem> items;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Rng rng(derive_seed(seed, {0x4E1D, i}));
    std::uniform_int_distribution<int> pick_t(1, sched.T());
    for (int d = 0; d < draws; ++d) {
      const int t = pick_t(rng);
      const Image eps = gaussian_like(examples[i].x0, rng);
      items.push_back(noised_item(examples[i], t, eps, sched, spec));
    }
  }
  return batch_loss(items, params);
}

}  // namespace dsvton
