#pragma once

// Plain-text run configuration: one `key = value` per line, '#' starts a
// comment. Every key must appear in config_keys(); unknown keys and
// out-of-domain values are rejected at load time.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsvton/denoiser.hpp"
#include "dsvton/pipeline.hpp"
#include "dsvton/schedule.hpp"
#include "dsvton/synthdata.hpp"
#include "dsvton/train.hpp"

namespace dsvton {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string description;
  bool affects_training;  // part of the checkpoint config hash
};

/// The published key table, in documentation order.
const std::vector<ConfigKey>& config_keys();

struct RunConfig {
  // schedule
  int T = 200;
  double beta_start = 1e-4;
  double beta_end = 0.1;
  // network
  NetworkConfig network;
  // stages
  int sigma = 2;
  int lr_steps = 20;
  int hr_steps = 20;
  double alpha = 0.5;
  double beta = 0.5;
  int tau = 0;  // 0: default_tau(T)
  StageMode hr_mode = StageMode::residual;
  bool dual_scale = true;
  bool clip_x0 = true;
  // training
  int batch_size = 8;
  double learning_rate = 2e-3;
  double weight_decay = 0.0;
  int warmup_steps = 50;
  bool cosine_decay = true;
  int max_steps = 1000;
  int checkpoint_every = 100;  // 0: only at the end
  // data
  int n_train = 2000;
  int n_eval = 100;
  int height = 64;
  int width = 64;
  std::array<double, 3> complexity_mix{1.0, 1.0, 1.0};
  GuideSource guide_source = GuideSource::model;
  bool perturb = false;
  // evaluation
  std::uint64_t feature_seed = 0;
  double iou_threshold = 0.05;
  // ablation grid
  std::vector<int> ablate_sigmas{1, 2, 4};
  std::vector<ResidualCoefficients> ablate_coeffs{{0.5, 0.5}, {2.0 / 3.0, 1.0 / 3.0},
                                                  {1.0 / 3.0, 2.0 / 3.0}, {1.0, 1.0}};
  bool ablate_nd = true;
  bool train_in_sweep = false;
  // run
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string lr_checkpoint;
  std::string hr_checkpoint;
  std::string person;
  std::string garment;

  NoiseSchedule schedule() const;
  int effective_tau() const;
  /// Checks cross-key constraints (divisibility, schedule gate, ...).
  void validate() const;

  TrainConfig train_config(std::uint64_t seed_offset = 0) const;
  PipelineConfig pipeline_config(std::uint64_t sample_seed) const;

  /// Canonical `key = value` text of every key, in table order.
  std::string canonical_text() const;
  /// FNV-1a over the canonical text of keys that affect training.
  std::uint64_t training_hash() const;
};

/// Parses text, applying values over the defaults, then validates.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);

/// Applies one assignment; throws ValidationError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

}  // namespace dsvton
