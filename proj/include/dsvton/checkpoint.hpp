#pragma once

// Binary checkpoint of one trained stage. Layout (little-endian):
//   "DSVT" | i64 version | str stage | i64 x7 NetworkConfig
//   | i64 T | f64 betas[T] | i64 sigma | str mode | f64 alpha | f64 beta
//   | i64 n | f64 params[n] | f64 m[n] | f64 v[n] | i64 adam_step
//   | f64 beta1 | f64 beta2 | f64 eps | i64 train_step | i64 config_hash
// Loading then saving reproduces the file byte for byte.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsvton/schedule.hpp"
#include "dsvton/synthdata.hpp"
#include "dsvton/train.hpp"

namespace dsvton {

struct Checkpoint {
  static constexpr std::int64_t kVersion = 1;

  DatasetStage stage = DatasetStage::lr;
  std::vector<double> betas;  // beta_1 .. beta_T
  int sigma = 1;              // resolution divisor the stage was trained at
  TrainSpec spec;
  TrainerState trainer;
  std::uint64_t config_hash = 0;

  NoiseSchedule schedule() const { return NoiseSchedule(betas); }
  const DenoiserParams& params() const { return trainer.params; }
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ValidationError unless the checkpoint carries `expected`.
void require_stage(const Checkpoint& ckpt, DatasetStage expected, const std::string& slot);

}  // namespace dsvton
