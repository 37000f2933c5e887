#pragma once

// Scoring of try-on outputs against a stored evaluation set. Body and torso
// masks are regenerated here from the manifest seeds; nothing upstream of
// scoring sees them.
//
// CSV columns, in order:
//   method, sigma, hr_mode, alpha, beta, tau, n, pixel_mse, mmd, mmd_perm_std,
//   silhouette_iou, iou_empty, mae_inside_torso, mae_outside_torso,
//   outside_inside_ratio, mse_plain, mse_striped, mse_patterned, best
// Per-complexity columns are "nan" when the stratum is empty. `best` is 1 on
// the row with the lowest mmd (ties: lowest pixel_mse, then first).

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsvton/dataset.hpp"
#include "dsvton/denoiser.hpp"
#include "dsvton/image.hpp"

namespace dsvton {

struct EvalSet {
  std::vector<StoredSample> samples;
  std::vector<Mask> body_masks;
  std::vector<Mask> torso_masks;
  RowMatrix target_features;
  std::uint64_t feature_seed = 0;
};

/// Loads masks for a stored eval split and checks each stored target
/// against its regenerated counterpart.
EvalSet prepare_eval_set(StoredDataset dataset, std::uint64_t feature_seed);

struct EvalRow {
  std::string method;
  int sigma = 1;
  std::string hr_mode = "standard";
  double alpha = 1.0;
  double beta = 0.0;
  int tau = 0;
  std::size_t n = 0;
  double pixel_mse = 0.0;
  double mmd = 0.0;
  double mmd_perm_std = 0.0;
  double silhouette_iou = 0.0;
  std::size_t iou_empty = 0;
  double mae_inside = 0.0;
  double mae_outside = 0.0;
  double outside_inside_ratio = 0.0;
  std::array<double, 3> mse_by_complexity{};  // plain, striped, patterned
  bool best = false;
};

/// Produces the output for eval sample i given its per-sample seed.
using EvalSampler = std::function<Image(const StoredSample& sample, std::uint64_t seed)>;

/// Per-sample sampling seed, shared by every method for paired comparison.
std::uint64_t eval_sample_seed(std::uint64_t seed, std::uint64_t index);

std::vector<Image> run_eval_sampler(const EvalSet& set, std::uint64_t seed, const EvalSampler& sampler);

/// Fills every metric column of `row` (descriptive columns are left as set).
void score_outputs(EvalRow& row, const std::vector<Image>& outputs, const EvalSet& set,
                   double iou_threshold, int permutations = 50);

void mark_best(std::vector<EvalRow>& rows);

std::string eval_csv_header();
std::string eval_csv(const std::vector<EvalRow>& rows);

}  // namespace dsvton
