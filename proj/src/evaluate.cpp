#include "dsvton/evaluate.hpp"

#include <cmath>
#include <limits>

#include "dsvton/errors.hpp"
#include "dsvton/io.hpp"
#include "dsvton/metrics.hpp"
#include "dsvton/parallel.hpp"
#include "dsvton/random.hpp"

namespace dsvton {

EvalSet prepare_eval_set(StoredDataset dataset, std::uint64_t feature_seed) {
  require(dataset.samples.size() >= 2, "evaluation needs at least 2 samples");
  require(dataset.header.split == DatasetSplit::eval,
          "evaluation set must come from the eval split (disjoint from training seeds)");
  EvalSet set;
  set.feature_seed = feature_seed;
  const DatasetOptions opts = dataset.header.options();
  const std::size_t n = dataset.samples.size();
  set.body_masks.resize(n);
  set.torso_masks.resize(n);
  std::vector<int> mismatch(n, 0);
  parallel_for(n, [&](std::size_t i) {
    const StoredSample& s = dataset.samples[i];
    TryonSample regen = make_sample(dataset.header.seed, s.index, opts);
    mismatch[i] = regen.body_seed != s.body_seed || !(regen.target.pixels() == s.target.pixels());
    set.body_masks[i] = std::move(regen.body_mask);
    set.torso_masks[i] = std::move(regen.torso_mask);
  });
  for (std::size_t i = 0; i < n; ++i) {
    if (mismatch[i]) {
      throw ValidationError("eval sample " + std::to_string(dataset.samples[i].index) +
                            " does not match its manifest seeds");
    }
  }
  std::vector<Image> targets;
  targets.reserve(n);
  for (const StoredSample& s : dataset.samples) targets.push_back(s.target);
  set.target_features = extract_features(targets, feature_seed);
  set.samples = std::move(dataset.samples);
  return set;
}

std::uint64_t eval_sample_seed(std::uint64_t seed, std::uint64_t index) {
  return derive_seed(seed, {0xE7A1, index});
}

std::vector<Image> run_eval_sampler(const EvalSet& set, std::uint64_t seed, const EvalSampler& sampler) {
  std::vector<Image> out(set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    out[i] = sampler(set.samples[i], eval_sample_seed(seed, set.samples[i].index));
  }
  return out;
}

void score_outputs(EvalRow& row, const std::vector<Image>& outputs, const EvalSet& set,
                   double iou_threshold, int permutations) {
  const std::size_t n = set.samples.size();
  require(outputs.size() == n, "score_outputs: one output per eval sample required");
  row.n = n;
  double mse = 0.0;
  double iou = 0.0;
  double inside = 0.0;
  double outside = 0.0;
  std::size_t empty = 0;
  std::array<double, 3> strat_sum{};
  std::array<std::size_t, 3> strat_n{};
  for (std::size_t i = 0; i < n; ++i) {
    const StoredSample& s = set.samples[i];
    require_same_shape(outputs[i], s.target, "evaluation output");
    const double e = pixel_mse(outputs[i], s.target);
    mse += e;
    const auto k = static_cast<std::size_t>(s.complexity);
    strat_sum[k] += e;
    ++strat_n[k];
    const IouResult r = silhouette_iou(outputs[i], set.body_masks[i], iou_threshold);
    iou += r.iou;
    empty += r.empty ? 1 : 0;
    inside += masked_mae(outputs[i], s.target, set.torso_masks[i], true);
    outside += masked_mae(outputs[i], s.target, set.torso_masks[i], false);
  }
  const double dn = static_cast<double>(n);
  row.pixel_mse = mse / dn;
  row.silhouette_iou = iou / dn;
  row.iou_empty = empty;
  row.mae_inside = inside / dn;
  row.mae_outside = outside / dn;
  row.outside_inside_ratio =
      row.mae_inside > 0.0 ? row.mae_outside / row.mae_inside : std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < 3; ++k) {
    row.mse_by_complexity[k] = strat_n[k] ? strat_sum[k] / static_cast<double>(strat_n[k])
                                          : std::numeric_limits<double>::quiet_NaN();
  }
  const RowMatrix features = extract_features(outputs, set.feature_seed);
  row.mmd = mmd_unbiased(features, set.target_features);
  row.mmd_perm_std =
      mmd_permutation_std(features, set.target_features, permutations, derive_seed(set.feature_seed, {0x9E}));
}

void mark_best(std::vector<EvalRow>& rows) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].best = false;
    const EvalRow& r = rows[i];
    const EvalRow& b = rows[best];
    if (r.mmd < b.mmd || (r.mmd == b.mmd && r.pixel_mse < b.pixel_mse)) best = i;
  }
  if (!rows.empty()) rows[best].best = true;
}

std::string eval_csv_header() {
  return "method,sigma,hr_mode,alpha,beta,tau,n,pixel_mse,mmd,mmd_perm_std,silhouette_iou,iou_empty,"
         "mae_inside_torso,mae_outside_torso,outside_inside_ratio,mse_plain,mse_striped,mse_patterned,best\n";
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = eval_csv_header();
  for (const EvalRow& r : rows) {
    const std::vector<std::string> cells{
        r.method,
        std::to_string(r.sigma),
        r.hr_mode,
        format_number(r.alpha),
        format_number(r.beta),
        std::to_string(r.tau),
        std::to_string(r.n),
        format_number(r.pixel_mse),
        format_number(r.mmd),
        format_number(r.mmd_perm_std),
        format_number(r.silhouette_iou),
        std::to_string(r.iou_empty),
        format_number(r.mae_inside),
        format_number(r.mae_outside),
        format_number(r.outside_inside_ratio),
        format_number(r.mse_by_complexity[0]),
        format_number(r.mse_by_complexity[1]),
        format_number(r.mse_by_complexity[2]),
        r.best ? "1" : "0"};
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += "\n";
  }
  return out;
}

}  // namespace dsvton
