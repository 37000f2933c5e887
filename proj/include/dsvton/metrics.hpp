#pragma once

// Desk-scale evaluation: random-projection image features with a KID-style
// unbiased MMD^2, paired pixel error, and silhouette/region measures.

#include <cstdint>
#include <vector>

#include "dsvton/denoiser.hpp"
#include "dsvton/image.hpp"

namespace dsvton {

inline constexpr Index kFeatureDim = 64;
inline constexpr Index kPoolGrid = 8;

/// One row per image. Each image is average-pooled on an 8 x 8 grid of
/// cells (colour channels plus gradient magnitude), then projected to 64
/// dimensions by a Gaussian matrix drawn from `seed`. Images must share a
/// resolution of at least 8 x 8.
RowMatrix extract_features(const std::vector<Image>& images, std::uint64_t seed);

/// The seed-determined projection, (pooled length) x 64.
RowMatrix feature_projection(Index channels, std::uint64_t seed);

/// Unbiased MMD^2 with k(x, y) = (x.y / scale + 1)^3. scale defaults to the
/// feature dimension. Within-set diagonals are excluded, so the value can be
/// slightly negative.
double mmd_unbiased(const RowMatrix& a, const RowMatrix& b, double scale = 0.0);

/// Standard deviation of mmd_unbiased over random re-splits of the pooled
/// rows into groups of the original sizes.
double mmd_permutation_std(const RowMatrix& a, const RowMatrix& b, int permutations,
                           std::uint64_t seed, double scale = 0.0);

double pixel_mse(const Image& result, const Image& target);

struct IouResult {
  double iou = 0.0;
  bool empty = false;  // both masks empty; iou is reported as 0
};

/// Foreground: any channel differs from the background level by more than
/// `threshold`.
Mask foreground_mask(const Image& img, double threshold, double background = -1.0);

IouResult mask_iou(const Mask& a, const Mask& b);

IouResult silhouette_iou(const Image& result, const Mask& body_mask, double threshold,
                         double background = -1.0);

/// Mean absolute error over all channels of pixels where mask == inside.
/// Returns 0 when the region is empty.
double masked_mae(const Image& a, const Image& b, const Mask& mask, bool inside);

}  // namespace dsvton
