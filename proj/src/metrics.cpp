#include "dsvton/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsvton/errors.hpp"
#include "dsvton/parallel.hpp"
#include "dsvton/random.hpp"

namespace dsvton {

namespace {

// Channels of the pooled descriptor: colour plus gradient magnitude.
Eigen::VectorXd pooled_descriptor(const Image& img) {
  const Index h = img.height();
  const Index w = img.width();
  const Index c = img.channels();
  const Index per_cell = c + 1;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(kPoolGrid * kPoolGrid * per_cell);
  for (Index gy = 0; gy < kPoolGrid; ++gy) {
    const Index y0 = gy * h / kPoolGrid;
    const Index y1 = (gy + 1) * h / kPoolGrid;
    for (Index gx = 0; gx < kPoolGrid; ++gx) {
      const Index x0 = gx * w / kPoolGrid;
      const Index x1 = (gx + 1) * w / kPoolGrid;
      const Index base = (gy * kPoolGrid + gx) * per_cell;
      for (Index y = y0; y < y1; ++y) {
        for (Index x = x0; x < x1; ++x) {
          double grad2 = 0.0;
          for (Index k = 0; k < c; ++k) {
            out(base + k) += img(y, x, k);
            const double dx = img(y, std::min(x + 1, w - 1), k) - img(y, x, k);
            const double dy = img(std::min(y + 1, h - 1), x, k) - img(y, x, k);
            grad2 += dx * dx + dy * dy;
          }
          out(base + c) += std::sqrt(grad2);
        }
      }
      out.segment(base, per_cell) /= static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

double kernel_scale(const RowMatrix& a, double scale) {
  return scale > 0.0 ? scale : static_cast<double>(a.cols());
}

// Sum over rows i of sum_j K(a_i, b_j), skipping j == i when `skip_diagonal`.
double kernel_sum(const RowMatrix& a, const RowMatrix& b, double scale, bool skip_diagonal) {
  std::vector<double> rows(static_cast<std::size_t>(a.rows()), 0.0);
  parallel_for(rows.size(), [&](std::size_t i) {
    const Eigen::VectorXd dots = b * a.row(static_cast<Index>(i)).transpose();
    double s = 0.0;
    for (Index j = 0; j < dots.size(); ++j) {
      if (skip_diagonal && j == static_cast<Index>(i)) continue;
      s += std::pow(dots(j) / scale + 1.0, 3);
    }
    rows[i] = s;
  });
  return std::accumulate(rows.begin(), rows.end(), 0.0);
}

}  // namespace

RowMatrix feature_projection(Index channels, std::uint64_t seed) {
  const Index n = kPoolGrid * kPoolGrid * (channels + 1);
  Rng rng(derive_seed(seed, {0xFEA7}));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
  RowMatrix p(n, kFeatureDim);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = normal(rng);
  return p;
}

RowMatrix extract_features(const std::vector<Image>& images, std::uint64_t seed) {
  require(!images.empty(), "extract_features: empty image list");
  const Image& first = images.front();
  require(first.height() >= kPoolGrid && first.width() >= kPoolGrid,
          "extract_features: images must be at least 8x8");
  for (const Image& img : images) {
    require(img.same_shape(first), "extract_features: images differ in shape");
    require(img.all_finite(), "extract_features: non-finite image");
  }
  const RowMatrix proj = feature_projection(first.channels(), seed);
  RowMatrix pooled(static_cast<Index>(images.size()), proj.rows());
  parallel_for(images.size(), [&](std::size_t i) {
    pooled.row(static_cast<Index>(i)) = pooled_descriptor(images[i]).transpose();
  });
  RowMatrix out = pooled * proj;
  return out;
}

double mmd_unbiased(const RowMatrix& a, const RowMatrix& b, double scale) {
  require(a.rows() >= 2 && b.rows() >= 2, "mmd_unbiased: each set needs at least 2 rows");
  require(a.cols() == b.cols(), "mmd_unbiased: feature dimensions differ");
  const double s = kernel_scale(a, scale);
  const double m = static_cast<double>(a.rows());
  const double n = static_cast<double>(b.rows());
  const double kaa = kernel_sum(a, a, s, true) / (m * (m - 1.0));
  const double kbb = kernel_sum(b, b, s, true) / (n * (n - 1.0));
  const double kab = kernel_sum(a, b, s, false) / (m * n);
  return kaa + kbb - 2.0 * kab;
}

double mmd_permutation_std(const RowMatrix& a, const RowMatrix& b, int permutations,
                           std::uint64_t seed, double scale) {
  require(permutations >= 2, "mmd_permutation_std: need at least 2 permutations");
  require(a.cols() == b.cols(), "mmd_permutation_std: feature dimensions differ");
  RowMatrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<Index> order(static_cast<std::size_t>(pooled.rows()));
  Rng rng(seed);
  std::vector<double> values;
  for (int p = 0; p < permutations; ++p) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    RowMatrix pa(a.rows(), a.cols());
    RowMatrix pb(b.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i) pa.row(i) = pooled.row(order[static_cast<std::size_t>(i)]);
    for (Index i = 0; i < b.rows(); ++i) {
      pb.row(i) = pooled.row(order[static_cast<std::size_t>(a.rows() + i)]);
    }
    values.push_back(mmd_unbiased(pa, pb, scale));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size() - 1));
}

double pixel_mse(const Image& result, const Image& target) {
  require_same_shape(result, target, "pixel_mse");
  require(!result.empty(), "pixel_mse: empty images");
  return (result.pixels() - target.pixels()).squaredNorm() / static_cast<double>(result.size());
}

Mask foreground_mask(const Image& img, double threshold, double background) {
  Mask m = Mask::Zero(img.height(), img.width());
  for (Index y = 0; y < img.height(); ++y) {
    for (Index x = 0; x < img.width(); ++x) {
      for (Index c = 0; c < img.channels(); ++c) {
        if (std::abs(img(y, x, c) - background) > threshold) {
          m(y, x) = 1;
          break;
        }
      }
    }
  }
  return m;
}

IouResult mask_iou(const Mask& a, const Mask& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mask_iou: mask shapes differ");
  const auto ia = a != 0;
  const auto ib = b != 0;
  const double inter = static_cast<double>((ia && ib).count());
  const double uni = static_cast<double>((ia || ib).count());
  if (uni == 0.0) return {0.0, true};
  return {inter / uni, false};
}

IouResult silhouette_iou(const Image& result, const Mask& body_mask, double threshold,
                         double background) {
  require(result.height() == body_mask.rows() && result.width() == body_mask.cols(),
          "silhouette_iou: image and mask sizes differ");
  return mask_iou(foreground_mask(result, threshold, background), body_mask);
}

double masked_mae(const Image& a, const Image& b, const Mask& mask, bool inside) {
  require_same_shape(a, b, "masked_mae");
  require(a.height() == mask.rows() && a.width() == mask.cols(), "masked_mae: mask size differs");
  double sum = 0.0;
  Index count = 0;
  for (Index y = 0; y < a.height(); ++y) {
    for (Index x = 0; x < a.width(); ++x) {
      if ((mask(y, x) != 0) != inside) continue;
      for (Index c = 0; c < a.channels(); ++c) sum += std::abs(a(y, x, c) - b(y, x, c));
      count += a.channels();
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace dsvton
