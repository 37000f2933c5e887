#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "dsvton/errors.hpp"

namespace dsvton {

using Index = Eigen::Index;

/// H x W x C grid stored row-major with the channel fastest: element (y, x, c)
/// lives at flat index (y * W + x) * C + c. Internally this is an (H*W) x C
/// matrix so per-pixel linear maps are plain matrix products.
template <typename Scalar>
class ImageT {
 public:
  using Pixels = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Flat = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstFlat = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

  ImageT() = default;
  ImageT(Index height, Index width, Index channels)
      : height_(height), width_(width), pixels_(Pixels::Zero(height * width, channels)) {
    require(height >= 0 && width >= 0 && channels >= 0, "negative image dimension");
  }

  static ImageT constant(Index height, Index width, Index channels, Scalar value) {
    ImageT img(height, width, channels);
    img.pixels_.setConstant(value);
    return img;
  }

  Index height() const { return height_; }
  Index width() const { return width_; }
  Index channels() const { return pixels_.cols(); }
  Index size() const { return pixels_.size(); }
  bool empty() const { return pixels_.size() == 0; }

  Scalar& operator()(Index y, Index x, Index c) { return pixels_(y * width_ + x, c); }
  Scalar operator()(Index y, Index x, Index c) const { return pixels_(y * width_ + x, c); }

  Pixels& pixels() { return pixels_; }
  const Pixels& pixels() const { return pixels_; }

  Flat flat() { return Flat(pixels_.data(), pixels_.size()); }
  ConstFlat flat() const { return ConstFlat(pixels_.data(), pixels_.size()); }

  Scalar* data() { return pixels_.data(); }
  const Scalar* data() const { return pixels_.data(); }

  bool same_shape(const ImageT& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels() == other.channels();
  }

  bool all_finite() const { return pixels_.allFinite(); }

  template <typename Other>
  ImageT<Other> cast() const {
    ImageT<Other> out(height_, width_, channels());
    out.pixels() = pixels_.template cast<Other>();
    return out;
  }

  friend bool operator==(const ImageT& a, const ImageT& b) {
    return a.same_shape(b) && std::equal(a.data(), a.data() + a.size(), b.data());
  }

 private:
  Index height_ = 0;
  Index width_ = 0;
  Pixels pixels_;
};

using Image = ImageT<double>;

/// Binary H x W grid (nonzero = inside).
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
std::string shape_string(const ImageT<Scalar>& img) {
  return std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
         std::to_string(img.channels());
}

template <typename Scalar>
void require_same_shape(const ImageT<Scalar>& a, const ImageT<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                          shape_string(b));
  }
}

/// The [-1, 1] <-> [0, 255] affine map used by PNM I/O: v = b / 127.5 - 1.
inline std::uint8_t unit_to_byte(double v) {
  const double b = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(b);
}

inline double byte_to_unit(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

/// Snaps every value to the nearest 8-bit level so a PNM round trip is lossless.
inline Image quantize_8bit(Image img) {
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = byte_to_unit(unit_to_byte(img.data()[i]));
  return img;
}

template <typename Scalar>
ImageT<Scalar> clamp_unit(ImageT<Scalar> img) {
  img.pixels() = img.pixels().cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
  return img;
}

}  // namespace dsvton
