#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dsvton/denoiser.hpp"
#include "dsvton/image.hpp"

namespace dsvton::testing {

inline Image random_image(std::mt19937_64& rng, Index h, Index w, Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Image img(h, w, c);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = n(rng);
  return img;
}

inline Image uniform_image(std::mt19937_64& rng, Index h, Index w, Index c, double lo = -1.0,
                           double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(h, w, c);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng);
  return img;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  return (a.pixels() - b.pixels()).cwiseAbs().maxCoeff();
}

inline NetworkConfig tiny_network() {
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.attn_level = 1;
  cfg.time_embed_dim = 8;
  return cfg;
}

/// A fresh empty directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("dsvton_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace dsvton::testing
