#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "dsvton/image.hpp"

namespace dsvton {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for a labelled sub-stream, e.g. derive_seed(seed, {step, item}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Image gaussian_image(Index height, Index width, Index channels, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Image img(height, width, channels);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = normal(rng);
  return img;
}

inline Image gaussian_like(const Image& shape, Rng& rng) {
  return gaussian_image(shape.height(), shape.width(), shape.channels(), rng);
}

}  // namespace dsvton
