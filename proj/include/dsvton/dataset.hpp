#pragma once

// On-disk datasets: one directory per (stage, split) holding 8-bit PNM
// images and a text manifest. Manifest layout:
//
//   dsvton-dataset 1
//   stage=lr split=train seed=0 n=100 height=64 width=64 sigma=2 ...
//   index=0 body_seed=.. garment_seed=.. other_seed=.. complexity=striped person=00000_person.ppm ...
//
// The first two lines are the header; every following line is one sample.
// hr datasets add guide=<file> and guide_seed=<seed> to each sample line.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsvton/image.hpp"
#include "dsvton/synthdata.hpp"

namespace dsvton {

struct DatasetHeader {
  DatasetStage stage = DatasetStage::lr;
  DatasetSplit split = DatasetSplit::train;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  Index height = 64;
  Index width = 64;
  int sigma = 2;
  GuideSource guide_source = GuideSource::model;
  std::array<double, 3> complexity_mix{1.0, 1.0, 1.0};
  bool perturb = false;

  /// Options that regenerate the corpus with make_sample (no lr sampler).
  DatasetOptions options() const;
};

struct StoredSample {
  std::uint64_t index = 0;
  std::uint64_t body_seed = 0;
  std::uint64_t garment_seed = 0;
  std::uint64_t other_seed = 0;
  GarmentComplexity complexity = GarmentComplexity::plain;
  Image person;
  Image garment;
  Image target;
  std::optional<Image> guide;  // hr only, at (H / sigma) x (W / sigma)
};

struct StoredDataset {
  DatasetHeader header;
  std::vector<StoredSample> samples;
};

std::filesystem::path dataset_dir(const std::filesystem::path& root, DatasetStage stage,
                                  DatasetSplit split);

/// Writes images then the manifest; hr headers require every sample to carry
/// lr_result.
void write_dataset(const std::filesystem::path& dir, const DatasetHeader& header,
                   const std::vector<TryonSample>& samples);

StoredDataset read_dataset(const std::filesystem::path& dir);

}  // namespace dsvton
