#pragma once

// Procedural try-on corpus: bodies built from ellipses and capsules, flat-laid
// garments with controllable texture complexity, and an analytic "wearing"
// render that copies garment texture onto the torso.
//
// All images use background -1 and are snapped to the 8-bit grid.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsvton/image.hpp"

namespace dsvton {

enum class GarmentComplexity { plain, striped, patterned };

std::string to_string(GarmentComplexity c);
GarmentComplexity parse_complexity(const std::string& text);

inline constexpr double kBackground = -1.0;

struct Body {
  Image appearance;  // bare body on background; the torso shows skin
  Mask body_mask;    // every body pixel
  Mask torso_mask;   // region a garment covers
  double torso_cy = 0.0;
  double torso_cx = 0.0;
};

/// Deterministic per seed. Height and width must be >= 16.
Body gen_body(std::uint64_t seed, Index height, Index width);

/// Flat-laid shirt on background. plain: one colour; striped: two-tone
/// stripes with period 8..16 px and random phase; patterned: checkerboard of
/// 3 px squares (6 px wavelength) at high contrast.
Image gen_garment(std::uint64_t seed, Index height, Index width, GarmentComplexity complexity);

/// Garment pixels inside the shirt silhouette (excludes background).
Mask garment_mask(Index height, Index width);

/// Torso pixel (y, x) takes garment(gy, gx) where (gy, gx) is (y, x) shifted
/// so the torso centre lands on the garment centre. Other pixels keep the
/// body appearance.
Image render_wearing(const Body& body, const Image& garment);

enum class DatasetStage { lr, hr };
enum class DatasetSplit { train, eval };
enum class GuideSource { model, ground_truth };

std::string to_string(DatasetStage s);
DatasetStage parse_dataset_stage(const std::string& text);
std::string to_string(DatasetSplit s);
DatasetSplit parse_dataset_split(const std::string& text);
std::string to_string(GuideSource s);
GuideSource parse_guide_source(const std::string& text);

struct TryonSample {
  std::uint64_t body_seed = 0;
  std::uint64_t garment_seed = 0;  // the garment being tried on
  std::uint64_t other_seed = 0;    // the garment the person wears in person_other
  GarmentComplexity complexity = GarmentComplexity::plain;
  GarmentComplexity other_complexity = GarmentComplexity::plain;
  Image garment;
  Image person_other;
  Image target;
  std::optional<Image> lr_result;  // hr stage only, at (H / sigma) x (W / sigma)
  // Evaluation only. No training or sampling path reads these.
  Mask body_mask;
  Mask torso_mask;
};

/// Low-resolution sampler used to build hr-stage guides:
/// (person_lr, garment_lr, seed) -> lr result.
using LrSampler =
    std::function<Image(const Image& person_lr, const Image& garment_lr, std::uint64_t seed)>;

struct DatasetOptions {
  Index height = 64;
  Index width = 64;
  DatasetStage stage = DatasetStage::lr;
  DatasetSplit split = DatasetSplit::train;
  int sigma = 2;  // hr stage: resolution ratio of lr_result
  GuideSource guide_source = GuideSource::model;
  LrSampler lr_sampler;  // required when stage = hr and guide_source = model
  std::array<double, 3> complexity_mix{1.0, 1.0, 1.0};  // plain, striped, patterned weights
  bool perturb = false;  // add background clutter to person_other only
};

/// Seeds for sample `index` of a split. Train and eval draw from disjoint
/// streams.
std::uint64_t body_seed_for(std::uint64_t seed, DatasetSplit split, std::uint64_t index);
std::uint64_t garment_seed_for(std::uint64_t body_seed, int which);
GarmentComplexity complexity_for(std::uint64_t garment_seed, const std::array<double, 3>& mix);

/// Builds sample `index` of a corpus; make_dataset is this over [0, n).
TryonSample make_sample(std::uint64_t seed, std::uint64_t index, const DatasetOptions& opts);

std::vector<TryonSample> make_dataset(std::size_t n, std::uint64_t seed, const DatasetOptions& opts);

/// Attaches lr_result to each sample (stage hr). Used by make_dataset and
/// when guides are produced after the samples.
void attach_guides(std::vector<TryonSample>& samples, std::uint64_t seed, const DatasetOptions& opts);

/// Seed handed to the lr sampler for a sample's guide.
std::uint64_t guide_seed_for(std::uint64_t seed, std::uint64_t body_seed);

}  // namespace dsvton
