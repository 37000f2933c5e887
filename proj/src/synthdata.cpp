#include "dsvton/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dsvton/errors.hpp"
#include "dsvton/parallel.hpp"
#include "dsvton/pipeline.hpp"
#include "dsvton/random.hpp"

namespace dsvton {

std::string to_string(GarmentComplexity c) {
  switch (c) {
    case GarmentComplexity::plain:
      return "plain";
    case GarmentComplexity::striped:
      return "striped";
    case GarmentComplexity::patterned:
      return "patterned";
  }
  return "unknown";
}

GarmentComplexity parse_complexity(const std::string& text) {
  if (text == "plain") return GarmentComplexity::plain;
  if (text == "striped") return GarmentComplexity::striped;
  if (text == "patterned") return GarmentComplexity::patterned;
  throw ValidationError("unknown garment complexity '" + text + "'");
}

std::string to_string(DatasetStage s) { return s == DatasetStage::lr ? "lr" : "hr"; }

DatasetStage parse_dataset_stage(const std::string& text) {
  if (text == "lr") return DatasetStage::lr;
  if (text == "hr") return DatasetStage::hr;
  throw ValidationError("stage must be lr or hr, got '" + text + "'");
}

std::string to_string(DatasetSplit s) { return s == DatasetSplit::train ? "train" : "eval"; }

DatasetSplit parse_dataset_split(const std::string& text) {
  if (text == "train") return DatasetSplit::train;
  if (text == "eval") return DatasetSplit::eval;
  throw ValidationError("split must be train or eval, got '" + text + "'");
}

std::string to_string(GuideSource s) { return s == GuideSource::model ? "model" : "ground_truth"; }

GuideSource parse_guide_source(const std::string& text) {
  if (text == "model") return GuideSource::model;
  if (text == "ground_truth") return GuideSource::ground_truth;
  throw ValidationError("guide_source must be model or ground_truth, got '" + text + "'");
}

namespace {

using Color = Eigen::Vector3d;

struct Canvas {
  Index h;
  Index w;
  // Normalized coordinates: x in units of width, y in units of height;
  // radii in units of min(h, w).
  double unit() const { return static_cast<double>(std::min(h, w)); }
  double px(double u) const { return u * static_cast<double>(w); }
  double py(double v) const { return v * static_cast<double>(h); }
};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Color uniform_color(Rng& rng, double lo, double hi) {
  return Color(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi));
}

double segment_distance(double x, double y, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  double s = len2 > 0.0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return std::hypot(x - (x0 + s * dx), y - (y0 + s * dy));
}

void paint(Image& img, Index y, Index x, const Color& c) {
  for (Index k = 0; k < 3; ++k) img(y, x, k) = c(k);
}

void require_dims(Index h, Index w) {
  require(h >= 16 && w >= 16, "synthetic images need height and width >= 16");
}

}  // namespace

Body gen_body(std::uint64_t seed, Index height, Index width) {
  require_dims(height, width);
  Rng rng(derive_seed(seed, {0xB0D1}));
  const Canvas cv{height, width};
  const double unit = cv.unit();

  const double cx = cv.px(0.5 + uniform(rng, -0.06, 0.06));
  const double s = uniform(rng, 0.9, 1.1);
  const Color skin = uniform_color(rng, -0.2, 0.8);
  const Color hair = uniform_color(rng, -0.7, 0.2);
  const Color trousers = uniform_color(rng, -0.6, 0.6);

  const double head_cy = cv.py(0.14);
  const double head_r = 0.08 * s * unit;
  const double neck_r = 0.035 * unit;
  const double torso_cy = cv.py(0.45);
  const double torso_a = 0.17 * s * uniform(rng, 0.9, 1.1) * static_cast<double>(width);
  const double torso_b = 0.2 * s * static_cast<double>(height);
  const double arm_r = 0.035 * unit;
  const double leg_r = 0.05 * unit;
  const double arm_len = 0.3 * static_cast<double>(height);

  struct Limb {
    double x0, y0, x1, y1, r;
    bool skin;
  };
  std::vector<Limb> limbs;
  limbs.push_back({cx, cv.py(0.18), cx, cv.py(0.28), neck_r, true});
  for (int side : {-1, 1}) {
    const double theta = uniform(rng, 10.0, 45.0) * std::numbers::pi / 180.0;
    const double sx = cx + side * 0.8 * torso_a;
    const double sy = cv.py(0.32);
    limbs.push_back({sx, sy, sx + side * arm_len * std::sin(theta), sy + arm_len * std::cos(theta),
                     arm_r, true});
    const double hip_x = cx + side * cv.px(0.07);
    limbs.push_back({hip_x, cv.py(0.6), hip_x + side * cv.px(uniform(rng, 0.0, 0.08)), cv.py(0.95),
                     leg_r, false});
  }

  Body body;
  body.appearance = Image::constant(height, width, 3, kBackground);
  body.body_mask = Mask::Zero(height, width);
  body.torso_mask = Mask::Zero(height, width);
  body.torso_cy = torso_cy;
  body.torso_cx = cx;
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) + 0.5;
      const double fy = static_cast<double>(y) + 0.5;
      const double ex = (fx - cx) / torso_a;
      const double ey = (fy - torso_cy) / torso_b;
      if (ex * ex + ey * ey <= 1.0) {
        paint(body.appearance, y, x, skin);
        body.torso_mask(y, x) = 1;
        body.body_mask(y, x) = 1;
        continue;
      }
      const double hd = std::hypot(fx - cx, fy - head_cy);
      if (hd <= head_r) {
        paint(body.appearance, y, x, fy < head_cy - 0.3 * head_r ? hair : skin);
        body.body_mask(y, x) = 1;
        continue;
      }
      for (const Limb& l : limbs) {
        if (segment_distance(fx, fy, l.x0, l.y0, l.x1, l.y1) <= l.r) {
          paint(body.appearance, y, x, l.skin ? skin : trousers);
          body.body_mask(y, x) = 1;
          break;
        }
      }
    }
  }
  body.appearance = quantize_8bit(std::move(body.appearance));
  return body;
}

Mask garment_mask(Index height, Index width) {
  require_dims(height, width);
  const Canvas cv{height, width};
  Mask m = Mask::Zero(height, width);
  const double neck_r = 0.08 * static_cast<double>(width);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) + 0.5;
      const double fy = static_cast<double>(y) + 0.5;
      const bool body = fy >= cv.py(0.15) && fy < cv.py(0.85) && fx >= cv.px(0.2) && fx < cv.px(0.8);
      const bool sleeve = fy >= cv.py(0.15) && fy < cv.py(0.35) &&
                          ((fx >= cv.px(0.08) && fx < cv.px(0.2)) ||
                           (fx >= cv.px(0.8) && fx < cv.px(0.92)));
      const bool neckline = std::hypot(fx - cv.px(0.5), fy - cv.py(0.15)) < neck_r;
      m(y, x) = (body || sleeve) && !neckline ? 1 : 0;
    }
  }
  return m;
}

Image gen_garment(std::uint64_t seed, Index height, Index width, GarmentComplexity complexity) {
  require_dims(height, width);
  Rng rng(derive_seed(seed, {0x6A12}));
  Image tex(height, width, 3);
  switch (complexity) {
    case GarmentComplexity::plain: {
      const Color c = uniform_color(rng, -0.7, 0.9);
      for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) paint(tex, y, x, c);
      }
      break;
    }
    case GarmentComplexity::striped: {
      const Color mid = uniform_color(rng, -0.3, 0.3);
      const double contrast = uniform(rng, 0.35, 0.5);
      const int period = static_cast<int>(std::uniform_int_distribution<int>(8, 16)(rng));
      const int phase = static_cast<int>(std::uniform_int_distribution<int>(0, period - 1)(rng));
      const bool vertical = rng() % 2 == 1;
      for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) {
          const Index coord = (vertical ? x : y) + phase;
          const double sign = (coord % period) < period / 2 ? -0.5 : 0.5;
          paint(tex, y, x, (mid.array() + sign * contrast).matrix());
        }
      }
      break;
    }
    case GarmentComplexity::patterned: {
      const Color mid = uniform_color(rng, -0.2, 0.3);
      const double contrast = uniform(rng, 0.9, 1.2);
      const Color tint = uniform_color(rng, -0.1, 0.1);
      const Index py = std::uniform_int_distribution<Index>(0, 5)(rng);
      const Index px = std::uniform_int_distribution<Index>(0, 5)(rng);
      for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) {
          const bool odd = (((y + py) / 3) + ((x + px) / 3)) % 2 == 1;
          Color c = (mid.array() + (odd ? 0.5 : -0.5) * contrast).matrix();
          if (odd) c += tint;
          paint(tex, y, x, c);
        }
      }
      break;
    }
  }
  const Mask m = garment_mask(height, width);
  Image out = Image::constant(height, width, 3, kBackground);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      if (m(y, x) != 0) {
        for (Index c = 0; c < 3; ++c) out(y, x, c) = tex(y, x, c);
      }
    }
  }
  return quantize_8bit(clamp_unit(std::move(out)));
}

Image render_wearing(const Body& body, const Image& garment) {
  const Index h = body.appearance.height();
  const Index w = body.appearance.width();
  require(garment.height() == h && garment.width() == w && garment.channels() == 3,
          "render_wearing: garment " + shape_string(garment) + " does not match body " +
              shape_string(body.appearance));
  require(body.torso_mask.rows() == h && body.torso_mask.cols() == w,
          "render_wearing: torso mask does not match body");
  const Index dy = static_cast<Index>(std::lround(static_cast<double>(h) / 2.0 - body.torso_cy));
  const Index dx = static_cast<Index>(std::lround(static_cast<double>(w) / 2.0 - body.torso_cx));
  Image out = body.appearance;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (body.torso_mask(y, x) == 0) continue;
      const Index gy = std::clamp<Index>(y + dy, 0, h - 1);
      const Index gx = std::clamp<Index>(x + dx, 0, w - 1);
      for (Index c = 0; c < 3; ++c) out(y, x, c) = garment(gy, gx, c);
    }
  }
  return out;
}

std::uint64_t body_seed_for(std::uint64_t seed, DatasetSplit split, std::uint64_t index) {
  return derive_seed(seed, {split == DatasetSplit::train ? 0x7EA1ULL : 0xE7A1ULL, index});
}

std::uint64_t garment_seed_for(std::uint64_t body_seed, int which) {
  return derive_seed(body_seed, {0x6A00ULL + static_cast<std::uint64_t>(which)});
}

GarmentComplexity complexity_for(std::uint64_t garment_seed, const std::array<double, 3>& mix) {
  double total = 0.0;
  for (double m : mix) {
    require(m >= 0.0 && std::isfinite(m), "complexity weights must be finite and nonnegative");
    total += m;
  }
  require(total > 0.0, "complexity weights must not all be zero");
  Rng rng(derive_seed(garment_seed, {0xC0}));
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (int k = 0; k < 3; ++k) {
    if (u < mix[static_cast<std::size_t>(k)] || k == 2) return static_cast<GarmentComplexity>(k);
    u -= mix[static_cast<std::size_t>(k)];
  }
  return GarmentComplexity::patterned;
}

std::uint64_t guide_seed_for(std::uint64_t seed, std::uint64_t body_seed) {
  return derive_seed(seed, {0x6D1DEULL, body_seed});
}

namespace {

void add_clutter(Image& person, const Mask& body_mask, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xC1u}));
  const int n = std::uniform_int_distribution<int>(1, 3)(rng);
  const Index h = person.height();
  const Index w = person.width();
  for (int k = 0; k < n; ++k) {
    const Index bh = std::uniform_int_distribution<Index>(2, std::max<Index>(2, h / 8))(rng);
    const Index bw = std::uniform_int_distribution<Index>(2, std::max<Index>(2, w / 8))(rng);
    const Index y0 = std::uniform_int_distribution<Index>(0, h - bh)(rng);
    const Index x0 = std::uniform_int_distribution<Index>(0, w - bw)(rng);
    const Color c = uniform_color(rng, -0.5, 0.9);
    for (Index y = y0; y < y0 + bh; ++y) {
      for (Index x = x0; x < x0 + bw; ++x) {
        if (body_mask(y, x) == 0) paint(person, y, x, c);
      }
    }
  }
  person = quantize_8bit(std::move(person));
}

}  // namespace

TryonSample make_sample(std::uint64_t seed, std::uint64_t index, const DatasetOptions& opts) {
  TryonSample s;
  s.body_seed = body_seed_for(seed, opts.split, index);
  s.garment_seed = garment_seed_for(s.body_seed, 1);
  s.other_seed = garment_seed_for(s.body_seed, 2);
  s.complexity = complexity_for(s.garment_seed, opts.complexity_mix);
  s.other_complexity = complexity_for(s.other_seed, opts.complexity_mix);
  const Body body = gen_body(s.body_seed, opts.height, opts.width);
  s.garment = gen_garment(s.garment_seed, opts.height, opts.width, s.complexity);
  const Image other = gen_garment(s.other_seed, opts.height, opts.width, s.other_complexity);
  s.target = render_wearing(body, s.garment);
  s.person_other = render_wearing(body, other);
  if (opts.perturb) add_clutter(s.person_other, body.body_mask, s.body_seed);
  s.body_mask = body.body_mask;
  s.torso_mask = body.torso_mask;
  return s;
}

void attach_guides(std::vector<TryonSample>& samples, std::uint64_t seed, const DatasetOptions& opts) {
  require(opts.sigma >= 1, "dataset sigma must be >= 1");
  if (opts.guide_source == GuideSource::model && !opts.lr_sampler) {
    throw ValidationError(
        "hr dataset needs a low-resolution sampler (an lr checkpoint) or guide_source=ground_truth");
  }
  parallel_for(samples.size(), [&](std::size_t i) {
    TryonSample& s = samples[i];
    if (opts.guide_source == GuideSource::ground_truth) {
      s.lr_result = quantize_8bit(downsample(s.target, opts.sigma));
    } else {
      Image lr = opts.lr_sampler(downsample(s.person_other, opts.sigma),
                                 downsample(s.garment, opts.sigma),
                                 guide_seed_for(seed, s.body_seed));
      s.lr_result = quantize_8bit(std::move(lr));
    }
  });
}

std::vector<TryonSample> make_dataset(std::size_t n, std::uint64_t seed, const DatasetOptions& opts) {
  if (opts.stage == DatasetStage::hr && opts.guide_source == GuideSource::model && !opts.lr_sampler) {
    throw ValidationError(
        "hr dataset needs a low-resolution sampler (an lr checkpoint) or guide_source=ground_truth");
  }
  std::vector<TryonSample> samples(n);
  parallel_for(n, [&](std::size_t i) { samples[i] = make_sample(seed, i, opts); });
  if (opts.stage == DatasetStage::hr) attach_guides(samples, seed, opts);
  return samples;
}

}  // namespace dsvton
