#include "doctest.h"

#include <set>
#include <utility>

#include "dsvton/errors.hpp"
#include "dsvton/pipeline.hpp"
#include "dsvton/synthdata.hpp"

using namespace dsvton;

namespace {

double masked_variance(const Image& img, const Mask& m) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Vector3d sq = Eigen::Vector3d::Zero();
  double n = 0.0;
  for (Index y = 0; y < img.height(); ++y) {
    for (Index x = 0; x < img.width(); ++x) {
      if (m(y, x) == 0) continue;
      for (Index c = 0; c < 3; ++c) {
        sum(c) += img(y, x, c);
        sq(c) += img(y, x, c) * img(y, x, c);
      }
      n += 1.0;
    }
  }
  return ((sq / n).array() - (sum / n).array().square()).mean();
}

double roundtrip_energy(const Image& img, const Mask& m, int sigma) {
  const Image back = upsample(downsample(img, sigma), sigma);
  double e = 0.0;
  for (Index y = 0; y < img.height(); ++y) {
    for (Index x = 0; x < img.width(); ++x) {
      if (m(y, x) == 0) continue;
      for (Index c = 0; c < 3; ++c) e += std::pow(img(y, x, c) - back(y, x, c), 2);
    }
  }
  return e;
}

bool is_foreground(const Image& img, Index y, Index x) {
  for (Index c = 0; c < 3; ++c) {
    if (std::abs(img(y, x, c) - kBackground) > 0.1) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("bodies are deterministic and distinct") {
  const Body a = gen_body(3, 64, 64);
  const Body b = gen_body(3, 64, 64);
  CHECK(a.appearance == b.appearance);
  CHECK((a.body_mask == b.body_mask).all());
  const Body c = gen_body(4, 64, 64);
  CHECK_FALSE((a.body_mask == c.body_mask).all());
  CHECK_THROWS_AS(gen_body(1, 8, 64), ValidationError);
}

TEST_CASE("body coverage stays within 15 to 60 percent") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Body b = gen_body(seed, 64, 64);
    const double cover = b.body_mask.cast<double>().mean();
    CHECK(cover >= 0.15);
    CHECK(cover <= 0.60);
    CHECK((b.torso_mask <= b.body_mask).all());
  }
}

TEST_CASE("body and garment pixels are distinguishable from background") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Body b = gen_body(seed, 64, 64);
    for (Index y = 0; y < 64; ++y) {
      for (Index x = 0; x < 64; ++x) {
        CHECK(is_foreground(b.appearance, y, x) == (b.body_mask(y, x) != 0));
      }
    }
    const Mask gm = garment_mask(64, 64);
    for (auto cx : {GarmentComplexity::plain, GarmentComplexity::striped,
                    GarmentComplexity::patterned}) {
      const Image g = gen_garment(seed, 64, 64, cx);
      for (Index y = 0; y < 64; ++y) {
        for (Index x = 0; x < 64; ++x) REQUIRE(is_foreground(g, y, x) == (gm(y, x) != 0));
      }
    }
  }
}

TEST_CASE("garment texture variance orders plain < striped < patterned") {
  const Mask m = garment_mask(64, 64);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double plain = masked_variance(gen_garment(seed, 64, 64, GarmentComplexity::plain), m);
    const double striped = masked_variance(gen_garment(seed, 64, 64, GarmentComplexity::striped), m);
    const double patterned =
        masked_variance(gen_garment(seed, 64, 64, GarmentComplexity::patterned), m);
    CHECK(plain < striped);
    CHECK(striped < patterned);
  }
  CHECK(gen_garment(9, 64, 64, GarmentComplexity::patterned) ==
        gen_garment(9, 64, 64, GarmentComplexity::patterned));
}

TEST_CASE("patterned detail survives sigma 2 better than sigma 4") {
  // Shrink the mask by 4 px so clamped borders do not dominate.
  const Mask full = garment_mask(64, 64);
  Mask inner = Mask::Zero(64, 64);
  for (Index y = 4; y < 60; ++y) {
    for (Index x = 4; x < 60; ++x) {
      inner(y, x) = full.block(y - 4, x - 4, 9, 9).minCoeff();
    }
  }
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Image g = gen_garment(seed, 64, 64, GarmentComplexity::patterned);
    const double e2 = roundtrip_energy(g, inner, 2);
    const double e4 = roundtrip_energy(g, inner, 4);
    CHECK(e2 < 0.75 * e4);
  }
}

TEST_CASE("render copies garment texture onto the torso only") {
  const Body body = gen_body(11, 64, 64);
  const Image plain = gen_garment(12, 64, 64, GarmentComplexity::plain);
  const Image r = render_wearing(body, plain);
  CHECK(r == render_wearing(body, plain));
  Eigen::Vector3d color(plain(32, 32, 0), plain(32, 32, 1), plain(32, 32, 2));
  for (Index y = 0; y < 64; ++y) {
    for (Index x = 0; x < 64; ++x) {
      for (Index c = 0; c < 3; ++c) {
        if (body.torso_mask(y, x) != 0) {
          CHECK(r(y, x, c) == color(c));
        } else {
          CHECK(r(y, x, c) == body.appearance(y, x, c));
        }
      }
    }
  }
  CHECK_THROWS_AS(render_wearing(body, Image(32, 32, 3)), ValidationError);
}

TEST_CASE("samples differ between person and target only inside the torso") {
  DatasetOptions opts;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const TryonSample s = make_sample(5, i, opts);
    double outside = 0.0;
    for (Index y = 0; y < 64; ++y) {
      for (Index x = 0; x < 64; ++x) {
        if (s.torso_mask(y, x) != 0) continue;
        for (Index c = 0; c < 3; ++c) {
          outside = std::max(outside, std::abs(s.person_other(y, x, c) - s.target(y, x, c)));
        }
      }
    }
    CHECK(outside == 0.0);
  }
  opts.perturb = true;
  int changed = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const TryonSample s = make_sample(5, i, opts);
    const TryonSample clean = make_sample(5, i, DatasetOptions{});
    CHECK(s.target == clean.target);
    if (!(s.person_other == clean.person_other)) ++changed;
  }
  CHECK(changed == 20);
}

TEST_CASE("datasets are reproducible and splits are disjoint") {
  DatasetOptions opts;
  CHECK(make_dataset(0, 1, opts).empty());
  const auto a = make_dataset(4, 1, opts);
  const auto b = make_dataset(4, 1, opts);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].target == b[i].target);
    CHECK(a[i].person_other == b[i].person_other);
    CHECK(a[i].garment == b[i].garment);
    CHECK_FALSE(a[i].lr_result.has_value());
  }

  std::set<std::pair<std::uint64_t, std::uint64_t>> train;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const std::uint64_t body = body_seed_for(1, DatasetSplit::train, i);
    train.insert({body, garment_seed_for(body, 1)});
    train.insert({body, garment_seed_for(body, 2)});
  }
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const std::uint64_t body = body_seed_for(1, DatasetSplit::eval, i);
    CHECK(train.count({body, garment_seed_for(body, 1)}) == 0);
    CHECK(train.count({body, garment_seed_for(body, 2)}) == 0);
  }
}

TEST_CASE("complexity mix selects garment textures") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    CHECK(complexity_for(s, {1, 0, 0}) == GarmentComplexity::plain);
    CHECK(complexity_for(s, {0, 1, 0}) == GarmentComplexity::striped);
    CHECK(complexity_for(s, {0, 0, 1}) == GarmentComplexity::patterned);
  }
  int counts[3] = {0, 0, 0};
  for (std::uint64_t s = 0; s < 3000; ++s) ++counts[static_cast<int>(complexity_for(s, {1, 1, 1}))];
  for (int c : counts) CHECK(std::abs(c - 1000) < 120);
  CHECK_THROWS_AS(complexity_for(1, {-1, 1, 1}), ValidationError);
  CHECK_THROWS_AS(complexity_for(1, {0, 0, 0}), ValidationError);
}

TEST_CASE("hr datasets carry low-resolution guides") {
  DatasetOptions opts;
  opts.stage = DatasetStage::hr;
  CHECK_THROWS_AS(make_dataset(2, 1, opts), ValidationError);

  opts.guide_source = GuideSource::ground_truth;
  for (int sigma : {2, 4}) {
    opts.sigma = sigma;
    for (const TryonSample& s : make_dataset(3, 1, opts)) {
      REQUIRE(s.lr_result.has_value());
      CHECK(s.lr_result->height() == 64 / sigma);
      CHECK(s.lr_result->width() == 64 / sigma);
    }
  }

  opts.guide_source = GuideSource::model;
  opts.sigma = 2;
  opts.lr_sampler = [](const Image& person, const Image& garment, std::uint64_t) {
    REQUIRE(person.height() == 32);
    REQUIRE(garment.height() == 32);
    return Image::constant(32, 32, 3, 0.25);
  };
  for (const TryonSample& s : make_dataset(3, 1, opts)) {
    REQUIRE(s.lr_result.has_value());
    CHECK(*s.lr_result == quantize_8bit(Image::constant(32, 32, 3, 0.25)));
  }
}

TEST_CASE("generated images sit on the 8-bit grid") {
  const TryonSample s = make_sample(2, 0, DatasetOptions{});
  CHECK(quantize_8bit(s.target) == s.target);
  CHECK(quantize_8bit(s.person_other) == s.person_other);
  CHECK(quantize_8bit(s.garment) == s.garment);
}

TEST_CASE("complexity names round-trip") {
  for (auto c : {GarmentComplexity::plain, GarmentComplexity::striped,
                 GarmentComplexity::patterned}) {
    CHECK(parse_complexity(to_string(c)) == c);
  }
  CHECK_THROWS_AS(parse_complexity("tartan"), ValidationError);
  CHECK(parse_guide_source("ground_truth") == GuideSource::ground_truth);
  CHECK(parse_dataset_stage("hr") == DatasetStage::hr);
  CHECK(parse_dataset_split("eval") == DatasetSplit::eval);
}
