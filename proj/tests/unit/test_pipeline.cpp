#include "doctest.h"

#include <cmath>
#include <random>

#include "dsvton/errors.hpp"
#include "dsvton/pipeline.hpp"
#include "dsvton/random.hpp"
#include "test_helpers.hpp"

using namespace dsvton;
using dsvton::testing::max_abs_diff;
using dsvton::testing::random_image;
using dsvton::testing::uniform_image;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.attn_level = 1;
  cfg.time_embed_dim = 8;
  return cfg;
}

const NoiseSchedule& desk_schedule() {
  static const NoiseSchedule sched = make_linear_schedule(200, 1e-4, 0.1);
  return sched;
}

// The ideal denoiser for a known clean image: returns the noise term that
// makes predict_x0 yield x0 exactly.
Predictor x0_oracle(const Image& x0, const NoiseSchedule& sched) {
  return [x0, &sched](const Image& x_t, int t) {
    Image pred(x_t.height(), x_t.width(), x_t.channels());
    pred.pixels() = (x_t.pixels() - std::sqrt(sched.alpha_bar(t)) * x0.pixels()) /
                    std::sqrt(1.0 - sched.alpha_bar(t));
    return pred;
  };
}

}  // namespace

TEST_CASE("downsample averages blocks") {
  Image block(2, 2, 1);
  block(1, 0, 0) = 2.0;
  block(1, 1, 0) = 2.0;
  const Image d = downsample(block, 2);
  CHECK(d.height() == 1);
  CHECK(d.width() == 1);
  CHECK(d(0, 0, 0) == 1.0);

  CHECK(downsample(Image(1024, 768, 1), 2).height() == 512);
  CHECK(downsample(Image(1024, 768, 1), 2).width() == 384);

  std::mt19937_64 rng(1);
  const Image img = random_image(rng, 8, 12, 3);
  CHECK(downsample(img, 1) == img);
  CHECK_THROWS_AS(downsample(img, 5), ValidationError);
  CHECK_THROWS_AS(downsample(img, 0), ValidationError);
}

TEST_CASE("downsample matches a direct block mean") {
  std::mt19937_64 rng(2);
  const Image img = random_image(rng, 16, 8, 3);
  for (int sigma : {2, 4}) {
    const Image d = downsample(img, sigma);
    for (Index y = 0; y < d.height(); ++y) {
      for (Index x = 0; x < d.width(); ++x) {
        for (Index c = 0; c < 3; ++c) {
          double sum = 0.0;
          for (int dy = 0; dy < sigma; ++dy) {
            for (int dx = 0; dx < sigma; ++dx) sum += img(y * sigma + dy, x * sigma + dx, c);
          }
          CHECK(d(y, x, c) == doctest::Approx(sum / (sigma * sigma)).epsilon(1e-13));
        }
      }
    }
  }
}

TEST_CASE("upsample is bilinear with half-pixel centres") {
  Image row(1, 2, 1);
  row(0, 1, 0) = 1.0;
  const Image u = upsample(row, 2);
  REQUIRE(u.height() == 2);
  REQUIRE(u.width() == 4);
  const double expected[] = {0.0, 0.25, 0.75, 1.0};
  for (Index y = 0; y < 2; ++y) {
    for (Index x = 0; x < 4; ++x) CHECK(u(y, x, 0) == doctest::Approx(expected[x]));
  }

  std::mt19937_64 rng(3);
  const Image img = random_image(rng, 5, 7, 3);
  CHECK(upsample(img, 1) == img);
}

TEST_CASE("resampling is exact on constant images") {
  for (double v : {0.3, -0.7, 1.0 / 3.0}) {
    for (int sigma : {2, 4}) {
      const Image c = Image::constant(8, 8, 3, v);
      const Image up = upsample(c, sigma);
      CHECK(up == Image::constant(8 * sigma, 8 * sigma, 3, v));
      CHECK(downsample(up, sigma) == c);
      CHECK(upsample(downsample(c, sigma), sigma) == c);
    }
  }
}

TEST_CASE("upsample preserves the block mean of smooth content") {
  // Averaging the upsampled image back down is close to the original for a
  // linear ramp away from the clamped border.
  Image ramp(8, 8, 1);
  for (Index y = 0; y < 8; ++y) {
    for (Index x = 0; x < 8; ++x) ramp(y, x, 0) = 0.1 * static_cast<double>(x + y);
  }
  const Image back = downsample(upsample(ramp, 2), 2);
  for (Index y = 1; y < 7; ++y) {
    for (Index x = 1; x < 7; ++x) CHECK(back(y, x, 0) == doctest::Approx(ramp(y, x, 0)));
  }
}

TEST_CASE("stage validation") {
  const NoiseSchedule& sched = desk_schedule();
  StageConfig s;
  CHECK_NOTHROW(s.validate(sched));
  s.steps = 0;
  CHECK_THROWS_AS(s.validate(sched), ValidationError);
  s.steps = 201;
  CHECK_THROWS_AS(s.validate(sched), ValidationError);

  StageConfig nd;
  nd.mode = StageMode::noising_denoising;
  nd.tau = 0;
  CHECK_THROWS_AS(nd.validate(sched), ValidationError);
  nd.tau = 40;
  CHECK_NOTHROW(nd.validate(sched));
  nd.steps = 41;
  CHECK_THROWS_AS(nd.validate(sched), ValidationError);

  StageConfig res;
  res.mode = StageMode::residual;
  res.coeffs = {0.5, 0.5};
  CHECK_NOTHROW(res.validate(sched));
  CHECK_THROWS_AS(res.validate(make_linear_schedule(200, 1e-4, 0.05)), ValidationError);
  res.coeffs = {0.0, 0.0};
  CHECK_THROWS_AS(res.validate(sched), ValidationError);
}

TEST_CASE("default tau is 20 percent of T") {
  CHECK(default_tau(200) == 40);
  CHECK(default_tau(1000) == 200);
  CHECK(default_tau(2) == 1);
  CHECK(default_tau(1) == 1);
}

TEST_CASE("stage modes reach the clean image under the ideal predictor") {
  const NoiseSchedule& sched = desk_schedule();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Image x0 = uniform_image(rng, 8, 8, 3);
    const Image person = uniform_image(rng, 8, 8, 3);
    const Image guide = uniform_image(rng, 8, 8, 3);
    const Predictor oracle = x0_oracle(x0, sched);
    for (int steps : {1, 5, 20}) {
      for (bool clip : {false, true}) {
        StageConfig standard;
        standard.steps = steps;
        standard.clip_x0 = clip;
        CHECK(max_abs_diff(run_stage(person, person, nullptr, standard, oracle, sched, trial), x0) <
              1e-6);

        StageConfig residual = standard;
        residual.mode = StageMode::residual;
        residual.coeffs = {0.5, 0.5};
        CHECK(max_abs_diff(run_stage(person, person, &guide, residual, oracle, sched, trial), x0) <
              1e-6);

        StageConfig nd = standard;
        nd.mode = StageMode::noising_denoising;
        nd.tau = 40;
        CHECK(max_abs_diff(run_stage(person, person, &guide, nd, oracle, sched, trial), x0) < 1e-6);
      }
    }
  }
}

TEST_CASE("guided modes require a guide") {
  const NoiseSchedule& sched = desk_schedule();
  const Image img(8, 8, 3);
  const Predictor zero = [](const Image& x, int) { return Image(x.height(), x.width(), 3); };
  StageConfig residual;
  residual.mode = StageMode::residual;
  CHECK_THROWS_AS(run_stage(img, img, nullptr, residual, zero, sched, 0), ValidationError);
  StageConfig nd;
  nd.mode = StageMode::noising_denoising;
  nd.tau = 40;
  CHECK_THROWS_AS(run_stage(img, img, nullptr, nd, zero, sched, 0), ValidationError);
  CHECK_THROWS_AS(run_stage(img, Image(4, 4, 3), nullptr, StageConfig{}, zero, sched, 0),
                  ValidationError);
}

TEST_CASE("non-finite predictions surface as numerical errors") {
  const NoiseSchedule& sched = desk_schedule();
  const Image img(8, 8, 3);
  const Predictor bad = [](const Image& x, int) {
    return Image::constant(x.height(), x.width(), 3, std::nan(""));
  };
  CHECK_THROWS_AS(run_stage(img, img, nullptr, StageConfig{}, bad, sched, 0), NumericalError);
}

TEST_CASE("stages with a network are deterministic and reduce to standard") {
  const NoiseSchedule& sched = desk_schedule();
  const DenoiserParams params = init_params(tiny_config(), 5);
  std::mt19937_64 rng(6);
  const Image person = uniform_image(rng, 8, 8, 3);
  const Image garment = uniform_image(rng, 8, 8, 3);
  const Image guide = uniform_image(rng, 8, 8, 3);

  StageConfig standard;
  standard.steps = 5;
  const Image a = run_stage(person, garment, nullptr, standard, params, sched, 11);
  const Image b = run_stage(person, garment, nullptr, standard, params, sched, 11);
  CHECK(a == b);
  CHECK(a.all_finite());
  CHECK(a.pixels().maxCoeff() <= 1.0);
  CHECK(a.pixels().minCoeff() >= -1.0);
  CHECK_FALSE(a == run_stage(person, garment, nullptr, standard, params, sched, 12));

  StageConfig reduced = standard;
  reduced.mode = StageMode::residual;
  reduced.coeffs = ResidualCoefficients::identity();
  CHECK(run_stage(person, garment, &guide, reduced, params, sched, 11) == a);
  const Image zero_guide(8, 8, 3);
  CHECK(run_stage(person, garment, &zero_guide, reduced, params, sched, 11) == a);
}

TEST_CASE("dual-scale resolution contract and determinism") {
  const NoiseSchedule& sched = desk_schedule();
  const DenoiserParams lr = init_params(tiny_config(), 7);
  const DenoiserParams hr = init_params(tiny_config(), 8);
  std::mt19937_64 rng(9);
  const Image person = uniform_image(rng, 16, 16, 3);
  const Image garment = uniform_image(rng, 16, 16, 3);
  for (int sigma : {1, 2, 4}) {
    PipelineConfig cfg;
    cfg.low.sigma = sigma;
    cfg.low.steps = 3;
    cfg.high.steps = 3;
    cfg.seed = 21;
    const DualScaleResult r = run_dual_scale(person, garment, cfg, lr, hr, sched);
    CHECK(r.lr.height() == 16 / sigma);
    CHECK(r.lr.width() == 16 / sigma);
    CHECK(r.hr.height() == 16);
    CHECK(r.hr.width() == 16);
    const DualScaleResult again = run_dual_scale(person, garment, cfg, lr, hr, sched);
    CHECK(again.lr == r.lr);
    CHECK(again.hr == r.hr);
  }
}

TEST_CASE("dual-scale high stage with identity coefficients is a single-stage sample") {
  const NoiseSchedule& sched = desk_schedule();
  const DenoiserParams lr = init_params(tiny_config(), 7);
  const DenoiserParams hr = init_params(tiny_config(), 8);
  std::mt19937_64 rng(10);
  const Image person = uniform_image(rng, 16, 16, 3);
  const Image garment = uniform_image(rng, 16, 16, 3);
  PipelineConfig cfg;
  cfg.low.steps = 3;
  cfg.high.steps = 3;
  cfg.high.coeffs = ResidualCoefficients::identity();
  cfg.seed = 5;
  const DualScaleResult r = run_dual_scale(person, garment, cfg, lr, hr, sched);
  StageConfig single;
  single.steps = 3;
  CHECK(r.hr == run_stage(person, garment, nullptr, single, hr, sched, high_stage_seed(cfg.seed)));
}

TEST_CASE("stage mode names round-trip") {
  for (StageMode m : {StageMode::standard, StageMode::residual, StageMode::noising_denoising}) {
    CHECK(parse_stage_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_stage_mode("bogus"), ValidationError);
}
