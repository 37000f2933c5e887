#include "doctest.h"

#include <cmath>
#include <iostream>
#include <random>

#include "dsvton/denoiser.hpp"
#include "dsvton/errors.hpp"
#include "test_helpers.hpp"

using namespace dsvton;
using dsvton::testing::max_abs_diff;
using dsvton::testing::random_image;
using dsvton::testing::uniform_image;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.attn_level = 1;
  cfg.time_embed_dim = 8;
  return cfg;
}

std::vector<TrainItem> random_batch(std::mt19937_64& rng, Index h, Index w, int n, int T = 200) {
  std::vector<TrainItem> batch;
  for (int i = 0; i < n; ++i) {
    TrainItem item;
    item.x_in = random_image(rng, h, w, 3);
    item.person = uniform_image(rng, h, w, 3);
    item.garment = uniform_image(rng, h, w, 3);
    item.t = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(T));
    item.target = random_image(rng, h, w, 3);
    batch.push_back(std::move(item));
  }
  return batch;
}

}  // namespace

TEST_CASE("parameter layout covers the vector exactly") {
  for (const NetworkConfig& cfg : {small_config(), NetworkConfig{}}) {
    const ParamLayout layout = build_layout(cfg);
    Index expected_offset = 0;
    for (const ParamTensor& t : layout.tensors()) {
      CHECK(t.offset == expected_offset);
      CHECK(t.size() > 0);
      expected_offset += t.size();
    }
    CHECK(expected_offset == layout.total());
    const DenoiserParams p = init_params(cfg, 1);
    CHECK(p.size() == layout.total());
    CHECK(p.values.allFinite());
  }
}

TEST_CASE("network config validation") {
  NetworkConfig cfg = small_config();
  cfg.attn_level = 2;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.base_channels = 0;
  CHECK_THROWS_AS(init_params(cfg, 1), ValidationError);
  cfg = small_config();
  cfg.depth = 0;
  CHECK_THROWS_AS(init_params(cfg, 1), ValidationError);
  cfg = small_config();
  cfg.time_embed_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(NetworkConfig{}.in_channels() == 6);
  CHECK(NetworkConfig{}.out_channels() == 3);
}

TEST_CASE("init_params is deterministic per seed") {
  const NetworkConfig cfg;
  const DenoiserParams a = init_params(cfg, 42), b = init_params(cfg, 42), c = init_params(cfg, 43);
  CHECK(a.values == b.values);
  const Index differing = (a.values.array() != c.values.array()).count();
  CHECK(static_cast<double>(differing) > 0.99 * static_cast<double>(a.size()));
}

TEST_CASE("reference_encode") {
  std::mt19937_64 rng(3);
  const NetworkConfig cfg;
  const DenoiserParams p = init_params(cfg, 5);
  const ReferenceFeatures zero = reference_encode(Image(16, 16, 3), p);
  REQUIRE(zero.sites.size() == 1);
  CHECK(zero.sites[0].features.allFinite());
  CHECK(zero.sites[0].height == 4);
  CHECK(zero.sites[0].width == 4);
  CHECK(zero.sites[0].features.cols() == cfg.level_channels(cfg.attn_level));

  const ReferenceFeatures a = reference_encode(uniform_image(rng, 16, 16, 3), p);
  const ReferenceFeatures b = reference_encode(uniform_image(rng, 16, 16, 3), p);
  CHECK((a.sites[0].features - b.sites[0].features).cwiseAbs().maxCoeff() > 1e-6);
  CHECK_THROWS_AS(reference_encode(Image(15, 16, 3), p), ValidationError);
  CHECK_THROWS_AS(reference_encode(Image(16, 16, 1), p), ValidationError);
}

TEST_CASE("predict_noise contract") {
  std::mt19937_64 rng(4);
  const DenoiserParams p = init_params(NetworkConfig{}, 6);
  const Image garment = uniform_image(rng, 16, 16, 3);
  const Image x = random_image(rng, 16, 16, 3), person = uniform_image(rng, 16, 16, 3);
  const ReferenceFeatures ref = reference_encode(garment, p);

  const Image out = predict_noise(x, person, 17, ref, p);
  CHECK(out.same_shape(x));
  CHECK(predict_noise(x, person, 17, ref, p) == out);

  // Cached reference features give the same answer as recomputing them every step.
  for (int t : {200, 150, 90, 10, 1}) {
    CHECK(predict_noise(x, person, t, ref, p) ==
          predict_noise(x, person, t, reference_encode(garment, p), p));
  }

  DenoiserParams perturbed = p;
  perturbed.values(perturbed.layout.at("enc1.res.w").offset + 3) += 1e-3;
  CHECK(max_abs_diff(predict_noise(x, person, 17, ref, perturbed), out) > 0.0);

  // Timestep and garment both reach the output.
  CHECK(max_abs_diff(predict_noise(x, person, 18, ref, p), out) > 0.0);
  CHECK(max_abs_diff(predict_noise(x, person, 17, reference_encode(uniform_image(rng, 16, 16, 3), p), p),
                     out) > 0.0);

  CHECK_THROWS_AS(predict_noise(x, uniform_image(rng, 8, 8, 3), 17, ref, p), ValidationError);
  const ReferenceFeatures wrong = reference_encode(uniform_image(rng, 32, 32, 3), p);
  CHECK_THROWS_AS(predict_noise(x, person, 17, wrong, p), ValidationError);
}

TEST_CASE("loss_and_grad basics") {
  std::mt19937_64 rng(5);
  const DenoiserParams p = init_params(small_config(), 7);
  std::vector<TrainItem> batch = random_batch(rng, 8, 8, 3);

  SUBCASE("perfect fit is stationary") {
    for (TrainItem& item : batch) {
      item.target = predict_noise(item.x_in, item.person, item.t, reference_encode(item.garment, p), p);
    }
    const LossAndGrad lg = loss_and_grad(batch, p);
    CHECK(lg.loss == 0.0);
    CHECK(lg.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("duplicating the batch leaves loss and gradient unchanged") {
    const LossAndGrad once = loss_and_grad(batch, p);
    std::vector<TrainItem> twice = batch;
    twice.insert(twice.end(), batch.begin(), batch.end());
    const LossAndGrad dup = loss_and_grad(twice, p);
    CHECK(dup.loss == doctest::Approx(once.loss).epsilon(1e-13));
    CHECK((dup.grad - once.grad).cwiseAbs().maxCoeff() <= 1e-13 * once.grad.cwiseAbs().maxCoeff());
  }
  SUBCASE("batch loss agrees with loss_and_grad") {
    CHECK(batch_loss(batch, p) == doctest::Approx(loss_and_grad(batch, p).loss).epsilon(1e-14));
  }
  SUBCASE("empty batch") {
    CHECK_THROWS_AS(loss_and_grad({}, p), ValidationError);
  }
}

TEST_CASE("gradient matches central differences") {
  std::mt19937_64 rng(6);
  SUBCASE("small network, 50 coordinates") {
    const DenoiserParams p = init_params(small_config(), 8);
    const auto batch = random_batch(rng, 8, 8, 2);
    const GradientCheckReport r = gradient_check(p, batch, 50, 1e-4, 1);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("default network, every layer group") {
    const DenoiserParams p = init_params(NetworkConfig{}, 9);
    const auto batch = random_batch(rng, 8, 8, 2);
    const GradientCheckReport r = gradient_check(p, batch, 120, 1e-4, 2);
    for (const auto& [group, err] : r.group_max_rel_error) {
      INFO(group);
      CHECK(r.group_coords.at(group) > 0);
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("fault injection is detected") {
    const DenoiserParams p = init_params(small_config(), 10);
    const auto batch = random_batch(rng, 8, 8, 2);
    const GradientCheckReport r = gradient_check(p, batch, 50, 1e-4, 3, GradientFault{"attention", 1.5});
    CHECK(r.group_max_rel_error.at("attention") > 1e-2);
    CHECK(r.group_max_rel_error.at("decoder") < 1e-4);
  }
}

TEST_CASE("adamw_step") {
  DenoiserParams p = init_params(small_config(), 11);
  const Eigen::VectorXd original = p.values;
  SUBCASE("zero gradient without decay leaves params unchanged") {
    AdamState s = AdamState::zeros(p.size());
    adamw_step(p, Eigen::VectorXd::Zero(p.size()), s, 1e-3, 0.0);
    CHECK(p.values == original);
    CHECK(s.step == 1);
  }
  SUBCASE("first step moves each coordinate by about lr against the gradient sign") {
    AdamState s = AdamState::zeros(p.size());
    Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(p.size(), -2.0, 3.0);
    adamw_step(p, g, s, 1e-3, 0.0);
    for (Index i = 0; i < p.size(); i += 97) {
      // m_hat = g, v_hat = g^2 after bias correction.
      const double expected = -1e-3 * g(i) / (std::abs(g(i)) + 1e-8);
      CHECK(p.values(i) - original(i) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
  SUBCASE("decoupled decay shrinks params by (1 - lr * wd)") {
    AdamState s = AdamState::zeros(p.size());
    adamw_step(p, Eigen::VectorXd::Zero(p.size()), s, 1e-2, 0.1);
    CHECK((p.values - original * (1.0 - 1e-3)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("non-finite gradient is rejected") {
    AdamState s = AdamState::zeros(p.size());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p.size());
    g(0) = NAN;
    CHECK_THROWS_AS(adamw_step(p, g, s, 1e-3, 0.0), NumericalError);
  }
}
