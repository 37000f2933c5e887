#include "doctest.h"

#include <set>

#include "dsvton/config.hpp"
#include "dsvton/errors.hpp"

using namespace dsvton;

TEST_CASE("defaults use sigma 2, alpha = beta = 0.5 and 20 steps per stage") {
  const RunConfig cfg;
  CHECK(cfg.sigma == 2);
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.beta == 0.5);
  CHECK(cfg.lr_steps == 20);
  CHECK(cfg.hr_steps == 20);
  CHECK(cfg.hr_mode == StageMode::residual);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.schedule().residual_ready());
}

TEST_CASE("key table covers every key exactly once with parseable defaults") {
  std::set<std::string> names;
  for (const ConfigKey& k : config_keys()) {
    CHECK(names.insert(k.name).second);
    CHECK_FALSE(k.description.empty());
    RunConfig cfg;
    CHECK_NOTHROW(set_config_value(cfg, k.name, k.default_value));
    CHECK(get_config_value(cfg, k.name) == k.default_value);
  }
  CHECK(names.count("sigma") == 1);
  CHECK(names.count("seed") == 1);
}

TEST_CASE("canonical text parses back to the same configuration") {
  RunConfig cfg;
  set_config_value(cfg, "alpha", "0.6666666666666666");
  set_config_value(cfg, "complexity_mix", "1,0,2");
  set_config_value(cfg, "ablate_coeffs", "0.5:0.5,1:1");
  set_config_value(cfg, "data_dir", "/tmp/somewhere");
  const RunConfig back = parse_config(cfg.canonical_text());
  CHECK(back.canonical_text() == cfg.canonical_text());
  CHECK(back.training_hash() == cfg.training_hash());
}

TEST_CASE("parsing: comments, whitespace and errors") {
  const RunConfig cfg = parse_config("# comment\n  sigma = 4   # trailing\n\nseed=12\n");
  CHECK(cfg.sigma == 4);
  CHECK(cfg.seed == 12);
  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("sigma\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("sigma = 3\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("sigma = two\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("learning_rate = -1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("beta_end = 1.5\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("clip_x0 = maybe\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("hr_mode = fancy\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("complexity_mix = 0,0,0\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("alpha = 0\nbeta = 0\n"), ValidationError);
  CHECK_THROWS_AS(load_config("/nonexistent/dsvton.conf"), ValidationError);
}

TEST_CASE("cross-key validation") {
  CHECK_THROWS_AS(parse_config("height = 36\n"), ValidationError);  // not divisible by depth x sigma
  CHECK_THROWS_AS(parse_config("lr_steps = 300\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("hr_mode = noising_denoising\nhr_steps = 50\n"), ValidationError);
  CHECK_NOTHROW(parse_config("hr_mode = noising_denoising\nhr_steps = 40\n"));
  // A schedule that leaves signal at T fails the residual gate.
  CHECK_THROWS_AS(parse_config("T = 50\nbeta_end = 0.02\n"), ValidationError);
  CHECK_NOTHROW(parse_config("T = 50\nbeta_end = 0.02\nhr_mode = standard\nablate_coeffs =\n"));
}

TEST_CASE("training hash tracks only training keys") {
  const RunConfig base;
  RunConfig cfg = base;
  set_config_value(cfg, "hr_steps", "5");
  set_config_value(cfg, "data_dir", "elsewhere");
  set_config_value(cfg, "max_steps", "7");
  CHECK(cfg.training_hash() == base.training_hash());
  set_config_value(cfg, "learning_rate", "0.001");
  CHECK(cfg.training_hash() != base.training_hash());
}

TEST_CASE("derived stage and training settings") {
  RunConfig cfg;
  CHECK(cfg.effective_tau() == 40);
  cfg.tau = 17;
  CHECK(cfg.effective_tau() == 17);
  const PipelineConfig pc = cfg.pipeline_config(9);
  CHECK(pc.seed == 9);
  CHECK(pc.low.sigma == 2);
  CHECK(pc.high.mode == StageMode::residual);
  CHECK(pc.high.coeffs.alpha == 0.5);
  cfg.hr_mode = StageMode::standard;
  CHECK(cfg.pipeline_config(0).high.coeffs.beta == 0.0);
  const TrainConfig tc = cfg.train_config();
  CHECK(tc.batch_size == cfg.batch_size);
  CHECK(tc.max_steps == cfg.max_steps);
}
