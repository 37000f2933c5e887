#include "doctest.h"

#include <cstdlib>
#include <sstream>

#include "dsvton/checkpoint.hpp"
#include "dsvton/commands.hpp"
#include "dsvton/io.hpp"
#include "test_helpers.hpp"

using namespace dsvton;
using dsvton::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dsvton");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string tiny_config(const TempDir& dir) {
  const std::string text = "base_channels = 4\ndepth = 2\nattn_level = 1\ntime_embed_dim = 8\n"
                           "height = 32\nwidth = 32\nn_train = 6\nn_eval = 4\nmax_steps = 4\n"
                           "warmup_steps = 2\ncheckpoint_every = 2\nbatch_size = 2\nlr_steps = 3\nhr_steps = 3\n"
                           "data_dir = " + (dir / "data").string() + "\n" +
                           "lr_checkpoint = " + (dir / "run/lr.ckpt").string() + "\n" +
                           "hr_checkpoint = " + (dir / "run/hr.ckpt").string() + "\n" +
                           "person = " + (dir / "data/lr/eval/00000_person.ppm").string() + "\n" +
                           "garment = " + (dir / "data/lr/eval/00001_garment.ppm").string() + "\n";
  const auto path = dir / "tiny.conf";
  atomic_write(path, text);
  return path.string();
}

}  // namespace

TEST_CASE("usage and validation errors exit with code 1") {
  TempDir dir("cli_usage");
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"train"}).code == 1);  // no --stage
  CHECK(cli({"train", "--stage", "mid"}).code == 1);
  atomic_write(dir / "bad.conf", "bogus_key = 1\n");
  const Run bad = cli({"gen-data", "--config", (dir / "bad.conf").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("bogus_key") != std::string::npos);
  CHECK(cli({"eval", "--set", "sigma=3"}).code == 1);
  CHECK(cli({"sample", "--config", (dir / "missing.conf").string()}).code == 1);
}

TEST_CASE("DSVTON_THREADS must be a positive integer") {
  TempDir dir("cli_threads");
  const std::string conf = tiny_config(dir);
  setenv("DSVTON_THREADS", "zero", 1);
  CHECK(cli({"gen-data", "--config", conf}).code == 1);
  setenv("DSVTON_THREADS", "2", 1);
  CHECK(cli({"gen-data", "--config", conf}).code == 0);
  unsetenv("DSVTON_THREADS");
}

TEST_CASE("grad-check passes and a corrupted gradient fails") {
  const Run ok = cli({"grad-check", "--set", "base_channels=4", "--set", "depth=2", "--set", "attn_level=1"});
  CHECK(ok.code == 0);
  for (const char* group : {"attention", "decoder", "encoder", "output", "reference", "time_embed"}) {
    CHECK(ok.out.find(std::string("\n") + group + ",") != std::string::npos);
  }
  const Run bad = cli({"grad-check", "--set", "base_channels=4", "--set", "depth=2", "--set", "attn_level=1",
                       "--inject-fault", "decoder"});
  CHECK(bad.code == 2);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("end to end: gen-data, train, sample, eval") {
  TempDir dir("cli_e2e");
  const std::string conf = tiny_config(dir);
  const std::string run = (dir / "run").string();

  // hr data needs an lr model (or ground-truth guides).
  CHECK(cli({"gen-data", "--stage", "hr", "--config", conf}).code == 1);

  REQUIRE(cli({"gen-data", "--config", conf}).code == 0);
  const std::string manifest = read_file(dir / "data/lr/train/manifest.txt");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 2 + 6);

  // Train needs data of its stage.
  CHECK(cli({"train", "--stage", "hr", "--config", conf, "--out", run}).code == 1);

  const Run lr = cli({"train", "--stage", "lr", "--config", conf, "--out", run});
  REQUIRE(lr.code == 0);
  CHECK(lr.out.find("trains at 16x16") != std::string::npos);
  const std::string curve = read_file(dir / "run/lr_loss.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 1 + 4);
  CHECK(load_checkpoint(dir / "run/lr.ckpt").sigma == 2);

  REQUIRE(cli({"gen-data", "--stage", "hr", "--config", conf}).code == 0);
  REQUIRE(cli({"train", "--stage", "hr", "--config", conf, "--out", run}).code == 0);

  // Swapped checkpoint slots are rejected.
  CHECK(cli({"sample", "--config", conf, "--out", run, "--set", "lr_checkpoint=" + run + "/hr.ckpt"}).code == 1);

  const Run s1 = cli({"sample", "--config", conf, "--out", (dir / "s1").string()});
  REQUIRE(s1.code == 0);
  CHECK(s1.out.find("lr stage:") != std::string::npos);
  CHECK(s1.out.find("hr stage:") != std::string::npos);
  REQUIRE(cli({"sample", "--config", conf, "--out", (dir / "s2").string()}).code == 0);
  CHECK(read_file(dir / "s1/hr.ppm") == read_file(dir / "s2/hr.ppm"));
  CHECK(read_file(dir / "s1/lr.ppm") == read_file(dir / "s2/lr.ppm"));
  CHECK(read_pnm(dir / "s1/lr.ppm").height() == 16);
  CHECK(read_pnm(dir / "s1/hr.ppm").height() == 32);

  REQUIRE(cli({"eval", "--config", conf, "--out", (dir / "e1").string()}).code == 0);
  REQUIRE(cli({"eval", "--config", conf, "--out", (dir / "e2").string()}).code == 0);
  const std::string csv = read_file(dir / "e1/eval.csv");
  CHECK(csv == read_file(dir / "e2/eval.csv"));
  CHECK(csv.find("\ndual,2,residual,0.5,0.5,") != std::string::npos);
  CHECK(csv.find("\nlr_upsampled,") != std::string::npos);
}

TEST_CASE("train resumes bitwise and guards its config hash") {
  TempDir dir("cli_resume");
  const std::string conf = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", conf}).code == 0);
  const std::string a = (dir / "a").string();
  const std::string b = (dir / "b").string();
  REQUIRE(cli({"train", "--stage", "lr", "--config", conf, "--out", a}).code == 0);
  REQUIRE(cli({"train", "--stage", "lr", "--config", conf, "--out", b, "--set", "max_steps=2"}).code == 0);
  REQUIRE(cli({"train", "--stage", "lr", "--config", conf, "--out", b}).code == 0);
  CHECK(read_file(dir / "a/lr.ckpt") == read_file(dir / "b/lr.ckpt"));
  CHECK(read_file(dir / "a/lr_loss.csv") == read_file(dir / "b/lr_loss.csv"));

  // Changing a training key blocks resumption unless forced.
  const std::string c = (dir / "c").string();
  REQUIRE(cli({"train", "--stage", "lr", "--config", conf, "--out", c, "--set", "max_steps=2"}).code == 0);
  CHECK(cli({"train", "--stage", "lr", "--config", conf, "--out", c, "--set", "learning_rate=0.01"}).code == 1);
  CHECK(cli({"train", "--stage", "lr", "--config", conf, "--out", c, "--set", "learning_rate=0.01",
             "--force-resume"}).code == 0);
  CHECK(load_checkpoint(dir / "c/lr.ckpt").trainer.step == 4);
}

TEST_CASE("single-stage pipeline with identity coefficients matches the standard stage") {
  TempDir dir("cli_single");
  const std::string conf = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", conf, "--set", "guide_source=ground_truth"}).code == 0);
  REQUIRE(cli({"gen-data", "--config", conf, "--stage", "hr", "--set", "guide_source=ground_truth"}).code == 0);
  const std::string run = (dir / "run").string();
  // An hr model trained with alpha = 1, beta = 0 has the standard objective.
  REQUIRE(cli({"train", "--stage", "hr", "--config", conf, "--out", run, "--set", "alpha=1", "--set", "beta=0",
               "--set", "guide_source=ground_truth"}).code == 0);
  const Checkpoint ck = load_checkpoint(dir / "run/hr.ckpt");
  CHECK(ck.spec.coeffs.alpha == 1.0);
  CHECK(ck.spec.coeffs.beta == 0.0);

  REQUIRE(cli({"sample", "--config", conf, "--out", (dir / "res").string(), "--set", "pipeline=single",
               "--set", "alpha=1", "--set", "beta=0"}).code == 0);
  // Re-tag the same weights as a standard model and sample single-stage.
  Checkpoint std_ck = ck;
  std_ck.spec = {};
  save_checkpoint(dir / "run/hr_std.ckpt", std_ck);
  REQUIRE(cli({"sample", "--config", conf, "--out", (dir / "std").string(), "--set", "pipeline=single",
               "--set", "hr_mode=standard", "--set", "hr_checkpoint=" + run + "/hr_std.ckpt"}).code == 0);
  CHECK(read_file(dir / "res/hr.ppm") == read_file(dir / "std/hr.ppm"));
}
