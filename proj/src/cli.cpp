#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <string>

#include "dsvton/commands.hpp"
#include "dsvton/errors.hpp"

namespace dsvton {

namespace {

void check_threads_env() {
  const char* env = std::getenv("DSVTON_THREADS");
  if (env == nullptr) return;
  const std::string v(env);
  std::size_t used = 0;
  int n = 0;
  try {
    n = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || n < 1) {
    throw ValidationError("DSVTON_THREADS must be a positive integer, got '" + v + "'");
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-scale residual-guided diffusion try-on (desk scale)", "dsvton"};
  app.require_subcommand(1);

  std::string config_path;
  std::string stage_text;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool force_resume = false;
  std::string fault;
  std::vector<std::string> overrides;

  auto common = [&](CLI::App* sub, bool with_stage) {
    sub->add_option("--config", config_path, "key = value config file (defaults apply when omitted)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--set", overrides, "override one config key (key=value), repeatable");
    if (with_stage) sub->add_option("--stage", stage_text, "lr or hr")->check(CLI::IsMember({"lr", "hr"}));
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  common(gen, true);
  CLI::App* train = app.add_subcommand("train", "train one stage's denoiser (resumable)");
  common(train, true);
  train->add_flag("--force-resume", force_resume, "resume even if the training config changed");
  CLI::App* sample = app.add_subcommand("sample", "run the pipeline on one person/garment pair");
  common(sample, false);
  CLI::App* eval = app.add_subcommand("eval", "score the configured pipeline on the eval split");
  common(eval, false);
  CLI::App* ablate = app.add_subcommand("ablate", "sigma / coefficient / baseline sweep");
  common(ablate, false);
  ablate->add_flag("--force-resume", force_resume, "resume cell training even if the config changed");
  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference gradient check per layer group");
  common(grad, false);
  grad->add_option("--inject-fault", fault, "scale one layer group's analytic gradient by 1.5");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    check_threads_env();
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    CLI::App* sub = app.get_subcommands().front();
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (sub->count("--seed") > 0) cfg.seed = seed;
    cfg.validate();

    CommandOptions opt;
    if (!stage_text.empty()) opt.stage = parse_dataset_stage(stage_text);
    opt.out = out_dir;
    opt.force_resume = force_resume;
    opt.inject_fault = fault;

    if (sub == gen) return cmd_gen_data(cfg, opt, out);
    if (sub == train) return cmd_train(cfg, opt, out);
    if (sub == sample) return cmd_sample(cfg, opt, out);
    if (sub == eval) return cmd_eval(cfg, opt, out);
    if (sub == ablate) return cmd_ablate(cfg, opt, out);
    return cmd_grad_check(cfg, opt, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dsvton
