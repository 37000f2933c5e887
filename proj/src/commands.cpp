#include "dsvton/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "dsvton/checkpoint.hpp"
#include "dsvton/dataset.hpp"
#include "dsvton/errors.hpp"
#include "dsvton/evaluate.hpp"
#include "dsvton/io.hpp"
#include "dsvton/pipeline.hpp"
#include "dsvton/random.hpp"
#include "dsvton/train.hpp"

namespace dsvton {

namespace fs = std::filesystem;

namespace {

// Seed tags: every lr model shares one init/batch stream and every hr model
// another, so ablation cells differ only in what they are trained on.
constexpr std::uint64_t kLrModelTag = 1;
constexpr std::uint64_t kHrModelTag = 2;
constexpr std::uint64_t kHeldoutTag = 3;
constexpr std::uint64_t kGradCheckTag = 4;

fs::path out_dir(const CommandOptions& opt, const std::string& fallback) {
  return fs::path(opt.out.empty() ? fallback : opt.out);
}

DatasetStage stage_or(const CommandOptions& opt, DatasetStage fallback) {
  return opt.stage.value_or(fallback);
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

TrainSpec hr_spec(StageMode mode, const ResidualCoefficients& coeffs) {
  if (mode == StageMode::residual) return {DiffusionMode::residual, coeffs};
  return {};
}

void check_schedule(const Checkpoint& ckpt, const NoiseSchedule& sched, const std::string& slot) {
  if (ckpt.betas != sched.betas()) {
    throw ValidationError(slot + " checkpoint was trained with a different noise schedule");
  }
}

/// Checks that an hr checkpoint was trained for the configured high stage.
void check_hr_mode(const Checkpoint& ckpt, StageMode mode, const ResidualCoefficients& coeffs) {
  const TrainSpec want = hr_spec(mode, coeffs);
  if (ckpt.spec.mode != want.mode) {
    throw ValidationError("hr checkpoint was trained for the " +
                          std::string(ckpt.spec.mode == DiffusionMode::residual ? "residual" : "standard") +
                          " objective but hr_mode is " + to_string(mode));
  }
  if (want.mode == DiffusionMode::residual &&
      (ckpt.spec.coeffs.alpha != coeffs.alpha || ckpt.spec.coeffs.beta != coeffs.beta)) {
    throw ValidationError("hr checkpoint residual coefficients differ from alpha/beta in the config");
  }
}

Checkpoint load_stage_checkpoint(const std::string& path, DatasetStage stage, const std::string& key,
                                 const NoiseSchedule& sched) {
  if (path.empty()) throw ValidationError("config key '" + key + "' must name a checkpoint");
  Checkpoint ckpt = load_checkpoint(path);
  require_stage(ckpt, stage, to_string(stage));
  check_schedule(ckpt, sched, to_string(stage));
  return ckpt;
}

StageConfig low_stage(const RunConfig& cfg, int sigma) {
  StageConfig s = cfg.pipeline_config(0).low;
  s.sigma = sigma;
  return s;
}

/// The guide an lr model produces for one stored sample, exactly as gen-data
/// writes it for hr datasets.
Image lr_guide(const StoredSample& s, std::uint64_t dataset_seed, const StageConfig& low,
               const DenoiserParams& lr, const NoiseSchedule& sched) {
  const Image result = run_stage(downsample(s.person, low.sigma), downsample(s.garment, low.sigma), nullptr, low,
                                 lr, sched, guide_seed_for(dataset_seed, s.body_seed));
  return quantize_8bit(result);
}

std::vector<TrainExample> lr_examples(const std::vector<StoredSample>& samples, int sigma) {
  std::vector<TrainExample> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const StoredSample& s = samples[i];
    out[i] = {downsample(s.target, sigma), downsample(s.person, sigma), downsample(s.garment, sigma), {}};
  });
  return out;
}

/// Full-resolution examples; `guides` (at H / sigma) are attached for
/// residual training.
std::vector<TrainExample> hr_examples(const std::vector<StoredSample>& samples, const std::vector<Image>* guides,
                                      int sigma) {
  std::vector<TrainExample> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const StoredSample& s = samples[i];
    out[i] = {s.target, s.person, s.garment, {}};
    if (guides) out[i].guide = upsample((*guides)[i], sigma);
  });
  return out;
}

std::vector<Image> stored_guides(const StoredDataset& ds) {
  std::vector<Image> out;
  out.reserve(ds.samples.size());
  for (const StoredSample& s : ds.samples) {
    if (!s.guide) throw ValidationError("hr dataset sample without a guide");
    out.push_back(*s.guide);
  }
  return out;
}

struct ModelJob {
  std::string name;
  DatasetStage stage = DatasetStage::lr;
  int sigma = 1;
  TrainSpec spec;
  std::uint64_t config_hash = 0;
  fs::path checkpoint;
  fs::path loss_csv;     // empty: not written
  fs::path heldout_csv;  // empty: not written
};

/// Keeps the loss-curve rows up to and including `step`.
std::string loss_rows_until(const fs::path& path, std::int64_t step) {
  std::string kept = "step,loss,learning_rate\n";
  if (path.empty() || !fs::exists(path)) return kept;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stoll(line.substr(0, comma)) > step) break;
    kept += line + "\n";
  }
  return kept;
}

/// Trains (or resumes) one model to cfg.max_steps and returns its checkpoint.
Checkpoint train_model(const ModelJob& job, const std::vector<TrainExample>& examples,
                       const std::vector<TrainExample>* heldout, const RunConfig& cfg, bool force_resume,
                       std::ostream& log) {
  const NoiseSchedule sched = cfg.schedule();
  const std::uint64_t tag = job.stage == DatasetStage::lr ? kLrModelTag : kHrModelTag;
  TrainConfig tc = cfg.train_config();
  tc.seed = derive_seed(cfg.seed, {tag, 0x7A});
  tc.validate();
  const std::uint64_t init_seed = derive_seed(cfg.seed, {tag});

  Checkpoint ckpt;
  if (fs::exists(job.checkpoint)) {
    ckpt = load_checkpoint(job.checkpoint);
    require_stage(ckpt, job.stage, job.name);
    if (ckpt.config_hash != job.config_hash && !force_resume) {
      throw ValidationError(job.checkpoint.string() +
                            " was written under a different training configuration; use --force-resume to "
                            "continue it anyway");
    }
    if (!(ckpt.trainer.params.config == cfg.network) || ckpt.betas != sched.betas() || ckpt.sigma != job.sigma ||
        ckpt.spec.mode != job.spec.mode) {
      throw ValidationError(job.checkpoint.string() + " cannot be resumed: network, schedule or stage differ");
    }
    if (ckpt.trainer.step > tc.max_steps) {
      throw ValidationError(job.checkpoint.string() + " is already past max_steps");
    }
    log << job.name << ": resuming at step " << ckpt.trainer.step << "\n";
  } else {
    ckpt.stage = job.stage;
    ckpt.betas = sched.betas();
    ckpt.sigma = job.sigma;
    ckpt.spec = job.spec;
    ckpt.trainer = fresh_trainer(cfg.network, init_seed);
  }
  ckpt.config_hash = job.config_hash;
  if (ckpt.trainer.step == tc.max_steps && fs::exists(job.checkpoint)) {
    log << job.name << ": already trained (" << tc.max_steps << " steps)\n";
    return ckpt;
  }

  std::string curve = loss_rows_until(job.loss_csv, ckpt.trainer.step);
  auto save = [&] {
    save_checkpoint(job.checkpoint, ckpt);
    if (!job.loss_csv.empty()) atomic_write(job.loss_csv, curve);
  };
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t start = ckpt.trainer.step;
  train(ckpt.trainer, examples, sched, job.spec, tc, [&](std::int64_t step, double loss) {
    curve += std::to_string(step) + "," + format_number(loss) + "," + format_number(tc.rate_at(step - 1)) + "\n";
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < tc.max_steps) save();
    if (step % 100 == 0 || step == tc.max_steps) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << job.name << ": step " << step << "/" << tc.max_steps << " loss " << format_number(loss) << " ("
          << short_number(secs / static_cast<double>(step - start)) << " s/step)\n";
    }
  });
  save();

  if (heldout && !job.heldout_csv.empty() && !heldout->empty()) {
    const std::uint64_t hseed = derive_seed(cfg.seed, {kHeldoutTag});
    const double before = heldout_loss(init_params(cfg.network, init_seed), *heldout, sched, job.spec, hseed);
    const double after = heldout_loss(ckpt.trainer.params, *heldout, sched, job.spec, hseed);
    atomic_write(job.heldout_csv, "step,heldout_loss\n0," + format_number(before) + "\n" +
                                      std::to_string(ckpt.trainer.step) + "," + format_number(after) + "\n");
    log << job.name << ": held-out loss " << format_number(before) << " -> " << format_number(after) << "\n";
  }
  return ckpt;
}

RunConfig with_cell(RunConfig cfg, int sigma, StageMode mode, const ResidualCoefficients& coeffs, bool dual) {
  cfg.sigma = sigma;
  cfg.hr_mode = mode;
  cfg.alpha = coeffs.alpha;
  cfg.beta = coeffs.beta;
  cfg.dual_scale = dual;
  return cfg;
}

StoredDataset read_eval_split(const RunConfig& cfg) {
  const fs::path root(cfg.data_dir);
  for (DatasetStage stage : {DatasetStage::lr, DatasetStage::hr}) {
    const fs::path dir = dataset_dir(root, stage, DatasetSplit::eval);
    if (fs::exists(dir / "manifest.txt")) return read_dataset(dir);
  }
  throw ValidationError("no eval set under " + root.string() + " (run gen-data first)");
}

void check_eval_dims(const StoredDataset& ds, const RunConfig& cfg) {
  if (ds.header.height != cfg.height || ds.header.width != cfg.width) {
    throw ValidationError("dataset resolution " + std::to_string(ds.header.height) + "x" +
                          std::to_string(ds.header.width) + " differs from the config");
  }
}

std::string describe_row(const EvalRow& r) {
  return r.method + ": pixel_mse " + short_number(r.pixel_mse) + ", mmd " + short_number(r.mmd) + " (perm sd " +
         short_number(r.mmd_perm_std) + "), iou " + short_number(r.silhouette_iou) + ", outside/inside mae " +
         short_number(r.outside_inside_ratio);
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const DatasetStage stage = stage_or(opt, DatasetStage::lr);
  const fs::path root = out_dir(opt, cfg.data_dir);
  const NoiseSchedule sched = cfg.schedule();

  DatasetOptions dopts;
  dopts.height = cfg.height;
  dopts.width = cfg.width;
  dopts.stage = stage;
  dopts.sigma = cfg.sigma;
  dopts.guide_source = cfg.guide_source;
  dopts.complexity_mix = cfg.complexity_mix;
  dopts.perturb = cfg.perturb;

  Checkpoint lr;
  if (stage == DatasetStage::hr && cfg.guide_source == GuideSource::model) {
    if (cfg.lr_checkpoint.empty()) {
      throw ValidationError(
          "hr data needs guides: set lr_checkpoint to a trained lr model, or guide_source = ground_truth");
    }
    lr = load_stage_checkpoint(cfg.lr_checkpoint, DatasetStage::lr, "lr_checkpoint", sched);
    if (lr.sigma != cfg.sigma) throw ValidationError("lr checkpoint sigma differs from the config");
    const StageConfig low = low_stage(cfg, cfg.sigma);
    dopts.lr_sampler = [&lr, &sched, low](const Image& p, const Image& g, std::uint64_t seed) {
      return run_stage(p, g, nullptr, low, lr.params(), sched, seed);
    };
  }

  for (DatasetSplit split : {DatasetSplit::train, DatasetSplit::eval}) {
    const std::size_t n = static_cast<std::size_t>(split == DatasetSplit::train ? cfg.n_train : cfg.n_eval);
    dopts.split = split;
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<TryonSample> samples = make_dataset(n, cfg.seed, dopts);
    DatasetHeader header;
    header.stage = stage;
    header.split = split;
    header.seed = cfg.seed;
    header.n = n;
    header.height = cfg.height;
    header.width = cfg.width;
    header.sigma = cfg.sigma;
    header.guide_source = cfg.guide_source;
    header.complexity_mix = cfg.complexity_mix;
    header.perturb = cfg.perturb;
    const fs::path dir = dataset_dir(root, stage, split);
    write_dataset(dir, header, samples);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << "wrote " << n << " " << to_string(split) << " samples to " << dir.string() << " ("
        << short_number(secs) << " s)\n";
  }
  return 0;
}

int cmd_train(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (!opt.stage) throw ValidationError("train needs --stage lr or --stage hr");
  const DatasetStage stage = *opt.stage;
  const fs::path out = out_dir(opt, ".");
  const fs::path root(cfg.data_dir);
  const StoredDataset train_set = read_dataset(dataset_dir(root, stage, DatasetSplit::train));
  check_eval_dims(train_set, cfg);
  const fs::path eval_dir = dataset_dir(root, stage, DatasetSplit::eval);
  std::optional<StoredDataset> eval_set;
  if (fs::exists(eval_dir / "manifest.txt")) eval_set = read_dataset(eval_dir);

  ModelJob job;
  job.name = to_string(stage);
  job.stage = stage;
  job.config_hash = cfg.training_hash();
  job.checkpoint = out / (to_string(stage) + ".ckpt");
  job.loss_csv = out / (to_string(stage) + "_loss.csv");
  job.heldout_csv = out / (to_string(stage) + "_heldout.csv");

  std::vector<TrainExample> examples;
  std::vector<TrainExample> heldout;
  if (stage == DatasetStage::lr) {
    job.sigma = cfg.sigma;
    examples = lr_examples(train_set.samples, cfg.sigma);
    if (eval_set) heldout = lr_examples(eval_set->samples, cfg.sigma);
    log << "lr stage trains at " << cfg.height / cfg.sigma << "x" << cfg.width / cfg.sigma << "\n";
  } else {
    job.sigma = 1;
    job.spec = hr_spec(cfg.hr_mode, {cfg.alpha, cfg.beta});
    const bool residual = job.spec.mode == DiffusionMode::residual;
    if (residual && train_set.header.sigma != cfg.sigma) {
      throw ValidationError("hr dataset guides were made at sigma " + std::to_string(train_set.header.sigma) +
                            ", config has sigma " + std::to_string(cfg.sigma));
    }
    std::vector<Image> guides;
    if (residual) guides = stored_guides(train_set);
    examples = hr_examples(train_set.samples, residual ? &guides : nullptr, cfg.sigma);
    if (eval_set) {
      std::vector<Image> eval_guides;
      if (residual) eval_guides = stored_guides(*eval_set);
      heldout = hr_examples(eval_set->samples, residual ? &eval_guides : nullptr, cfg.sigma);
    }
    log << "hr stage trains at " << cfg.height << "x" << cfg.width << " ("
        << (residual ? "residual" : "standard") << " objective)\n";
  }
  train_model(job, examples, &heldout, cfg, opt.force_resume, log);
  log << "checkpoint: " << job.checkpoint.string() << "\n";
  return 0;
}

int cmd_sample(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const fs::path out = out_dir(opt, ".");
  const NoiseSchedule sched = cfg.schedule();
  if (cfg.person.empty() || cfg.garment.empty()) {
    throw ValidationError("sample needs config keys 'person' and 'garment'");
  }
  const Image person = read_pnm(cfg.person);
  const Image garment = read_pnm(cfg.garment);
  if (person.height() != cfg.height || person.width() != cfg.width || garment.height() != cfg.height ||
      garment.width() != cfg.width) {
    throw ValidationError("person and garment must be " + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width));
  }
  const Checkpoint hr = load_stage_checkpoint(cfg.hr_checkpoint, DatasetStage::hr, "hr_checkpoint", sched);
  check_hr_mode(hr, cfg.hr_mode, {cfg.alpha, cfg.beta});
  const PipelineConfig pc = cfg.pipeline_config(cfg.seed);

  if (!cfg.dual_scale) {
    if (cfg.hr_mode == StageMode::noising_denoising) {
      throw ValidationError("the single-stage pipeline has no guide for noising_denoising");
    }
    StageConfig high = pc.high;
    // Residual coefficients with beta = 0 ignore the guide entirely.
    const Image zero_guide(person.height(), person.width(), person.channels());
    if (high.mode == StageMode::residual && high.coeffs.beta != 0.0) {
      throw ValidationError("the single-stage pipeline has no guide; use hr_mode = standard or beta = 0");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Image result = run_stage(person, garment, &zero_guide, high, hr.params(), sched, high_stage_seed(cfg.seed));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_pnm(out / "hr.ppm", result);
    log << "hr stage: " << short_number(secs) << " s\n";
    return 0;
  }

  const Checkpoint lr = load_stage_checkpoint(cfg.lr_checkpoint, DatasetStage::lr, "lr_checkpoint", sched);
  if (lr.sigma != cfg.sigma) throw ValidationError("lr checkpoint sigma differs from the config");
  const DualScaleResult r = run_dual_scale(person, garment, pc, lr.params(), hr.params(), sched);
  write_pnm(out / "lr.ppm", r.lr);
  write_pnm(out / "hr.ppm", r.hr);
  log << "lr stage: " << short_number(r.lr_seconds) << " s (" << r.lr.height() << "x" << r.lr.width() << ")\n";
  log << "hr stage: " << short_number(r.hr_seconds) << " s (" << r.hr.height() << "x" << r.hr.width() << ")\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const fs::path out = out_dir(opt, ".");
  const NoiseSchedule sched = cfg.schedule();
  StoredDataset ds = read_eval_split(cfg);
  check_eval_dims(ds, cfg);
  const Checkpoint hr = load_stage_checkpoint(cfg.hr_checkpoint, DatasetStage::hr, "hr_checkpoint", sched);
  check_hr_mode(hr, cfg.hr_mode, {cfg.alpha, cfg.beta});
  std::optional<Checkpoint> lr;
  if (cfg.dual_scale) {
    lr = load_stage_checkpoint(cfg.lr_checkpoint, DatasetStage::lr, "lr_checkpoint", sched);
    if (lr->sigma != cfg.sigma) throw ValidationError("lr checkpoint sigma differs from the config");
  } else if (cfg.hr_mode != StageMode::standard) {
    throw ValidationError("the single-stage pipeline needs hr_mode = standard");
  }
  const EvalSet set = prepare_eval_set(std::move(ds), cfg.feature_seed);

  std::vector<EvalRow> rows;
  EvalRow main;
  main.hr_mode = to_string(cfg.hr_mode);
  main.sigma = cfg.dual_scale ? cfg.sigma : 1;
  if (cfg.hr_mode == StageMode::residual) {
    main.alpha = cfg.alpha;
    main.beta = cfg.beta;
  }
  main.tau = cfg.hr_mode == StageMode::noising_denoising ? cfg.effective_tau() : 0;

  std::vector<Image> hr_out(set.samples.size());
  std::vector<Image> lr_up(set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const StoredSample& s = set.samples[i];
    const std::uint64_t seed = eval_sample_seed(cfg.seed, s.index);
    const PipelineConfig pc = cfg.pipeline_config(seed);
    if (cfg.dual_scale) {
      const DualScaleResult r = run_dual_scale(s.person, s.garment, pc, lr->params(), hr.params(), sched);
      hr_out[i] = r.hr;
      lr_up[i] = upsample(r.lr, cfg.sigma);
    } else {
      hr_out[i] = run_stage(s.person, s.garment, nullptr, pc.high, hr.params(), sched, high_stage_seed(seed));
    }
  }
  main.method = cfg.dual_scale ? "dual" : "single";
  score_outputs(main, hr_out, set, cfg.iou_threshold);
  rows.push_back(main);
  if (cfg.dual_scale) {
    EvalRow up;
    up.method = "lr_upsampled";
    up.sigma = cfg.sigma;
    up.hr_mode = "none";
    score_outputs(up, lr_up, set, cfg.iou_threshold);
    rows.push_back(up);
  }
  mark_best(rows);
  atomic_write(out / "eval.csv", eval_csv(rows));
  for (const EvalRow& r : rows) log << describe_row(r) << "\n";
  log << "wrote " << (out / "eval.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  const fs::path out = out_dir(opt, ".");
  const fs::path cells_dir = out / "cells";
  const NoiseSchedule sched = cfg.schedule();
  const ResidualCoefficients main_coeffs{cfg.alpha, cfg.beta};

  // Models: one lr model per sigma, one standard hr model, one residual hr
  // model per (sigma, coefficients) cell.
  struct Cell {
    std::string name;
    int sigma;
    StageMode mode;
    ResidualCoefficients coeffs;
    std::string lr_model;  // empty for the single-stage cell
    std::string hr_model;
  };
  std::vector<Cell> cells;
  auto residual_name = [](int sigma, const ResidualCoefficients& c) {
    return "hr_residual_s" + std::to_string(sigma) + "_a" + short_number(c.alpha) + "_b" + short_number(c.beta);
  };
  for (int sigma : cfg.ablate_sigmas) {
    if (sigma == 1) {
      cells.push_back({"single_s1", 1, StageMode::standard, ResidualCoefficients::identity(), "", "hr_standard"});
    } else {
      cells.push_back({"dual_s" + std::to_string(sigma) + "_a" + short_number(main_coeffs.alpha) + "_b" +
                           short_number(main_coeffs.beta),
                       sigma, StageMode::residual, main_coeffs, "lr_s" + std::to_string(sigma),
                       residual_name(sigma, main_coeffs)});
    }
  }
  for (const ResidualCoefficients& c : cfg.ablate_coeffs) {
    if (c.alpha == main_coeffs.alpha && c.beta == main_coeffs.beta) continue;
    cells.push_back({"dual_s" + std::to_string(cfg.sigma) + "_a" + short_number(c.alpha) + "_b" +
                         short_number(c.beta),
                     cfg.sigma, StageMode::residual, c, "lr_s" + std::to_string(cfg.sigma),
                     residual_name(cfg.sigma, c)});
  }
  if (cfg.ablate_nd) {
    cells.push_back({"nd_s" + std::to_string(cfg.sigma) + "_tau" + std::to_string(cfg.effective_tau()), cfg.sigma,
                     StageMode::noising_denoising, ResidualCoefficients::identity(),
                     "lr_s" + std::to_string(cfg.sigma), "hr_standard"});
  }
  for (const Cell& c : cells) {
    require(cfg.height % (cfg.network.spatial_multiple() * c.sigma) == 0,
            "ablation cell " + c.name + " does not divide the resolution");
  }

  // Model table, in training order.
  struct Model {
    std::string name;
    DatasetStage stage;
    int sigma;  // lr: training scale; hr residual: guide scale
    StageMode mode;
    ResidualCoefficients coeffs;
  };
  std::vector<Model> models;
  auto add_model = [&](const Model& m) {
    for (const Model& x : models) {
      if (x.name == m.name) return;
    }
    models.push_back(m);
  };
  for (const Cell& c : cells) {
    if (!c.lr_model.empty()) {
      add_model({c.lr_model, DatasetStage::lr, c.sigma, StageMode::standard, ResidualCoefficients::identity()});
    }
  }
  for (const Cell& c : cells) {
    const StageMode hr_mode = c.mode == StageMode::residual ? StageMode::residual : StageMode::standard;
    add_model({c.hr_model, DatasetStage::hr, hr_mode == StageMode::residual ? c.sigma : 1, hr_mode, c.coeffs});
  }

  auto ckpt_path = [&](const std::string& name) { return cells_dir / (name + ".ckpt"); };
  std::vector<std::string> missing;
  for (const Model& m : models) {
    if (!fs::exists(ckpt_path(m.name))) missing.push_back(m.name);
  }
  if (!missing.empty() && !cfg.train_in_sweep) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw ValidationError("missing ablation checkpoints under " + cells_dir.string() + ":" + list +
                          " (set train_in_sweep = true to train them)");
  }

  StoredDataset eval_ds = read_eval_split(cfg);
  check_eval_dims(eval_ds, cfg);

  std::map<std::string, Checkpoint> trained;
  {
    std::optional<StoredDataset> train_ds;
    std::map<int, std::vector<Image>> guides;  // per sigma
    auto train_data = [&]() -> const StoredDataset& {
      if (!train_ds) {
        train_ds = read_dataset(dataset_dir(cfg.data_dir, DatasetStage::lr, DatasetSplit::train));
        check_eval_dims(*train_ds, cfg);
      }
      return *train_ds;
    };
    for (const Model& m : models) {
      const bool need_training = !fs::exists(ckpt_path(m.name));
      const RunConfig mcfg = with_cell(cfg, m.sigma, m.mode, m.coeffs, m.stage == DatasetStage::lr || m.sigma > 1);
      ModelJob job;
      job.name = m.name;
      job.stage = m.stage;
      job.sigma = m.stage == DatasetStage::lr ? m.sigma : 1;
      job.spec = m.stage == DatasetStage::lr ? TrainSpec{} : hr_spec(m.mode, m.coeffs);
      job.config_hash = mcfg.training_hash();
      job.checkpoint = ckpt_path(m.name);
      job.loss_csv = cells_dir / (m.name + "_loss.csv");
      if (!need_training) {
        Checkpoint c = load_checkpoint(job.checkpoint);
        require_stage(c, m.stage, m.name);
        check_schedule(c, sched, m.name);
        if (c.trainer.step < cfg.max_steps || c.config_hash != job.config_hash) {
          if (!cfg.train_in_sweep) {
            throw ValidationError(m.name + " checkpoint is incomplete or was trained under another config");
          }
        } else {
          trained.emplace(m.name, std::move(c));
          continue;
        }
      }
      const StoredDataset& data = train_data();
      std::vector<TrainExample> examples;
      if (m.stage == DatasetStage::lr) {
        examples = lr_examples(data.samples, m.sigma);
      } else if (m.mode == StageMode::residual) {
        if (!guides.count(m.sigma)) {
          const Checkpoint& lr = trained.at("lr_s" + std::to_string(m.sigma));
          const StageConfig low = low_stage(cfg, m.sigma);
          std::vector<Image> g(data.samples.size());
          parallel_for(data.samples.size(), [&](std::size_t i) {
            g[i] = lr_guide(data.samples[i], data.header.seed, low, lr.params(), sched);
          });
          guides.emplace(m.sigma, std::move(g));
          log << "guides for sigma " << m.sigma << " ready\n";
        }
        examples = hr_examples(data.samples, &guides.at(m.sigma), m.sigma);
      } else {
        examples = hr_examples(data.samples, nullptr, 1);
      }
      trained.emplace(m.name, train_model(job, examples, nullptr, mcfg, opt.force_resume, log));
    }
  }

  const EvalSet set = prepare_eval_set(std::move(eval_ds), cfg.feature_seed);
  std::vector<EvalRow> rows;
  for (const Cell& c : cells) {
    const DenoiserParams& hr = trained.at(c.hr_model).params();
    const DenoiserParams* lr = c.lr_model.empty() ? nullptr : &trained.at(c.lr_model).params();
    PipelineConfig base = cfg.pipeline_config(0);
    base.low.sigma = c.sigma;
    base.high.mode = c.mode;
    base.high.coeffs = c.coeffs;
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Image> outputs = run_eval_sampler(set, cfg.seed, [&](const StoredSample& s, std::uint64_t seed) {
      PipelineConfig pc = base;
      pc.seed = seed;
      if (!lr) return run_stage(s.person, s.garment, nullptr, pc.high, hr, sched, high_stage_seed(seed));
      return run_dual_scale(s.person, s.garment, pc, *lr, hr, sched).hr;
    });
    EvalRow row;
    row.method = c.name;
    row.sigma = c.sigma;
    row.hr_mode = to_string(c.mode);
    row.alpha = c.coeffs.alpha;
    row.beta = c.coeffs.beta;
    row.tau = c.mode == StageMode::noising_denoising ? cfg.effective_tau() : 0;
    score_outputs(row, outputs, set, cfg.iou_threshold);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << describe_row(row) << " [" << short_number(secs) << " s]\n";
    rows.push_back(row);
  }
  mark_best(rows);
  atomic_write(out / "ablate.csv", eval_csv(rows));
  for (const EvalRow& r : rows) {
    if (r.best) log << "best cell: " << r.method << "\n";
  }
  log << "wrote " << (out / "ablate.csv").string() << "\n";
  return 0;
}

int cmd_grad_check(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  constexpr double kTolerance = 1e-4;
  const NoiseSchedule sched = cfg.schedule();
  const DenoiserParams params = init_params(cfg.network, derive_seed(cfg.seed, {kGradCheckTag}));
  const Index side = cfg.network.spatial_multiple() * 4;
  Rng rng(derive_seed(cfg.seed, {kGradCheckTag, 1}));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> pick_t(1, sched.T());
  auto random_image = [&](Index c) {
    Image img(side, side, c);
    for (Index i = 0; i < img.pixels().size(); ++i) img.pixels()(i) = unit(rng);
    return img;
  };
  std::vector<TrainItem> batch;
  for (int b = 0; b < 2; ++b) {
    TrainItem item;
    item.x_in = gaussian_image(side, side, cfg.network.latent_channels, rng);
    item.person = random_image(cfg.network.person_channels);
    item.garment = random_image(cfg.network.garment_channels);
    item.t = pick_t(rng);
    item.target = gaussian_image(side, side, cfg.network.latent_channels, rng);
    batch.push_back(std::move(item));
  }
  GradientFault fault;
  fault.group = opt.inject_fault;
  const int coords = std::max<int>(120, static_cast<int>(params.layout.tensors().size()) * 2);
  const GradientCheckReport report =
      gradient_check(params, batch, coords, 1e-4, derive_seed(cfg.seed, {kGradCheckTag, 2}), fault);
  bool ok = true;
  log << "group,coords,max_rel_error,status\n";
  for (const auto& [group, err] : report.group_max_rel_error) {
    const bool pass = err < kTolerance;
    ok = ok && pass;
    log << group << "," << report.group_coords.at(group) << "," << format_number(err) << ","
        << (pass ? "ok" : "FAIL") << "\n";
  }
  log << "max relative error " << format_number(report.max_rel_error) << " (tolerance 1e-4): "
      << (ok ? "pass" : "FAIL") << "\n";
  return ok ? 0 : 2;
}

}  // namespace dsvton
