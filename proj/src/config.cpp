#include "dsvton/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "dsvton/errors.hpp"
#include "dsvton/io.hpp"

namespace dsvton {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw ValidationError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

int parse_int_in(const std::string& key, const std::string& v, long long lo, long long hi) {
  const long long x = parse_int(key, v);
  if (x < lo || x > hi) {
    bad_value(key, v, "an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

double parse_double_in(const std::string& key, const std::string& v, double lo, double hi) {
  const double x = parse_double(key, v);
  if (x < lo || x > hi) bad_value(key, v, "a number in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Entry {
  std::string name;
  std::string description;
  bool affects_training;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> e;
    auto add = [&](std::string name, std::string desc, bool train, auto set, auto get) {
      e.push_back({std::move(name), std::move(desc), train, set, get});
    };
    // schedule
    add("T", "diffusion length", true,
        [](RunConfig& c, const std::string& v) { c.T = parse_int_in("T", v, 1, 100000); },
        [](const RunConfig& c) { return std::to_string(c.T); });
    add("beta_start", "first beta of the linear schedule", true,
        [](RunConfig& c, const std::string& v) {
          c.beta_start = parse_double("beta_start", v);
          if (!(c.beta_start > 0.0 && c.beta_start < 1.0)) bad_value("beta_start", v, "a value in (0, 1)");
        },
        [](const RunConfig& c) { return format_number(c.beta_start); });
    add("beta_end", "last beta of the linear schedule", true,
        [](RunConfig& c, const std::string& v) {
          c.beta_end = parse_double("beta_end", v);
          if (!(c.beta_end > 0.0 && c.beta_end < 1.0)) bad_value("beta_end", v, "a value in (0, 1)");
        },
        [](const RunConfig& c) { return format_number(c.beta_end); });
    // network
    add("base_channels", "channels of encoder level 0 (level l has base << l)", true,
        [](RunConfig& c, const std::string& v) {
          c.network.base_channels = parse_int_in("base_channels", v, 1, 1024);
        },
        [](const RunConfig& c) { return std::to_string(c.network.base_channels); });
    add("depth", "encoder/decoder levels", true,
        [](RunConfig& c, const std::string& v) { c.network.depth = parse_int_in("depth", v, 1, 8); },
        [](const RunConfig& c) { return std::to_string(c.network.depth); });
    add("attn_level", "level index carrying self-attention", true,
        [](RunConfig& c, const std::string& v) {
          c.network.attn_level = parse_int_in("attn_level", v, 0, 7);
        },
        [](const RunConfig& c) { return std::to_string(c.network.attn_level); });
    add("time_embed_dim", "sinusoidal timestep embedding width (even)", true,
        [](RunConfig& c, const std::string& v) {
          c.network.time_embed_dim = parse_int_in("time_embed_dim", v, 2, 4096);
        },
        [](const RunConfig& c) { return std::to_string(c.network.time_embed_dim); });
    // stages
    add("sigma", "low-resolution downsampling ratio (1, 2 or 4)", true,
        [](RunConfig& c, const std::string& v) {
          c.sigma = parse_int_in("sigma", v, 1, 4);
          if (c.sigma == 3) bad_value("sigma", v, "1, 2 or 4");
        },
        [](const RunConfig& c) { return std::to_string(c.sigma); });
    add("lr_steps", "DDIM steps of the low-resolution stage", false,
        [](RunConfig& c, const std::string& v) { c.lr_steps = parse_int_in("lr_steps", v, 1, 100000); },
        [](const RunConfig& c) { return std::to_string(c.lr_steps); });
    add("hr_steps", "DDIM steps of the high-resolution stage", false,
        [](RunConfig& c, const std::string& v) { c.hr_steps = parse_int_in("hr_steps", v, 1, 100000); },
        [](const RunConfig& c) { return std::to_string(c.hr_steps); });
    add("alpha", "noise weight of the residual latent", true,
        [](RunConfig& c, const std::string& v) { c.alpha = parse_double_in("alpha", v, 0.0, 1e6); },
        [](const RunConfig& c) { return format_number(c.alpha); });
    add("beta", "guide weight of the residual latent", true,
        [](RunConfig& c, const std::string& v) { c.beta = parse_double_in("beta", v, 0.0, 1e6); },
        [](const RunConfig& c) { return format_number(c.beta); });
    add("tau", "noising_denoising start timestep (0: nearest 20% of T)", false,
        [](RunConfig& c, const std::string& v) { c.tau = parse_int_in("tau", v, 0, 100000); },
        [](const RunConfig& c) { return std::to_string(c.tau); });
    add("hr_mode", "high-resolution stage: residual, noising_denoising or standard", true,
        [](RunConfig& c, const std::string& v) { c.hr_mode = parse_stage_mode(v); },
        [](const RunConfig& c) { return to_string(c.hr_mode); });
    add("pipeline", "dual (two stages) or single (high-resolution stage only)", true,
        [](RunConfig& c, const std::string& v) {
          if (v != "dual" && v != "single") bad_value("pipeline", v, "dual or single");
          c.dual_scale = v == "dual";
        },
        [](const RunConfig& c) { return std::string(c.dual_scale ? "dual" : "single"); });
    add("clip_x0", "clamp each DDIM x0 estimate to [-1, 1]", false,
        [](RunConfig& c, const std::string& v) { c.clip_x0 = parse_bool("clip_x0", v); },
        [](const RunConfig& c) { return fmt_bool(c.clip_x0); });
    // training
    add("batch_size", "examples per optimizer step", true,
        [](RunConfig& c, const std::string& v) { c.batch_size = parse_int_in("batch_size", v, 1, 4096); },
        [](const RunConfig& c) { return std::to_string(c.batch_size); });
    add("learning_rate", "AdamW learning rate", true,
        [](RunConfig& c, const std::string& v) {
          c.learning_rate = parse_double("learning_rate", v);
          if (!(c.learning_rate > 0.0)) bad_value("learning_rate", v, "a positive number");
        },
        [](const RunConfig& c) { return format_number(c.learning_rate); });
    add("weight_decay", "AdamW decoupled weight decay", true,
        [](RunConfig& c, const std::string& v) {
          c.weight_decay = parse_double_in("weight_decay", v, 0.0, 1e6);
        },
        [](const RunConfig& c) { return format_number(c.weight_decay); });
    add("warmup_steps", "linear learning-rate warmup steps", true,
        [](RunConfig& c, const std::string& v) {
          c.warmup_steps = parse_int_in("warmup_steps", v, 0, 100000000);
        },
        [](const RunConfig& c) { return std::to_string(c.warmup_steps); });
    add("lr_schedule", "learning rate after warmup: constant or cosine (anneals to 0 at max_steps)", true,
        [](RunConfig& c, const std::string& v) {
          require(v == "constant" || v == "cosine", "lr_schedule must be constant or cosine, got '" + v + "'");
          c.cosine_decay = v == "cosine";
        },
        [](const RunConfig& c) { return std::string(c.cosine_decay ? "cosine" : "constant"); });
    add("max_steps", "optimizer steps per model", false,
        [](RunConfig& c, const std::string& v) { c.max_steps = parse_int_in("max_steps", v, 0, 100000000); },
        [](const RunConfig& c) { return std::to_string(c.max_steps); });
    add("checkpoint_every", "steps between checkpoint writes during training (0: end only)", false,
        [](RunConfig& c, const std::string& v) {
          c.checkpoint_every = parse_int_in("checkpoint_every", v, 0, 100000000);
        },
        [](const RunConfig& c) { return std::to_string(c.checkpoint_every); });
    // data
    add("n_train", "training samples", true,
        [](RunConfig& c, const std::string& v) { c.n_train = parse_int_in("n_train", v, 0, 10000000); },
        [](const RunConfig& c) { return std::to_string(c.n_train); });
    add("n_eval", "evaluation samples", false,
        [](RunConfig& c, const std::string& v) { c.n_eval = parse_int_in("n_eval", v, 0, 10000000); },
        [](const RunConfig& c) { return std::to_string(c.n_eval); });
    add("height", "full-resolution height", true,
        [](RunConfig& c, const std::string& v) { c.height = parse_int_in("height", v, 16, 4096); },
        [](const RunConfig& c) { return std::to_string(c.height); });
    add("width", "full-resolution width", true,
        [](RunConfig& c, const std::string& v) { c.width = parse_int_in("width", v, 16, 4096); },
        [](const RunConfig& c) { return std::to_string(c.width); });
    add("complexity_mix", "plain,striped,patterned garment weights", true,
        [](RunConfig& c, const std::string& v) {
          const auto parts = split(v, ',');
          if (parts.size() != 3) bad_value("complexity_mix", v, "three comma-separated weights");
          double total = 0.0;
          for (std::size_t i = 0; i < 3; ++i) {
            c.complexity_mix[i] = parse_double_in("complexity_mix", parts[i], 0.0, 1e6);
            total += c.complexity_mix[i];
          }
          if (total <= 0.0) bad_value("complexity_mix", v, "weights with a positive sum");
        },
        [](const RunConfig& c) {
          return format_number(c.complexity_mix[0]) + "," + format_number(c.complexity_mix[1]) + "," +
                 format_number(c.complexity_mix[2]);
        });
    add("guide_source", "hr training guides: model (lr checkpoint) or ground_truth", true,
        [](RunConfig& c, const std::string& v) { c.guide_source = parse_guide_source(v); },
        [](const RunConfig& c) { return to_string(c.guide_source); });
    add("perturb", "add background clutter to person images", true,
        [](RunConfig& c, const std::string& v) { c.perturb = parse_bool("perturb", v); },
        [](const RunConfig& c) { return fmt_bool(c.perturb); });
    // evaluation
    add("feature_seed", "seed of the random feature projection", false,
        [](RunConfig& c, const std::string& v) { c.feature_seed = parse_u64("feature_seed", v); },
        [](const RunConfig& c) { return std::to_string(c.feature_seed); });
    add("iou_threshold", "foreground threshold for silhouette IoU", false,
        [](RunConfig& c, const std::string& v) {
          c.iou_threshold = parse_double_in("iou_threshold", v, 0.0, 2.0);
        },
        [](const RunConfig& c) { return format_number(c.iou_threshold); });
    // ablation
    add("ablate_sigmas", "sigma values swept by ablate", false,
        [](RunConfig& c, const std::string& v) {
          c.ablate_sigmas.clear();
          for (const auto& p : split(v, ',')) {
            const int s = parse_int_in("ablate_sigmas", p, 1, 4);
            if (s == 3) bad_value("ablate_sigmas", p, "1, 2 or 4");
            c.ablate_sigmas.push_back(s);
          }
        },
        [](const RunConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.ablate_sigmas.size(); ++i) {
            out += (i ? "," : "") + std::to_string(c.ablate_sigmas[i]);
          }
          return out;
        });
    add("ablate_coeffs", "alpha:beta pairs swept at sigma 2", false,
        [](RunConfig& c, const std::string& v) {
          c.ablate_coeffs.clear();
          if (v.empty()) return;
          for (const auto& p : split(v, ',')) {
            const auto ab = split(p, ':');
            if (ab.size() != 2) bad_value("ablate_coeffs", p, "alpha:beta");
            ResidualCoefficients rc{parse_double_in("ablate_coeffs", ab[0], 0.0, 1e6),
                                    parse_double_in("ablate_coeffs", ab[1], 0.0, 1e6)};
            rc.validate();
            c.ablate_coeffs.push_back(rc);
          }
        },
        [](const RunConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.ablate_coeffs.size(); ++i) {
            out += (i ? "," : "") + format_number(c.ablate_coeffs[i].alpha) + ":" + format_number(c.ablate_coeffs[i].beta);
          }
          return out;
        });
    add("ablate_nd", "include the noising_denoising cell", false,
        [](RunConfig& c, const std::string& v) { c.ablate_nd = parse_bool("ablate_nd", v); },
        [](const RunConfig& c) { return fmt_bool(c.ablate_nd); });
    add("train_in_sweep", "train missing ablation models instead of failing", false,
        [](RunConfig& c, const std::string& v) { c.train_in_sweep = parse_bool("train_in_sweep", v); },
        [](const RunConfig& c) { return fmt_bool(c.train_in_sweep); });
    // run
    add("seed", "master seed", true,
        [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    add("data_dir", "dataset root (train/ and eval/ inside)", false,
        [](RunConfig& c, const std::string& v) { c.data_dir = v; },
        [](const RunConfig& c) { return c.data_dir; });
    add("lr_checkpoint", "low-resolution checkpoint path", false,
        [](RunConfig& c, const std::string& v) { c.lr_checkpoint = v; },
        [](const RunConfig& c) { return c.lr_checkpoint; });
    add("hr_checkpoint", "high-resolution checkpoint path", false,
        [](RunConfig& c, const std::string& v) { c.hr_checkpoint = v; },
        [](const RunConfig& c) { return c.hr_checkpoint; });
    add("person", "sample: person image (PNM)", false,
        [](RunConfig& c, const std::string& v) { c.person = v; },
        [](const RunConfig& c) { return c.person; });
    add("garment", "sample: garment image (PNM)", false,
        [](RunConfig& c, const std::string& v) { c.garment = v; },
        [](const RunConfig& c) { return c.garment; });
    return e;
  }();
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const Entry& e : entries()) {
    if (e.name == key) return e;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    const RunConfig defaults;
    for (const Entry& e : entries()) {
      out.push_back({e.name, e.get(defaults), e.description, e.affects_training});
    }
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return find_entry(key).get(cfg);
}

NoiseSchedule RunConfig::schedule() const { return make_linear_schedule(T, beta_start, beta_end); }

int RunConfig::effective_tau() const { return tau > 0 ? tau : default_tau(T); }

void RunConfig::validate() const {
  network.validate();
  const NoiseSchedule sched = schedule();
  require(height % sigma == 0 && width % sigma == 0,
          "sigma " + std::to_string(sigma) + " must divide height and width");
  const int lr_multiple = network.spatial_multiple() * sigma;
  require(height % lr_multiple == 0 && width % lr_multiple == 0,
          "height and width must be divisible by " + std::to_string(lr_multiple) +
              " (network depth times sigma)");
  for (int s : ablate_sigmas) {
    require(height % (network.spatial_multiple() * s) == 0 &&
                width % (network.spatial_multiple() * s) == 0,
            "ablate_sigmas entry " + std::to_string(s) + " does not divide the resolution");
  }
  ResidualCoefficients{alpha, beta}.validate();
  require(lr_steps <= T && hr_steps <= T, "stage steps must not exceed T");
  require(effective_tau() <= T, "tau must not exceed T");
  if (hr_mode == StageMode::noising_denoising) {
    require(hr_steps <= effective_tau(), "hr_steps must not exceed tau for noising_denoising");
  }
  if (hr_mode == StageMode::residual || !ablate_coeffs.empty()) {
    require(sched.residual_ready(), "schedule fails the residual gate: alpha_bar(T) = " +
                                        format_number(sched.alpha_bar(T)) + " > 1e-4");
  }
  train_config().validate();
}

TrainConfig RunConfig::train_config(std::uint64_t seed_offset) const {
  TrainConfig tc;
  tc.batch_size = batch_size;
  tc.learning_rate = learning_rate;
  tc.weight_decay = weight_decay;
  tc.warmup_steps = warmup_steps;
  tc.cosine_decay = cosine_decay;
  tc.max_steps = max_steps;
  tc.seed = seed + seed_offset;
  return tc;
}

PipelineConfig RunConfig::pipeline_config(std::uint64_t sample_seed) const {
  PipelineConfig pc;
  pc.low.sigma = sigma;
  pc.low.steps = lr_steps;
  pc.low.clip_x0 = clip_x0;
  pc.high.steps = hr_steps;
  pc.high.mode = hr_mode;
  pc.high.coeffs = hr_mode == StageMode::residual ? ResidualCoefficients{alpha, beta}
                                                  : ResidualCoefficients::identity();
  pc.high.tau = effective_tau();
  pc.high.clip_x0 = clip_x0;
  pc.seed = sample_seed;
  return pc;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const Entry& e : entries()) out += e.name + " = " + e.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::training_hash() const {
  std::string text;
  for (const Entry& e : entries()) {
    if (e.affects_training) text += e.name + "=" + e.get(*this) + "\n";
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path), path); }

}  // namespace dsvton
