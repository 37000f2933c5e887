#include "dsvton/checkpoint.hpp"

#include <cmath>

#include "dsvton/errors.hpp"
#include "dsvton/io.hpp"

namespace dsvton {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'V', 'T'};

std::string mode_name(DiffusionMode m) { return m == DiffusionMode::standard ? "standard" : "residual"; }

DiffusionMode parse_mode(const std::string& s, const std::string& what) {
  if (s == "standard") return DiffusionMode::standard;
  if (s == "residual") return DiffusionMode::residual;
  throw ValidationError(what + ": unknown diffusion mode '" + s + "'");
}

int small_int(std::int64_t v, const std::string& what) {
  if (v < 0 || v > (1 << 20)) throw ValidationError(what + ": field out of range");
  return static_cast<int>(v);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const DenoiserParams& p = ckpt.trainer.params;
  const AdamState& adam = ckpt.trainer.adam;
  const auto n = static_cast<std::size_t>(p.size());
  require(static_cast<std::size_t>(adam.m.size()) == n && static_cast<std::size_t>(adam.v.size()) == n,
          "checkpoint: optimizer state does not match the parameter count");

  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.i64(Checkpoint::kVersion);
  w.str(to_string(ckpt.stage));
  const NetworkConfig& nc = p.config;
  for (int v : {nc.base_channels, nc.depth, nc.attn_level, nc.time_embed_dim, nc.latent_channels,
                nc.person_channels, nc.garment_channels}) {
    w.i64(v);
  }
  w.i64(static_cast<std::int64_t>(ckpt.betas.size()));
  w.f64s(ckpt.betas.data(), ckpt.betas.size());
  w.i64(ckpt.sigma);
  w.str(mode_name(ckpt.spec.mode));
  w.f64(ckpt.spec.coeffs.alpha);
  w.f64(ckpt.spec.coeffs.beta);
  w.i64(static_cast<std::int64_t>(n));
  w.f64s(p.values.data(), n);
  w.f64s(adam.m.data(), n);
  w.f64s(adam.v.data(), n);
  w.i64(adam.step);
  w.f64(adam.beta1);
  w.f64(adam.beta2);
  w.f64(adam.eps);
  w.i64(ckpt.trainer.step);
  w.i64(static_cast<std::int64_t>(ckpt.config_hash));
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  char magic[4];
  r.raw(magic, sizeof magic);
  if (std::string(magic, 4) != std::string(kMagic, 4)) throw ValidationError(what + ": not a checkpoint");
  const std::int64_t version = r.i64();
  if (version != Checkpoint::kVersion) {
    throw ValidationError(what + ": unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.stage = parse_dataset_stage(r.str());

  NetworkConfig nc;
  nc.base_channels = small_int(r.i64(), what);
  nc.depth = small_int(r.i64(), what);
  nc.attn_level = small_int(r.i64(), what);
  nc.time_embed_dim = small_int(r.i64(), what);
  nc.latent_channels = small_int(r.i64(), what);
  nc.person_channels = small_int(r.i64(), what);
  nc.garment_channels = small_int(r.i64(), what);
  nc.validate();

  const int T = small_int(r.i64(), what);
  if (T < 1) throw ValidationError(what + ": empty schedule");
  ckpt.betas.resize(static_cast<std::size_t>(T));
  r.f64s(ckpt.betas.data(), ckpt.betas.size());
  NoiseSchedule check(ckpt.betas);  // validates the beta range

  ckpt.sigma = small_int(r.i64(), what);
  ckpt.spec.mode = parse_mode(r.str(), what);
  ckpt.spec.coeffs.alpha = r.f64();
  ckpt.spec.coeffs.beta = r.f64();
  ckpt.spec.coeffs.validate();

  DenoiserParams& p = ckpt.trainer.params;
  p.config = nc;
  p.layout = build_layout(nc);
  const std::int64_t n = r.i64();
  if (n != p.layout.total()) {
    throw ValidationError(what + ": parameter count " + std::to_string(n) + " does not match the network (" +
                          std::to_string(p.layout.total()) + ")");
  }
  const auto un = static_cast<std::size_t>(n);
  p.values.resize(n);
  r.f64s(p.values.data(), un);
  AdamState& adam = ckpt.trainer.adam;
  adam.m.resize(n);
  adam.v.resize(n);
  r.f64s(adam.m.data(), un);
  r.f64s(adam.v.data(), un);
  adam.step = r.i64();
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.eps = r.f64();
  ckpt.trainer.step = r.i64();
  ckpt.config_hash = static_cast<std::uint64_t>(r.i64());
  if (!r.done()) throw ValidationError(what + ": trailing bytes");
  if (!p.values.allFinite()) throw NumericalError(what + ": non-finite parameters");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  atomic_write(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

void require_stage(const Checkpoint& ckpt, DatasetStage expected, const std::string& slot) {
  if (ckpt.stage != expected) {
    throw ValidationError(slot + " checkpoint has stage tag '" + to_string(ckpt.stage) + "', expected '" +
                          to_string(expected) + "'");
  }
}

}  // namespace dsvton
