#include "dsvton/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

#include "dsvton/errors.hpp"
#include "dsvton/io.hpp"
#include "dsvton/parallel.hpp"

namespace dsvton {

namespace {

constexpr const char* kManifest = "manifest.txt";
constexpr const char* kMagicLine = "dsvton-dataset 1";

using Fields = std::map<std::string, std::string>;

Fields parse_fields(const std::string& line, const std::string& what) {
  Fields f;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError(what + ": malformed field '" + tok + "'");
    f[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return f;
}

const std::string& field(const Fields& f, const std::string& key, const std::string& what) {
  const auto it = f.find(key);
  if (it == f.end()) throw ValidationError(what + ": missing field '" + key + "'");
  return it->second;
}

std::uint64_t u64_field(const Fields& f, const std::string& key, const std::string& what) {
  const std::string& s = field(f, key, what);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(what + ": bad integer in field '" + key + "'");
  }
  return v;
}

double f64_field(const std::string& s, const std::string& what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ValidationError(what + ": bad number '" + s + "'");
  return v;
}

std::string file_name(std::size_t index, const char* role) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%05zu_%s.ppm", index, role);
  return buf;
}

}  // namespace

DatasetOptions DatasetHeader::options() const {
  DatasetOptions o;
  o.height = height;
  o.width = width;
  o.stage = DatasetStage::lr;  // guides are never regenerated
  o.split = split;
  o.sigma = sigma;
  o.guide_source = guide_source;
  o.complexity_mix = complexity_mix;
  o.perturb = perturb;
  return o;
}

std::filesystem::path dataset_dir(const std::filesystem::path& root, DatasetStage stage,
                                  DatasetSplit split) {
  return root / to_string(stage) / to_string(split);
}

void write_dataset(const std::filesystem::path& dir, const DatasetHeader& header,
                   const std::vector<TryonSample>& samples) {
  require(samples.size() == header.n, "dataset header count does not match the samples");
  const bool hr = header.stage == DatasetStage::hr;
  std::ostringstream m;
  m << kMagicLine << "\n";
  m << "stage=" << to_string(header.stage) << " split=" << to_string(header.split)
    << " seed=" << header.seed << " n=" << header.n << " height=" << header.height
    << " width=" << header.width << " sigma=" << header.sigma
    << " guide_source=" << to_string(header.guide_source) << " complexity_mix="
    << format_number(header.complexity_mix[0]) << "," << format_number(header.complexity_mix[1]) << ","
    << format_number(header.complexity_mix[2]) << " perturb=" << (header.perturb ? 1 : 0) << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TryonSample& s = samples[i];
    m << "index=" << i << " body_seed=" << s.body_seed << " garment_seed=" << s.garment_seed
      << " other_seed=" << s.other_seed << " complexity=" << to_string(s.complexity)
      << " person=" << file_name(i, "person") << " garment=" << file_name(i, "garment")
      << " target=" << file_name(i, "target");
    if (hr) {
      require(s.lr_result.has_value(), "hr dataset sample without a guide");
      m << " guide=" << file_name(i, "guide") << " guide_seed=" << guide_seed_for(header.seed, s.body_seed);
    }
    m << "\n";
  }
  parallel_for(samples.size(), [&](std::size_t i) {
    const TryonSample& s = samples[i];
    write_pnm(dir / file_name(i, "person"), s.person_other);
    write_pnm(dir / file_name(i, "garment"), s.garment);
    write_pnm(dir / file_name(i, "target"), s.target);
    if (hr) write_pnm(dir / file_name(i, "guide"), *s.lr_result);
  });
  atomic_write(dir / kManifest, m.str());
}

StoredDataset read_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / kManifest;
  if (!std::filesystem::exists(path)) {
    throw ValidationError("no dataset at " + dir.string() + " (run gen-data first)");
  }
  const std::string what = path.string();
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) throw ValidationError(what + ": not a dataset manifest");
  if (!std::getline(in, line)) throw ValidationError(what + ": missing header");
  const Fields h = parse_fields(line, what);

  StoredDataset ds;
  DatasetHeader& hd = ds.header;
  hd.stage = parse_dataset_stage(field(h, "stage", what));
  hd.split = parse_dataset_split(field(h, "split", what));
  hd.seed = u64_field(h, "seed", what);
  hd.n = u64_field(h, "n", what);
  hd.height = static_cast<Index>(u64_field(h, "height", what));
  hd.width = static_cast<Index>(u64_field(h, "width", what));
  hd.sigma = static_cast<int>(u64_field(h, "sigma", what));
  hd.guide_source = parse_guide_source(field(h, "guide_source", what));
  {
    std::istringstream mix(field(h, "complexity_mix", what));
    std::string part;
    std::size_t k = 0;
    while (std::getline(mix, part, ',')) {
      if (k == 3) throw ValidationError(what + ": complexity_mix needs three weights");
      hd.complexity_mix[k++] = f64_field(part, what);
    }
    if (k != 3) throw ValidationError(what + ": complexity_mix needs three weights");
  }
  hd.perturb = u64_field(h, "perturb", what) != 0;

  const bool hr = hd.stage == DatasetStage::hr;
  std::vector<Fields> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_fields(line, what));
  }
  if (rows.size() != hd.n) {
    throw ValidationError(what + ": header says " + std::to_string(hd.n) + " samples, found " +
                          std::to_string(rows.size()));
  }
  ds.samples.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Fields& f = rows[i];
    StoredSample& s = ds.samples[i];
    s.index = u64_field(f, "index", what);
    s.body_seed = u64_field(f, "body_seed", what);
    s.garment_seed = u64_field(f, "garment_seed", what);
    s.other_seed = u64_field(f, "other_seed", what);
    s.complexity = parse_complexity(field(f, "complexity", what));
    if (hr) field(f, "guide", what);
  }
  parallel_for(rows.size(), [&](std::size_t i) {
    const Fields& f = rows[i];
    StoredSample& s = ds.samples[i];
    s.person = read_pnm(dir / field(f, "person", what));
    s.garment = read_pnm(dir / field(f, "garment", what));
    s.target = read_pnm(dir / field(f, "target", what));
    if (hr) s.guide = read_pnm(dir / field(f, "guide", what));
  });
  for (const StoredSample& s : ds.samples) {
    if (s.target.height() != hd.height || s.target.width() != hd.width) {
      throw ValidationError(what + ": image size does not match the header");
    }
  }
  return ds;
}

}  // namespace dsvton
