#include "dsvton/io.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dsvton/errors.hpp"

namespace dsvton {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_pnm(const Image& img) {
  require(img.channels() == 1 || img.channels() == 3, "PNM needs 1 or 3 channels");
  require(img.all_finite(), "PNM: image has non-finite values");
  std::string out = (img.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(img.size()));
  for (Index i = 0; i < img.size(); ++i) {
    out[header + static_cast<std::size_t>(i)] = static_cast<char>(unit_to_byte(img.data()[i]));
  }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw ValidationError("PNM: truncated header");
  return bytes.substr(start, pos - start);
}

long pnm_number(const std::string& token) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || v <= 0) throw ValidationError("PNM: bad header field '" + token + "'");
  return v;
}

}  // namespace

Image decode_pnm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos);
  Index channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw ValidationError("PNM: unsupported magic '" + magic + "'");
  }
  const long width = pnm_number(pnm_token(bytes, pos));
  const long height = pnm_number(pnm_token(bytes, pos));
  const long maxval = pnm_number(pnm_token(bytes, pos));
  if (maxval != 255) throw ValidationError("PNM: only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  Image img(height, width, channels);
  if (bytes.size() < pos + static_cast<std::size_t>(img.size())) {
    throw ValidationError("PNM: truncated raster");
  }
  for (Index i = 0; i < img.size(); ++i) {
    img.data()[i] = byte_to_unit(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>(i)]));
  }
  return img;
}

void write_pnm(const fs::path& path, const Image& img) { atomic_write(path, encode_pnm(img)); }

Image read_pnm(const fs::path& path) { return decode_pnm(read_file(path)); }

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ByteWriter::raw(const void* data, std::size_t n) {
  out_.append(static_cast<const char*>(data), n);
}
void ByteWriter::i64(std::int64_t v) { raw(&v, sizeof v); }
void ByteWriter::f64(double v) { raw(&v, sizeof v); }
void ByteWriter::f64s(const double* data, std::size_t n) { raw(data, n * sizeof(double)); }
void ByteWriter::str(const std::string& s) {
  i64(static_cast<std::int64_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteReader::raw(void* data, std::size_t n) {
  if (bytes_.size() - pos_ < n) throw ValidationError(what_ + ": truncated");
  std::memcpy(data, bytes_.data() + pos_, n);
  pos_ += n;
}
std::int64_t ByteReader::i64() {
  std::int64_t v = 0;
  raw(&v, sizeof v);
  return v;
}
double ByteReader::f64() {
  double v = 0;
  raw(&v, sizeof v);
  return v;
}
void ByteReader::f64s(double* data, std::size_t n) { raw(data, n * sizeof(double)); }
std::string ByteReader::str() {
  const std::int64_t n = i64();
  if (n < 0 || static_cast<std::size_t>(n) > bytes_.size() - pos_) {
    throw ValidationError(what_ + ": bad string length");
  }
  std::string s(static_cast<std::size_t>(n), '\0');
  raw(s.data(), s.size());
  return s;
}

namespace {
constexpr char kTensorMagic[8] = {'D', 'S', 'V', 'T', 'E', 'N', 'S', 'R'};
}

void write_tensor(const fs::path& path, const Image& img) {
  ByteWriter w;
  w.raw(kTensorMagic, sizeof kTensorMagic);
  w.i64(img.height());
  w.i64(img.width());
  w.i64(img.channels());
  w.f64s(img.data(), static_cast<std::size_t>(img.size()));
  atomic_write(path, w.bytes());
}

Image read_tensor(const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kTensorMagic, sizeof magic) != 0) {
    throw ValidationError(path.string() + ": not a tensor file");
  }
  const std::int64_t h = r.i64();
  const std::int64_t w = r.i64();
  const std::int64_t c = r.i64();
  require(h >= 0 && w >= 0 && c >= 0 && h * w * c <= (1LL << 32), path.string() + ": bad shape");
  Image img(h, w, c);
  r.f64s(img.data(), static_cast<std::size_t>(img.size()));
  if (!r.done()) throw ValidationError(path.string() + ": trailing bytes");
  return img;
}

}  // namespace dsvton
