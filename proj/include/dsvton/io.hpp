#pragma once

// Binary file formats. PNM images (P5 grey, P6 RGB, 8-bit) use the
// [-1, 1] <-> [0, 255] map of unit_to_byte / byte_to_unit. Tensors that must
// survive exactly use a raw little-endian float64 sidecar:
//   "DSVTENSR" | i64 height | i64 width | i64 channels | f64 data[h*w*c]

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dsvton/image.hpp"

namespace dsvton {

/// Writes to a sibling temporary file then renames over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

std::string encode_pnm(const Image& img);
Image decode_pnm(const std::string& bytes);

void write_tensor(const std::filesystem::path& path, const Image& img);
Image read_tensor(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`; "nan" for NaN.
std::string format_number(double v);

/// Little-endian serialization helpers shared by the binary formats.
class ByteWriter {
 public:
  void raw(const void* data, std::size_t n);
  void i64(std::int64_t v);
  void f64(double v);
  void f64s(const double* data, std::size_t n);
  void str(const std::string& s);  // i64 length + bytes
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}
  void raw(void* data, std::size_t n);
  std::int64_t i64();
  double f64();
  void f64s(double* data, std::size_t n);
  std::string str();
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace dsvton
