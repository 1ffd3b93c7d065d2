#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metafunc::io {

/// Throws IoError on failure.
/// Creates missing parent directories; failures surface when the file is opened.
void ensure_parent(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

/// Append-only little-endian byte buffer.
class Writer {
 public:
  void magic(std::string_view four_cc);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  /// Narrows each value to f32.
  void f32_array(std::span<const double> values);
  void f32_array(std::span<const float> values);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

  /// Throws IoError if the file cannot be written.
  void write_file(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; any overrun is a FormatError.
class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

  /// Throws IoError if the file cannot be opened.
  static Reader from_file(const std::filesystem::path& path);

  void expect_magic(std::string_view four_cc);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::vector<double> f32_array_as_double(std::size_t n);
  std::vector<float> f32_array(std::size_t n);

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace metafunc::io
