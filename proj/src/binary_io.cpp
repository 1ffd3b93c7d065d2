#include "metafunc/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "metafunc/error.hpp"

namespace metafunc::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}

}  // namespace

void Writer::magic(std::string_view four_cc) { buf_.insert(buf_.end(), four_cc.begin(), four_cc.end()); }
void Writer::u32(std::uint32_t v) { put(buf_, v); }
void Writer::u64(std::uint64_t v) { put(buf_, v); }
void Writer::f32(float v) { put(buf_, v); }
void Writer::f64(double v) { put(buf_, v); }

void Writer::f32_array(std::span<const double> values) {
  buf_.reserve(buf_.size() + 4 * values.size());
  for (const double v : values) f32(static_cast<float>(v));
}

void Writer::f32_array(std::span<const float> values) {
  buf_.reserve(buf_.size() + 4 * values.size());
  for (const float v : values) f32(v);
}

void ensure_parent(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void Writer::write_file(const std::filesystem::path& path) const { write_bytes(path, buf_); }

Reader Reader::from_file(const std::filesystem::path& path) { return Reader(read_bytes(path)); }

void Reader::need(std::size_t n) const {
  if (remaining() < n) fail(ErrorCode::FormatError, "truncated payload");
}

void Reader::expect_magic(std::string_view four_cc) {
  need(four_cc.size());
  if (std::memcmp(buf_.data() + pos_, four_cc.data(), four_cc.size()) != 0)
    fail(ErrorCode::FormatError, "bad magic, expected " + std::string(four_cc));
  pos_ += four_cc.size();
}

#define METAFUNC_READ(T)                        \
  need(sizeof(T));                              \
  T v;                                          \
  std::memcpy(&v, buf_.data() + pos_, sizeof(T)); \
  pos_ += sizeof(T);                            \
  return v

std::uint32_t Reader::u32() { METAFUNC_READ(std::uint32_t); }
std::uint64_t Reader::u64() { METAFUNC_READ(std::uint64_t); }
float Reader::f32() { METAFUNC_READ(float); }
double Reader::f64() { METAFUNC_READ(double); }

#undef METAFUNC_READ

std::vector<double> Reader::f32_array_as_double(std::size_t n) {
  if (n > remaining() / 4) fail(ErrorCode::FormatError, "truncated payload");
  std::vector<double> out(n);
  for (auto& v : out) v = static_cast<double>(f32());
  return out;
}

std::vector<float> Reader::f32_array(std::size_t n) {
  if (n > remaining() / 4) fail(ErrorCode::FormatError, "truncated payload");
  std::vector<float> out(n);
  for (auto& v : out) v = f32();
  return out;
}

void Reader::expect_end() const {
  if (remaining() != 0) fail(ErrorCode::FormatError, "trailing bytes after payload");
}

}  // namespace metafunc::io
