#include <gtest/gtest.h>

#include "metafunc/binary_io.hpp"
#include "metafunc/error.hpp"
#include "test_util.hpp"

namespace metafunc {
namespace {

using testing::code_of;

TEST(BinaryIo, RoundTripsLittleEndian) {
  io::Writer w;
  w.magic("TEST");
  w.u32(0x01020304);
  w.u64(0x0102030405060708ull);
  w.f32(1.5f);
  w.f64(-2.25);
  const std::vector<double> arr{0.1, 2.0, -3.5};
  w.f32_array(std::span<const double>(arr));
  const auto& b = w.bytes();
  ASSERT_EQ(b.size(), 4u + 4 + 8 + 4 + 8 + 12);
  EXPECT_EQ(b[4], 0x04);
  EXPECT_EQ(b[7], 0x01);

  io::Reader r(b);
  r.expect_magic("TEST");
  EXPECT_EQ(r.u32(), 0x01020304u);
  EXPECT_EQ(r.u64(), 0x0102030405060708ull);
  EXPECT_EQ(r.f32(), 1.5f);
  EXPECT_EQ(r.f64(), -2.25);
  const auto back = r.f32_array_as_double(3);
  EXPECT_EQ(back[0], static_cast<double>(0.1f));
  EXPECT_EQ(back[2], -3.5);
  r.expect_end();
}

TEST(BinaryIo, OverrunIsFormatError) {
  io::Reader r(std::vector<std::uint8_t>{1, 2, 3});
  EXPECT_EQ(code_of([&] { r.u32(); }), ErrorCode::FormatError);
}

TEST(BinaryIo, WrongMagicIsFormatError) {
  io::Writer w;
  w.magic("ABCD");
  io::Reader r(w.bytes());
  EXPECT_EQ(code_of([&] { r.expect_magic("WXYZ"); }), ErrorCode::FormatError);
}

TEST(BinaryIo, TrailingBytesAreFormatError) {
  io::Writer w;
  w.u32(1);
  w.u32(2);
  io::Reader r(w.bytes());
  r.u32();
  EXPECT_EQ(code_of([&] { r.expect_end(); }), ErrorCode::FormatError);
}

TEST(BinaryIo, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { io::read_bytes("/nonexistent/dir/file.bin"); }), ErrorCode::IoError);
  // A regular file as parent cannot be turned into a directory, even as root.
  const auto blocker = testing::scratch_dir() / "blocker";
  io::write_bytes(blocker, {});
  EXPECT_EQ(code_of([&] { io::write_bytes(blocker / "file.bin", {}); }), ErrorCode::IoError);
}

TEST(BinaryIo, WriteCreatesParentDirectories) {
  const auto path = testing::scratch_dir() / "a" / "b" / "file.bin";
  const std::vector<std::uint8_t> bytes{1, 2, 3};
  io::write_bytes(path, bytes);
  EXPECT_EQ(io::read_bytes(path), bytes);
}

}  // namespace
}  // namespace metafunc
