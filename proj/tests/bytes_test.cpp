#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "rdpo/bytes.hpp"

using namespace rdpo;

TEST_CASE("little-endian round trips") {
  std::string buf;
  io::put_u8(buf, 0xAB);
  io::put_u32(buf, 0xDEADBEEFu);
  io::put_f32(buf, -1.5f);
  io::put_f32(buf, 3.25e-8f);

  io::Reader r(buf);
  CHECK(r.get_u8() == 0xAB);
  CHECK(r.get_u32() == 0xDEADBEEFu);
  CHECK(r.get_f32() == -1.5f);
  CHECK(r.get_f32() == 3.25e-8f);
  CHECK(r.at_end());
}

TEST_CASE("u32 byte order is little endian") {
  std::string buf;
  io::put_u32(buf, 0x01020304u);
  CHECK(static_cast<uint8_t>(buf[0]) == 0x04);
  CHECK(static_cast<uint8_t>(buf[3]) == 0x01);
}

TEST_CASE("reader overrun throws") {
  io::Reader r("ab");
  CHECK_THROWS(r.get_u32());
}

TEST_CASE("fnv1a64 known values") {
  CHECK(io::fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(io::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("hex16 round trips through parse_hex_u64") {
  const uint64_t v = 0x0123456789abcdefull;
  CHECK(io::parse_hex_u64(io::hex16(v)) == v);
  CHECK(io::hex16(5) == "0000000000000005");
}

TEST_CASE("number formatting round trips") {
  for (double v : {0.25, 1e-9, -3.5, 0.1, 12345.678}) {
    CHECK(io::parse_double(io::fmt_double(v)) == v);
  }
  CHECK_THROWS(io::parse_double("1.2.3"));
  CHECK_THROWS(io::parse_i64("12x"));
}

TEST_CASE("kv line round trips") {
  const std::string line = io::kv_line({{"a", "1"}, {"b", "x:y,z"}, {"c", "0.5"}});
  CHECK(line == "a=1 b=x:y,z c=0.5\n");
  const auto kv = io::parse_kv_line(line.substr(0, line.size() - 1));
  CHECK(io::kv_get(kv, "a") == "1");
  CHECK(io::kv_get(kv, "b") == "x:y,z");
  CHECK_THROWS(io::kv_get(kv, "missing"));
}

TEST_CASE("file round trip and missing-file error") {
  const std::string path = "bytes_test_tmp.bin";
  const std::string payload("\x00\x01\xffhello", 8);
  io::write_file(path, payload);
  CHECK(io::read_file(path) == payload);
  CHECK(io::file_exists(path));
  std::remove(path.c_str());
  CHECK(!io::file_exists(path));
  CHECK_THROWS(io::read_file(path));
}
