#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rdpo::io {

// Little-endian primitives appended to a byte buffer.
void put_u8(std::string& out, uint8_t v);
void put_u32(std::string& out, uint32_t v);
void put_f32(std::string& out, float v);

// Sequential reader over a byte buffer; throws std::runtime_error on overrun.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  uint8_t get_u8();
  uint32_t get_u32();
  float get_f32();
  std::string_view get_bytes(size_t n);
  // Consumes up to and including the next '\n'; returned view excludes it.
  std::string_view get_line();
  bool at_end() const { return pos_ == data_.size(); }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const;
  std::string_view data_;
  size_t pos_ = 0;
};

uint64_t fnv1a64(std::string_view bytes);
std::string hex16(uint64_t v);
uint64_t parse_hex_u64(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
bool file_exists(const std::string& path);

// Shortest round-trip decimal form (std::to_chars).
std::string fmt_double(double v);
std::string fmt_int(int64_t v);
double parse_double(std::string_view s);
int64_t parse_i64(std::string_view s);
uint64_t parse_u64(std::string_view s);

// Single-line "key=value key=value" headers with a fixed write order.
using KvPairs = std::vector<std::pair<std::string, std::string>>;
std::string kv_line(const KvPairs& kv);
std::map<std::string, std::string> parse_kv_line(std::string_view line);
const std::string& kv_get(const std::map<std::string, std::string>& kv,
                          const std::string& key);

std::vector<std::string> split(std::string_view s, char sep);

}  // namespace rdpo::io
