#include "rdpo/bytes.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace rdpo::io {

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

void Reader::need(size_t n) const {
  if (pos_ + n > data_.size()) {
    throw std::runtime_error("truncated input: need " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos_));
  }
}

uint8_t Reader::get_u8() {
  need(1);
  return static_cast<uint8_t>(data_[pos_++]);
}

uint32_t Reader::get_u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += 4;
  return v;
}

float Reader::get_f32() { return std::bit_cast<float>(get_u32()); }

std::string_view Reader::get_bytes(size_t n) {
  need(n);
  std::string_view v = data_.substr(pos_, n);
  pos_ += n;
  return v;
}

std::string_view Reader::get_line() {
  const size_t nl = data_.find('\n', pos_);
  if (nl == std::string_view::npos) {
    throw std::runtime_error("truncated input: missing newline");
  }
  std::string_view v = data_.substr(pos_, nl - pos_);
  pos_ = nl + 1;
  return v;
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

uint64_t parse_hex_u64(std::string_view s) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("bad hex value: '" + std::string(s) + "'");
  }
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file for reading: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) {
    throw std::runtime_error("read failure: " + path);
  }
  return std::move(ss).str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open file for writing: " + path);
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out.good()) {
    throw std::runtime_error("write failure: " + path);
  }
}

bool file_exists(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return in.good();
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) {
    throw std::runtime_error("fmt_double failed");
  }
  return std::string(buf, p);
}

std::string fmt_int(int64_t v) { return std::to_string(v); }

double parse_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("bad number: '" + std::string(s) + "'");
  }
  return v;
}

int64_t parse_i64(std::string_view s) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("bad integer: '" + std::string(s) + "'");
  }
  return v;
}

uint64_t parse_u64(std::string_view s) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("bad unsigned integer: '" + std::string(s) + "'");
  }
  return v;
}

std::string kv_line(const KvPairs& kv) {
  std::string out;
  for (size_t i = 0; i < kv.size(); ++i) {
    if (i) out.push_back(' ');
    out += kv[i].first;
    out.push_back('=');
    out += kv[i].second;
  }
  out.push_back('\n');
  return out;
}

std::map<std::string, std::string> parse_kv_line(std::string_view line) {
  std::map<std::string, std::string> out;
  for (const std::string& tok : split(line, ' ')) {
    if (tok.empty()) continue;
    const size_t eq = tok.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("bad header token: '" + tok + "'");
    }
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv,
                          const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    throw std::runtime_error("missing header key: '" + key + "'");
  }
  return it->second;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size()) {
    const size_t end = s.find(sep, start);
    if (end == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace rdpo::io
