#include "rdpo/rng.hpp"

#include <cmath>

namespace rdpo {

namespace {

constexpr uint32_t kMulA = 0xD2511F53u;
constexpr uint32_t kMulB = 0xCD9E8D57u;
constexpr uint32_t kWeylA = 0x9E3779B9u;
constexpr uint32_t kWeylB = 0xBB67AE85u;

inline void round_once(Counter4& c, Key2& k) {
  const uint64_t p0 = static_cast<uint64_t>(kMulA) * c[0];
  const uint64_t p1 = static_cast<uint64_t>(kMulB) * c[2];
  const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
  const uint32_t lo0 = static_cast<uint32_t>(p0);
  const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
  const uint32_t lo1 = static_cast<uint32_t>(p1);
  c = Counter4{hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  k[0] += kWeylA;
  k[1] += kWeylB;
}

}  // namespace

Counter4 philox4x32(Counter4 counter, Key2 key) {
  for (int r = 0; r < 10; ++r) {
    round_once(counter, key);
  }
  return counter;
}

Rng::Rng(uint64_t seed)
    : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)} {}

Rng Rng::child(uint64_t a, uint64_t b) const {
  // Child derivation uses counters with the top bit of word 3 set; draw
  // counters start at zero and never reach that range, so derivation and
  // drawing can never collide on the same Philox input.
  const Counter4 ctr{static_cast<uint32_t>(a), static_cast<uint32_t>(a >> 32),
                     static_cast<uint32_t>(b),
                     static_cast<uint32_t>(b >> 32) | 0x80000000u};
  const Counter4 out = philox4x32(ctr, key_);
  return Rng(Key2{out[0], out[1]});
}

uint32_t Rng::next_u32() {
  if (block_pos_ == 4) {
    const Counter4 ctr{static_cast<uint32_t>(block_index_),
                       static_cast<uint32_t>(block_index_ >> 32), 0u, 0u};
    block_ = philox4x32(ctr, key_);
    ++block_index_;
    block_pos_ = 0;
  }
  return block_[block_pos_++];
}

uint64_t Rng::next_u64() {
  const uint64_t lo = next_u32();
  const uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  const double u1 = 1.0 - uniform01();  // (0, 1], keeps the log finite
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace rdpo
