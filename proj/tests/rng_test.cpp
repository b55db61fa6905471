#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "rdpo/rng.hpp"

using namespace rdpo;

TEST_CASE("philox known-answer vectors") {
  // Reference values for Philox4x32-10 from the original counter-based RNG
  // test suite (zero and all-ones inputs).
  const Counter4 zero = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(zero[0] == 0x6627e8d5u);
  CHECK(zero[1] == 0xe169c58du);
  CHECK(zero[2] == 0xbc57ac4cu);
  CHECK(zero[3] == 0x9b00dbd8u);

  const Counter4 ones = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                   {0xffffffffu, 0xffffffffu});
  CHECK(ones[0] == 0x408f276du);
  CHECK(ones[1] == 0x41c83b0eu);
  CHECK(ones[2] == 0xa20bc7c6u);
  CHECK(ones[3] == 0x6d5451fdu);
}

TEST_CASE("same seed gives the same sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("children with different labels diverge, same labels agree") {
  const Rng root(7);
  Rng a = root.child(1, 2);
  Rng b = root.child(1, 2);
  Rng c = root.child(1, 3);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() != c.next_u64());

  // Deriving a child leaves the parent's draw position untouched.
  Rng p(9);
  const uint64_t before = Rng(9).next_u64();
  (void)p.child(5);
  CHECK(p.next_u64() == before);
}

TEST_CASE("uniform01 stays in [0, 1)") {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("gaussian moments are roughly standard") {
  Rng r(11);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("distinct child indices give distinct streams") {
  const Rng root(1);
  std::set<uint64_t> firsts;
  for (uint64_t i = 0; i < 1000; ++i) firsts.insert(root.child(2, i).next_u64());
  CHECK(firsts.size() == 1000);
}
