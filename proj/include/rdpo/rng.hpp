#pragma once

#include <array>
#include <cstdint>

namespace rdpo {

using Counter4 = std::array<uint32_t, 4>;
using Key2 = std::array<uint32_t, 2>;

// Philox4x32-10 block function (counter-based, stateless).
Counter4 philox4x32(Counter4 counter, Key2 key);

// Purpose labels for derived streams. Values are part of the reproducibility
// contract: changing them changes every downstream draw.
enum Stream : uint64_t {
  kDatasetInit = 1,
  kModelInit = 2,
  kTrainBatch = 3,
  kTrainDraw = 4,
  kHeldoutDraw = 5,
  kPairTrajectory = 6,
  kPairNoise = 7,
  kPairStage = 8,
  kDpoBatch = 9,
  kDpoDraw = 10,
  kSftBatch = 11,
  kSftDraw = 12,
  kRewardDraw = 13,
  kEvalNoise = 14,
  kCompareNoise = 15,
  kProgressResidual = 16,
  kSftStage = 17,
  kAuditStage = 18,
};

// Deterministic random stream. Every draw is a pure function of the stream
// key and a 64-bit position counter, and child streams are derived by
// running Philox over the (label, index) pair, so values never depend on
// thread scheduling or evaluation order across tasks.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Derived stream; the parent is unchanged.
  Rng child(uint64_t a, uint64_t b = 0) const;

  uint32_t next_u32();
  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double gaussian();

 private:
  explicit Rng(Key2 key) : key_(key) {}

  Key2 key_{};
  uint64_t block_index_ = 0;
  Counter4 block_{};
  int block_pos_ = 4;
};

}  // namespace rdpo
