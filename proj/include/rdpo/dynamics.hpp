#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdpo/bytes.hpp"
#include "rdpo/rng.hpp"

namespace rdpo::dyn {

inline constexpr int kStateDim = 4;  // px, py, vx, vy
inline constexpr int kNumKinds = 4;

enum class WorldKind : uint8_t {
  ConstantVelocity = 0,
  Projectile = 1,
  BouncingBall = 2,
  SpringOscillator = 3,
};

const char* kind_name(WorldKind kind);
std::optional<WorldKind> kind_from_name(std::string_view name);

// Law constants; only the fields a kind uses are meaningful. Every kind has
// an exact discrete update, so the residual oracle below is unambiguous.
struct WorldParams {
  double gravity = 0.0;      // downward acceleration, units/time^2
  double restitution = 0.0;  // normal-speed ratio at wall contact, (0, 1]
  double box_w = 0.0;
  double box_h = 0.0;
  double spring_k = 0.0;     // stiffness, unit mass
  double spring_zeta = 0.0;  // damping ratio, [0, 1)
};

struct World {
  WorldKind kind = WorldKind::ConstantVelocity;
  WorldParams params;

  void validate() const;  // throws std::invalid_argument
  int param_count() const;
  void encode_params(std::string& out) const;
  static WorldParams decode_params(WorldKind kind, io::Reader& r);
};

using State = std::array<double, kStateDim>;

struct Trajectory {
  uint32_t id = 0;
  World world;
  int frames = 0;
  double dt = 0.0;
  // frames * kStateDim, frame-major; every entry is exactly representable
  // as a 32-bit float so file round trips are bit exact.
  std::vector<double> states;

  std::span<const double> frame(int t) const {
    return std::span<const double>(states).subspan(
        static_cast<size_t>(t) * kStateDim, kStateDim);
  }
};

struct Condition {
  WorldKind kind = WorldKind::ConstantVelocity;
  State initial{};
  std::vector<double> encoding() const;  // one-hot(kind) then initial state
};
inline constexpr int kConditionDim = kNumKinds + kStateDim;

Condition condition_of(const Trajectory& traj);

State sample_initial(const World& world, Rng& rng);

Trajectory simulate(const World& world, const State& initial, int frames,
                    double dt, uint32_t id = 0);

// Mean squared violation of the world's discrete law over interior frames.
// Zero (up to float storage rounding) on simulate() output.
double physics_residual(const World& world, std::span<const double> states,
                        int frames, double dt);
double physics_residual(const Trajectory& traj);

std::vector<double> flatten(const Trajectory& traj);
std::vector<double> unflatten_states(std::span<const double> latent, int frames,
                                     int dim);

// One event-resolved ballistic step inside the box; shared by the simulator
// and the residual oracle so contact frames score exactly zero on oracle data.
struct Impact {
  double time = 0.0;      // offset into the step, (0, dt]
  int axis = 0;           // 0: vertical wall (x), 1: horizontal wall (y)
  double pre_normal = 0;  // signed normal velocity just before contact
  double post_normal = 0; // signed normal velocity just after contact
};
State ball_step(const WorldParams& p, const State& in, double dt,
                std::vector<Impact>* impacts);

struct DatasetSpec {
  std::array<int, kNumKinds> count_per_kind{};
  int frames = 16;
  double dt = 0.25;
  double heldout_fraction = 0.1;
  uint64_t seed = 0;
  std::array<World, kNumKinds> worlds{};
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Trajectory> items;         // ordered by id
  std::vector<uint32_t> train_ids;
  std::vector<uint32_t> heldout_ids;
};

Dataset make_dataset(const DatasetSpec& spec);

std::string serialize_dataset(const Dataset& ds);
Dataset parse_dataset(std::string_view bytes);
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace rdpo::dyn
