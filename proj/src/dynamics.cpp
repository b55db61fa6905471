#include "rdpo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rdpo::dyn {

namespace {

constexpr double kImpactTimeEps = 1e-12;
constexpr int kMaxImpactsPerStep = 64;

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline bool finite_state(const State& s) {
  return std::isfinite(s[0]) && std::isfinite(s[1]) && std::isfinite(s[2]) &&
         std::isfinite(s[3]);
}

double uniform_in(Rng& rng, double lo, double hi) {
  return lo + rng.uniform01() * (hi - lo);
}

// Damped-harmonic closed form per coordinate, unit mass.
struct SpringCoefs {
  double omega, zeta, omega_d;
};

SpringCoefs spring_coefs(const WorldParams& p) {
  const double omega = std::sqrt(p.spring_k);
  const double zeta = p.spring_zeta;
  return SpringCoefs{omega, zeta, omega * std::sqrt(1.0 - zeta * zeta)};
}

void spring_eval(const SpringCoefs& c, double x0, double v0, double tau,
                 double& x, double& v) {
  const double decay = std::exp(-c.zeta * c.omega * tau);
  const double cosd = std::cos(c.omega_d * tau);
  const double sind = std::sin(c.omega_d * tau);
  const double b = (v0 + c.zeta * c.omega * x0) / c.omega_d;
  x = decay * (x0 * cosd + b * sind);
  v = decay * ((-c.zeta * c.omega * x0 + b * c.omega_d) * cosd +
               (-c.zeta * c.omega * b - x0 * c.omega_d) * sind);
}

inline double sq(double v) { return v * v; }

}  // namespace

const char* kind_name(WorldKind kind) {
  switch (kind) {
    case WorldKind::ConstantVelocity: return "ConstantVelocity";
    case WorldKind::Projectile: return "Projectile";
    case WorldKind::BouncingBall: return "BouncingBall";
    case WorldKind::SpringOscillator: return "SpringOscillator";
  }
  return "?";
}

std::optional<WorldKind> kind_from_name(std::string_view name) {
  for (int k = 0; k < kNumKinds; ++k) {
    const auto kind = static_cast<WorldKind>(k);
    if (name == kind_name(kind)) return kind;
  }
  return std::nullopt;
}

void World::validate() const {
  const WorldParams& p = params;
  switch (kind) {
    case WorldKind::ConstantVelocity:
      return;
    case WorldKind::Projectile:
      if (!std::isfinite(p.gravity) || p.gravity <= 0) {
        throw std::invalid_argument("projectile gravity must be finite and > 0");
      }
      return;
    case WorldKind::BouncingBall:
      if (!std::isfinite(p.gravity) || p.gravity <= 0) {
        throw std::invalid_argument("ball gravity must be finite and > 0");
      }
      if (!std::isfinite(p.restitution) || p.restitution <= 0 || p.restitution > 1) {
        throw std::invalid_argument("restitution must be in (0, 1]");
      }
      if (!std::isfinite(p.box_w) || !std::isfinite(p.box_h) || p.box_w <= 0 ||
          p.box_h <= 0) {
        throw std::invalid_argument("box bounds must be finite and > 0");
      }
      return;
    case WorldKind::SpringOscillator:
      if (!std::isfinite(p.spring_k) || p.spring_k <= 0) {
        throw std::invalid_argument("spring stiffness must be finite and > 0");
      }
      if (!std::isfinite(p.spring_zeta) || p.spring_zeta < 0 || p.spring_zeta >= 1) {
        throw std::invalid_argument("damping ratio must be in [0, 1)");
      }
      return;
  }
  throw std::invalid_argument("unknown world kind");
}

int World::param_count() const {
  switch (kind) {
    case WorldKind::ConstantVelocity: return 0;
    case WorldKind::Projectile: return 1;
    case WorldKind::BouncingBall: return 4;
    case WorldKind::SpringOscillator: return 2;
  }
  return 0;
}

void World::encode_params(std::string& out) const {
  switch (kind) {
    case WorldKind::ConstantVelocity:
      return;
    case WorldKind::Projectile:
      io::put_f32(out, static_cast<float>(params.gravity));
      return;
    case WorldKind::BouncingBall:
      io::put_f32(out, static_cast<float>(params.gravity));
      io::put_f32(out, static_cast<float>(params.restitution));
      io::put_f32(out, static_cast<float>(params.box_w));
      io::put_f32(out, static_cast<float>(params.box_h));
      return;
    case WorldKind::SpringOscillator:
      io::put_f32(out, static_cast<float>(params.spring_k));
      io::put_f32(out, static_cast<float>(params.spring_zeta));
      return;
  }
}

WorldParams World::decode_params(WorldKind kind, io::Reader& r) {
  WorldParams p;
  switch (kind) {
    case WorldKind::ConstantVelocity:
      break;
    case WorldKind::Projectile:
      p.gravity = r.get_f32();
      break;
    case WorldKind::BouncingBall:
      p.gravity = r.get_f32();
      p.restitution = r.get_f32();
      p.box_w = r.get_f32();
      p.box_h = r.get_f32();
      break;
    case WorldKind::SpringOscillator:
      p.spring_k = r.get_f32();
      p.spring_zeta = r.get_f32();
      break;
  }
  return p;
}

std::vector<double> Condition::encoding() const {
  std::vector<double> out(kConditionDim, 0.0);
  out[static_cast<int>(kind)] = 1.0;
  for (int j = 0; j < kStateDim; ++j) out[kNumKinds + j] = initial[j];
  return out;
}

Condition condition_of(const Trajectory& traj) {
  Condition c;
  c.kind = traj.world.kind;
  const auto f0 = traj.frame(0);
  std::copy(f0.begin(), f0.end(), c.initial.begin());
  return c;
}

State sample_initial(const World& world, Rng& rng) {
  // Documented ranges. Bouncing-ball starts keep enough drop height that the
  // contact cadence stays far from the accumulation regime over the horizon.
  State s{};
  switch (world.kind) {
    case WorldKind::ConstantVelocity:
      s[0] = uniform_in(rng, -2.0, 2.0);
      s[1] = uniform_in(rng, -2.0, 2.0);
      s[2] = uniform_in(rng, -1.5, 1.5);
      s[3] = uniform_in(rng, -1.5, 1.5);
      return s;
    case WorldKind::Projectile:
      s[0] = uniform_in(rng, -2.0, 2.0);
      s[1] = uniform_in(rng, 1.0, 3.0);
      s[2] = uniform_in(rng, -1.0, 1.0);
      s[3] = uniform_in(rng, -0.5, 0.5);
      return s;
    case WorldKind::BouncingBall:
      s[0] = uniform_in(rng, 0.5, world.params.box_w - 0.5);
      s[1] = uniform_in(rng, 1.0, world.params.box_h - 0.5);
      s[2] = uniform_in(rng, -1.0, 1.0);
      s[3] = uniform_in(rng, -0.5, 0.5);
      return s;
    case WorldKind::SpringOscillator:
      s[0] = uniform_in(rng, -2.0, 2.0);
      s[1] = uniform_in(rng, -2.0, 2.0);
      s[2] = uniform_in(rng, -2.0, 2.0);
      s[3] = uniform_in(rng, -2.0, 2.0);
      return s;
  }
  throw std::invalid_argument("unknown world kind");
}

State ball_step(const WorldParams& p, const State& in, double dt,
                std::vector<Impact>* impacts) {
  double x = in[0], y = in[1], vx = in[2], vy = in[3];
  const double g = p.gravity, e = p.restitution, w = p.box_w, h = p.box_h;

  // Outside the box there is no wall to resolve against; advance ballistically
  // so the oracle stays total on arbitrary (generated) states.
  if (x < 0 || x > w || y < 0 || y > h) {
    x += vx * dt;
    y += vy * dt - 0.5 * g * dt * dt;
    vy -= g * dt;
    return State{x, y, vx, vy};
  }

  double remaining = dt;
  double elapsed = 0.0;
  int guard = 0;
  while (remaining > 0.0) {
    double best = std::numeric_limits<double>::infinity();
    int axis = -1;
    if (vx < 0) {
      const double t_hit = -x / vx;
      if (t_hit > kImpactTimeEps && t_hit < best) { best = t_hit; axis = 0; }
    } else if (vx > 0) {
      const double t_hit = (w - x) / vx;
      if (t_hit > kImpactTimeEps && t_hit < best) { best = t_hit; axis = 0; }
    }
    {
      // Floor: first downward crossing of y = 0 on the parabola.
      const double disc = vy * vy + 2.0 * g * y;
      const double t_floor = (vy + std::sqrt(std::max(disc, 0.0))) / g;
      if (t_floor > kImpactTimeEps && t_floor < best) { best = t_floor; axis = 1; }
    }
    if (vy > 0) {
      const double disc = vy * vy - 2.0 * g * (h - y);
      if (disc >= 0) {
        const double t_ceil = (vy - std::sqrt(disc)) / g;
        if (t_ceil > kImpactTimeEps && t_ceil < best) { best = t_ceil; axis = 1; }
      }
    }

    if (axis < 0 || best > remaining || ++guard > kMaxImpactsPerStep) {
      x += vx * remaining;
      y += vy * remaining - 0.5 * g * remaining * remaining;
      vy -= g * remaining;
      remaining = 0.0;
      break;
    }

    x += vx * best;
    y += vy * best - 0.5 * g * best * best;
    vy -= g * best;
    elapsed += best;
    remaining -= best;

    Impact impact;
    impact.time = elapsed;
    impact.axis = axis;
    if (axis == 0) {
      x = (vx > 0) ? w : 0.0;  // snap onto the wall
      impact.pre_normal = vx;
      vx = -e * vx;
      impact.post_normal = vx;
    } else {
      y = (vy < 0 || y <= 0.5 * h) ? 0.0 : h;
      impact.pre_normal = vy;
      vy = -e * vy;
      impact.post_normal = vy;
    }
    if (impacts) impacts->push_back(impact);
  }
  return State{x, y, vx, vy};
}

Trajectory simulate(const World& world, const State& initial, int frames,
                    double dt, uint32_t id) {
  world.validate();
  if (frames < 3) {
    throw std::invalid_argument("need at least 3 frames");
  }
  if (!std::isfinite(dt) || dt <= 0) {
    throw std::invalid_argument("dt must be finite and > 0");
  }
  if (!finite_state(initial)) {
    throw std::invalid_argument("initial state must be finite");
  }

  Trajectory traj;
  traj.id = id;
  traj.world = world;
  traj.frames = frames;
  traj.dt = dt;
  traj.states.resize(static_cast<size_t>(frames) * kStateDim);

  auto store = [&](int t, const State& s) {
    for (int j = 0; j < kStateDim; ++j) {
      traj.states[static_cast<size_t>(t) * kStateDim + j] = quantize_f32(s[j]);
    }
  };

  switch (world.kind) {
    case WorldKind::ConstantVelocity:
      for (int t = 0; t < frames; ++t) {
        const double tau = t * dt;
        store(t, State{initial[0] + initial[2] * tau, initial[1] + initial[3] * tau,
                       initial[2], initial[3]});
      }
      break;
    case WorldKind::Projectile: {
      const double g = world.params.gravity;
      for (int t = 0; t < frames; ++t) {
        const double tau = t * dt;
        store(t, State{initial[0] + initial[2] * tau,
                       initial[1] + initial[3] * tau - 0.5 * g * tau * tau,
                       initial[2], initial[3] - g * tau});
      }
      break;
    }
    case WorldKind::SpringOscillator: {
      const SpringCoefs c = spring_coefs(world.params);
      for (int t = 0; t < frames; ++t) {
        const double tau = t * dt;
        State s{};
        spring_eval(c, initial[0], initial[2], tau, s[0], s[2]);
        spring_eval(c, initial[1], initial[3], tau, s[1], s[3]);
        store(t, s);
      }
      break;
    }
    case WorldKind::BouncingBall: {
      // Event-resolved stepping from the stored (float-rounded) frame, so the
      // stored sequence satisfies the discrete law the oracle re-applies.
      store(0, initial);
      for (int t = 1; t < frames; ++t) {
        State prev{};
        const auto pf = traj.frame(t - 1);
        std::copy(pf.begin(), pf.end(), prev.begin());
        store(t, ball_step(world.params, prev, dt, nullptr));
      }
      break;
    }
  }
  return traj;
}

namespace {

double ball_residual(const World& world, std::span<const double> s, int frames,
                     double dt) {
  const WorldParams& p = world.params;
  const double g = p.gravity;

  auto state_at = [&](int t) {
    return State{s[static_cast<size_t>(t) * 4 + 0], s[static_cast<size_t>(t) * 4 + 1],
                 s[static_cast<size_t>(t) * 4 + 2], s[static_cast<size_t>(t) * 4 + 3]};
  };

  // Resolve each interval once; intervals with contacts switch the adjacent
  // frames from ballistic scoring to contact scoring.
  std::vector<std::vector<Impact>> impacts(static_cast<size_t>(frames) - 1);
  std::vector<State> predicted(static_cast<size_t>(frames) - 1);
  for (int t = 0; t + 1 < frames; ++t) {
    predicted[t] = ball_step(p, state_at(t), dt, &impacts[t]);
  }

  double total = 0.0;
  for (int t = 1; t + 1 < frames; ++t) {
    const State a = state_at(t - 1), b = state_at(t), c = state_at(t + 1);
    const auto& cur = impacts[t];
    const bool prev_contact = !impacts[t - 1].empty();

    if (cur.empty() && !prev_contact) {
      total += sq(c[0] - 2 * b[0] + a[0]) + sq(c[1] - 2 * b[1] + a[1] + g * dt * dt);
      total += sq(c[2] - b[2]) + sq(c[3] - b[3] + g * dt);
    } else if (cur.empty()) {
      // The bounce was in the previous interval (scored there); check only the
      // forward one-step ballistic law, which is still exact from frame t.
      total += sq(c[0] - (b[0] + b[2] * dt)) +
               sq(c[1] - (b[1] + b[3] * dt - 0.5 * g * dt * dt));
      total += sq(c[2] - b[2]) + sq(c[3] - (b[3] - g * dt));
    } else if (cur.size() == 1) {
      // Restitution-ratio error: compare the observed post-contact normal
      // velocity (next frame propagated back to the impact instant) with
      // -e * (pre-contact normal velocity propagated from this frame).
      const Impact& imp = cur[0];
      const double observed = (imp.axis == 0)
                                  ? c[2]
                                  : c[3] + g * (dt - imp.time);
      total += sq(observed - (-p.restitution * imp.pre_normal));
    } else {
      // Multiple contacts in one interval: score the full one-step event map.
      const State& q = predicted[t];
      total += sq(c[0] - q[0]) + sq(c[1] - q[1]) + sq(c[2] - q[2]) + sq(c[3] - q[3]);
    }
  }
  return total / (frames - 2);
}

}  // namespace

double physics_residual(const World& world, std::span<const double> states,
                        int frames, double dt) {
  world.validate();
  if (frames < 3) {
    throw std::invalid_argument("residual needs at least 3 frames");
  }
  if (states.size() != static_cast<size_t>(frames) * kStateDim) {
    throw std::invalid_argument("state length does not match world dimension");
  }
  for (double v : states) {
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
  }

  if (world.kind == WorldKind::BouncingBall) {
    return ball_residual(world, states, frames, dt);
  }

  double acc_y = 0.0;  // constant vertical acceleration for ballistic kinds
  double c1 = 2.0, c0 = -1.0;
  if (world.kind == WorldKind::Projectile) acc_y = -world.params.gravity;
  if (world.kind == WorldKind::SpringOscillator) {
    const SpringCoefs c = spring_coefs(world.params);
    c1 = 2.0 * std::exp(-c.zeta * c.omega * dt) * std::cos(c.omega_d * dt);
    c0 = -std::exp(-2.0 * c.zeta * c.omega * dt);
  }

  double total = 0.0;
  for (int t = 1; t + 1 < frames; ++t) {
    const size_t i = static_cast<size_t>(t) * 4;
    const double* a = &states[i - 4];
    const double* b = &states[i];
    const double* c = &states[i + 4];
    if (world.kind == WorldKind::SpringOscillator) {
      // The sampled damped oscillator satisfies the same two-term recurrence
      // in every channel.
      for (int j = 0; j < 4; ++j) total += sq(c[j] - c1 * b[j] - c0 * a[j]);
    } else {
      total += sq(c[0] - 2 * b[0] + a[0]) + sq(c[1] - 2 * b[1] + a[1] - acc_y * dt * dt);
      total += sq(c[2] - b[2]) + sq(c[3] - b[3] - acc_y * dt);
    }
  }
  return total / (frames - 2);
}

double physics_residual(const Trajectory& traj) {
  return physics_residual(traj.world, traj.states, traj.frames, traj.dt);
}

std::vector<double> flatten(const Trajectory& traj) { return traj.states; }

std::vector<double> unflatten_states(std::span<const double> latent, int frames,
                                     int dim) {
  if (latent.size() != static_cast<size_t>(frames) * dim) {
    throw std::invalid_argument("latent length does not match frames * dim");
  }
  return std::vector<double>(latent.begin(), latent.end());
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.frames < 3) throw std::invalid_argument("need at least 3 frames");
  if (!(spec.heldout_fraction >= 0.0 && spec.heldout_fraction < 1.0)) {
    throw std::invalid_argument("heldout fraction must be in [0, 1)");
  }
  int total = 0;
  for (int k = 0; k < kNumKinds; ++k) {
    if (spec.count_per_kind[k] < 0) throw std::invalid_argument("negative count");
    total += spec.count_per_kind[k];
    spec.worlds[k].validate();
    if (spec.worlds[k].kind != static_cast<WorldKind>(k)) {
      throw std::invalid_argument("world table order mismatch");
    }
  }
  if (total == 0) throw std::invalid_argument("dataset would be empty");

  Dataset ds;
  ds.spec = spec;
  ds.items.reserve(total);
  const Rng root = Rng(spec.seed).child(kDatasetInit);

  uint32_t id = 0;
  for (int k = 0; k < kNumKinds; ++k) {
    const int n = spec.count_per_kind[k];
    const int heldout = static_cast<int>(std::llround(n * spec.heldout_fraction));
    const int train = n - heldout;
    for (int i = 0; i < n; ++i, ++id) {
      Rng stream = root.child(id);
      const State init = sample_initial(spec.worlds[k], stream);
      ds.items.push_back(simulate(spec.worlds[k], init, spec.frames, spec.dt, id));
      if (i < train) {
        ds.train_ids.push_back(id);
      } else {
        ds.heldout_ids.push_back(id);
      }
    }
  }
  return ds;
}

namespace {
constexpr std::string_view kDatasetMagic = "RDPODS1\n";
}

std::string serialize_dataset(const Dataset& ds) {
  std::string out(kDatasetMagic);

  std::string kinds;
  std::string counts;
  for (int k = 0; k < kNumKinds; ++k) {
    if (k) {
      kinds.push_back(',');
      counts.push_back(',');
    }
    kinds += io::fmt_int(k) + ":" + kind_name(static_cast<WorldKind>(k));
    counts += io::fmt_int(ds.spec.count_per_kind[k]);
  }
  out += io::kv_line({{"version", "1"},
                      {"frames", io::fmt_int(ds.spec.frames)},
                      {"dim", io::fmt_int(kStateDim)},
                      {"dt", io::fmt_double(ds.spec.dt)},
                      {"seed", std::to_string(ds.spec.seed)},
                      {"split", io::fmt_double(ds.spec.heldout_fraction)},
                      {"kinds", kinds},
                      {"counts", counts},
                      {"train", io::fmt_int(static_cast<int64_t>(ds.train_ids.size()))},
                      {"heldout", io::fmt_int(static_cast<int64_t>(ds.heldout_ids.size()))}});

  for (const Trajectory& traj : ds.items) {
    io::put_u32(out, traj.id);
    io::put_u8(out, static_cast<uint8_t>(traj.world.kind));
    traj.world.encode_params(out);
    for (double v : traj.states) io::put_f32(out, static_cast<float>(v));
  }
  return out;
}

Dataset parse_dataset(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.get_bytes(kDatasetMagic.size()) != kDatasetMagic) {
    throw std::runtime_error("not a trajectory dataset file (bad magic)");
  }
  const auto kv = io::parse_kv_line(r.get_line());
  if (io::kv_get(kv, "version") != "1") {
    throw std::runtime_error("unsupported dataset version");
  }

  Dataset ds;
  ds.spec.frames = static_cast<int>(io::parse_i64(io::kv_get(kv, "frames")));
  if (io::parse_i64(io::kv_get(kv, "dim")) != kStateDim) {
    throw std::runtime_error("unsupported state dimension");
  }
  ds.spec.dt = io::parse_double(io::kv_get(kv, "dt"));
  ds.spec.seed = io::parse_u64(io::kv_get(kv, "seed"));
  ds.spec.heldout_fraction = io::parse_double(io::kv_get(kv, "split"));
  const auto counts = io::split(io::kv_get(kv, "counts"), ',');
  if (counts.size() != kNumKinds) throw std::runtime_error("bad counts header");
  for (int k = 0; k < kNumKinds; ++k) {
    ds.spec.count_per_kind[k] = static_cast<int>(io::parse_i64(counts[k]));
  }

  int total = 0;
  for (int c : ds.spec.count_per_kind) total += c;
  ds.items.reserve(total);
  std::array<bool, kNumKinds> world_seen{};
  for (int k = 0; k < kNumKinds; ++k) {
    const int n = ds.spec.count_per_kind[k];
    const int heldout = static_cast<int>(std::llround(n * ds.spec.heldout_fraction));
    const int train = n - heldout;
    for (int i = 0; i < n; ++i) {
      Trajectory traj;
      traj.id = r.get_u32();
      const uint8_t kind_byte = r.get_u8();
      if (kind_byte >= kNumKinds) throw std::runtime_error("bad world kind byte");
      traj.world.kind = static_cast<WorldKind>(kind_byte);
      traj.world.params = World::decode_params(traj.world.kind, r);
      traj.frames = ds.spec.frames;
      traj.dt = ds.spec.dt;
      traj.states.resize(static_cast<size_t>(traj.frames) * kStateDim);
      for (double& v : traj.states) v = r.get_f32();
      if (!world_seen[kind_byte]) {
        ds.spec.worlds[kind_byte] = traj.world;
        world_seen[kind_byte] = true;
      }
      const uint32_t index = static_cast<uint32_t>(ds.items.size());
      ds.items.push_back(std::move(traj));
      if (i < train) {
        ds.train_ids.push_back(index);
      } else {
        ds.heldout_ids.push_back(index);
      }
    }
  }
  if (!r.at_end()) throw std::runtime_error("trailing bytes in dataset file");
  if (io::parse_i64(io::kv_get(kv, "train")) != static_cast<int64_t>(ds.train_ids.size()) ||
      io::parse_i64(io::kv_get(kv, "heldout")) != static_cast<int64_t>(ds.heldout_ids.size())) {
    throw std::runtime_error("split counts do not match records");
  }
  return ds;
}

void write_dataset(const std::string& path, const Dataset& ds) {
  io::write_file(path, serialize_dataset(ds));
}

Dataset read_dataset(const std::string& path) {
  return parse_dataset(io::read_file(path));
}

}  // namespace rdpo::dyn
