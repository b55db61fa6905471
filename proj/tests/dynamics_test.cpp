#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "rdpo/dynamics.hpp"

using namespace rdpo;
using dyn::State;
using dyn::World;
using dyn::WorldKind;

namespace {

World cv_world() { return World{WorldKind::ConstantVelocity, {}}; }

World projectile_world(double g) {
  World w{WorldKind::Projectile, {}};
  w.params.gravity = g;
  return w;
}

World ball_world(double g, double e, double box = 4.0) {
  World w{WorldKind::BouncingBall, {}};
  w.params.gravity = g;
  w.params.restitution = e;
  w.params.box_w = box;
  w.params.box_h = box;
  return w;
}

World spring_world(double k, double zeta) {
  World w{WorldKind::SpringOscillator, {}};
  w.params.spring_k = k;
  w.params.spring_zeta = zeta;
  return w;
}

std::array<World, 4> default_worlds() {
  return {cv_world(), projectile_world(1.0), ball_world(2.0, 0.85),
          spring_world(4.0, 0.1)};
}

}  // namespace

TEST_CASE("constant velocity follows straight lines") {
  const auto traj = dyn::simulate(cv_world(), State{0, 0, 1, 2}, 4, 1.0);
  const double want[4][2] = {{0, 0}, {1, 2}, {2, 4}, {3, 6}};
  for (int t = 0; t < 4; ++t) {
    CHECK(traj.frame(t)[0] == want[t][0]);
    CHECK(traj.frame(t)[1] == want[t][1]);
    CHECK(traj.frame(t)[2] == 1.0);
    CHECK(traj.frame(t)[3] == 2.0);
  }
}

TEST_CASE("projectile matches the closed form") {
  const auto traj = dyn::simulate(projectile_world(1.0), State{0, 0, 0, 0}, 4, 1.0);
  const double want_y[4] = {0.0, -0.5, -2.0, -4.5};
  for (int t = 0; t < 4; ++t) {
    CHECK(traj.frame(t)[1] == doctest::Approx(want_y[t]).epsilon(1e-12));
  }
  CHECK(dyn::physics_residual(traj) <= 1e-9);
}

TEST_CASE("hand-built analytic projectile has zero residual") {
  dyn::Trajectory traj;
  traj.world = projectile_world(1.0);
  traj.frames = 4;
  traj.dt = 1.0;
  // positions 0, -0.5, -2, -4.5 with the matching velocities 0, -1, -2, -3
  traj.states = {0, 0,    0, 0,   //
                 0, -0.5, 0, -1,  //
                 0, -2.0, 0, -2,  //
                 0, -4.5, 0, -3};
  CHECK(dyn::physics_residual(traj) == 0.0);
}

TEST_CASE("simulate is a pure function of its arguments") {
  const auto a = dyn::simulate(spring_world(4.0, 0.1), State{1, -1, 0.5, 0.25}, 16, 0.25, 3);
  const auto b = dyn::simulate(spring_world(4.0, 0.1), State{1, -1, 0.5, 0.25}, 16, 0.25, 3);
  CHECK(a.states == b.states);
}

TEST_CASE("simulate rejects bad input") {
  CHECK_THROWS(dyn::simulate(cv_world(), State{0, 0, 0, 0}, 2, 1.0));
  CHECK_THROWS(dyn::simulate(cv_world(), State{0, 0, 0, 0}, 16, 0.0));
  const double nan = std::nan("");
  CHECK_THROWS(dyn::simulate(cv_world(), State{nan, 0, 0, 0}, 16, 0.25));
  CHECK_THROWS(dyn::simulate(ball_world(2.0, 0.0), State{2, 2, 0, 0}, 16, 0.25));
  CHECK_THROWS(dyn::simulate(ball_world(2.0, 1.5), State{2, 2, 0, 0}, 16, 0.25));
  CHECK_THROWS(dyn::simulate(spring_world(-1.0, 0.1), State{1, 1, 0, 0}, 16, 0.25));
  CHECK_THROWS(dyn::simulate(projectile_world(0.0), State{0, 2, 0, 0}, 16, 0.25));
}

TEST_CASE("sample_initial is deterministic and respects its documented bounds") {
  const auto worlds = default_worlds();
  for (const World& w : worlds) {
    Rng a(5), b(5);
    CHECK(dyn::sample_initial(w, a) == dyn::sample_initial(w, b));
  }

  Rng rng(123);
  for (int i = 0; i < 10000; ++i) {
    const World& w = worlds[i % 4];
    const State s = dyn::sample_initial(w, rng);
    CHECK(s.size() == 4);
    switch (w.kind) {
      case WorldKind::ConstantVelocity:
        CHECK(std::abs(s[0]) <= 2.0);
        CHECK(std::abs(s[1]) <= 2.0);
        CHECK(std::abs(s[2]) <= 1.5);
        CHECK(std::abs(s[3]) <= 1.5);
        break;
      case WorldKind::Projectile:
        CHECK(std::abs(s[0]) <= 2.0);
        CHECK(s[1] >= 1.0);
        CHECK(s[1] <= 3.0);
        CHECK(std::abs(s[2]) <= 1.0);
        CHECK(std::abs(s[3]) <= 0.5);
        break;
      case WorldKind::BouncingBall:
        CHECK(s[0] >= 0.5);
        CHECK(s[0] <= w.params.box_w - 0.5);
        CHECK(s[1] >= 1.0);
        CHECK(s[1] <= w.params.box_h - 0.5);
        break;
      case WorldKind::SpringOscillator:
        for (double v : s) CHECK(std::abs(v) <= 2.0);
        break;
    }
  }
}

TEST_CASE("the simulator satisfies its own law for every kind and seed") {
  const auto worlds = default_worlds();
  Rng rng(99);
  for (int trial = 0; trial < 256; ++trial) {
    const World& w = worlds[trial % 4];
    Rng stream = rng.child(trial);
    const State init = dyn::sample_initial(w, stream);
    const auto traj = dyn::simulate(w, init, 16, 0.25, trial);
    CHECK(dyn::physics_residual(traj) <= 1e-9);
  }
}

TEST_CASE("residual validates its input") {
  const auto traj = dyn::simulate(cv_world(), State{0, 0, 1, 1}, 16, 0.25);
  std::vector<double> short_states(traj.states.begin(), traj.states.end() - 4);
  CHECK_THROWS(dyn::physics_residual(traj.world, short_states, 16, 0.25));
  CHECK_THROWS(dyn::physics_residual(traj.world, traj.states, 2, 0.25));
}

TEST_CASE("residual grows with noise and matches the analytic expectation") {
  const World w = projectile_world(1.0);
  const int frames = 16;
  const double dt = 0.25;
  const auto clean = dyn::simulate(w, State{0, 2, 0.5, 0.2}, frames, dt);
  CHECK(dyn::physics_residual(clean) <= 1e-12);

  // Independent oracle for the perturbed mean: i.i.d. noise of variance s^2 on
  // every position coordinate feeds the position second difference with
  // weights (1, -2, 1), so each interior frame contributes 6 s^2 per
  // coordinate and the expected residual is 12 s^2.
  auto measure = [&](double sigma, int trials) {
    Rng rng(2024);
    double total = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      Rng stream = rng.child(trial);
      dyn::Trajectory noisy = clean;
      for (int t = 0; t < frames; ++t) {
        noisy.states[t * 4 + 0] += sigma * stream.gaussian();
        noisy.states[t * 4 + 1] += sigma * stream.gaussian();
      }
      total += dyn::physics_residual(noisy);
    }
    return total / trials;
  };

  const double lo = measure(0.01, 2000);
  const double hi = measure(0.03, 2000);
  CHECK(lo < hi);

  const double sigma = 0.01;
  const double mean = measure(sigma, 10000);
  const double expected = 12.0 * sigma * sigma;
  CHECK(mean == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("bouncing ball: restitution-one impacts preserve speed") {
  const World w = ball_world(2.0, 1.0);
  State s{2.0, 2.5, 0.3, 0.0};
  const double energy0 = s[3] * s[3] + 2.0 * w.params.gravity * s[1];
  std::vector<dyn::Impact> impacts;
  for (int t = 0; t < 15; ++t) s = dyn::ball_step(w.params, s, 0.25, &impacts);
  REQUIRE(!impacts.empty());
  for (const dyn::Impact& imp : impacts) {
    CHECK(std::abs(std::abs(imp.post_normal) - std::abs(imp.pre_normal)) <= 1e-9);
  }
  // Vertical energy is invariant across elastic bounces.
  const double energy1 = s[3] * s[3] + 2.0 * w.params.gravity * s[1];
  CHECK(energy1 == doctest::Approx(energy0).epsilon(1e-9));
}

TEST_CASE("bouncing ball: event resolution agrees with brute-force substepping") {
  const World w = ball_world(2.0, 0.85);
  const State init{1.2, 2.8, 0.8, -0.1};
  const int frames = 16;
  const double dt = 0.25;
  const auto traj = dyn::simulate(w, init, frames, dt, 0);

  // Naive reference: fixed substeps with reflection on crossing.
  State s = init;
  const double h = dt / 1000.0;
  for (int t = 1; t < frames; ++t) {
    for (int k = 0; k < 1000; ++k) {
      s[0] += s[2] * h;
      s[1] += s[3] * h - 0.5 * w.params.gravity * h * h;
      s[3] -= w.params.gravity * h;
      if (s[1] < 0) { s[1] = -s[1]; s[3] = -w.params.restitution * s[3]; }
      if (s[1] > w.params.box_h) { s[1] = 2 * w.params.box_h - s[1]; s[3] = -w.params.restitution * s[3]; }
      if (s[0] < 0) { s[0] = -s[0]; s[2] = -w.params.restitution * s[2]; }
      if (s[0] > w.params.box_w) { s[0] = 2 * w.params.box_w - s[0]; s[2] = -w.params.restitution * s[2]; }
    }
    CHECK(std::abs(traj.frame(t)[0] - s[0]) < 0.02);
    CHECK(std::abs(traj.frame(t)[1] - s[1]) < 0.02);
  }
}

TEST_CASE("flatten and unflatten are exact inverses") {
  // 2x2 example, frame-major.
  const std::vector<double> latent{1, 2, 3, 4};
  const auto states = dyn::unflatten_states(latent, 2, 2);
  CHECK(states == latent);
  CHECK_THROWS(dyn::unflatten_states(latent, 3, 2));

  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    Rng stream = rng.child(trial);
    dyn::Trajectory traj;
    traj.world = cv_world();
    traj.frames = 5;
    traj.dt = 0.25;
    traj.states.resize(20);
    for (double& v : traj.states) v = stream.gaussian();
    const auto lat = dyn::flatten(traj);
    CHECK(dyn::unflatten_states(lat, 5, 4) == traj.states);
  }
}

TEST_CASE("dataset splits, determinism and file round trip") {
  dyn::DatasetSpec spec;
  spec.count_per_kind = {100, 0, 0, 0};
  spec.frames = 8;
  spec.dt = 0.25;
  spec.heldout_fraction = 0.1;
  spec.seed = 21;
  spec.worlds = default_worlds();

  const auto ds = dyn::make_dataset(spec);
  CHECK(ds.train_ids.size() == 90);
  CHECK(ds.heldout_ids.size() == 10);
  for (uint32_t h : ds.heldout_ids) {
    for (uint32_t t : ds.train_ids) CHECK(h != t);
  }

  const std::string bytes_a = dyn::serialize_dataset(ds);
  const std::string bytes_b = dyn::serialize_dataset(dyn::make_dataset(spec));
  CHECK(bytes_a == bytes_b);

  const auto back = dyn::parse_dataset(bytes_a);
  REQUIRE(back.items.size() == ds.items.size());
  for (size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(back.items[i].states == ds.items[i].states);
    CHECK(back.items[i].id == ds.items[i].id);
  }
  CHECK(dyn::serialize_dataset(back) == bytes_a);

  dyn::DatasetSpec per_kind = spec;
  per_kind.count_per_kind = {40, 40, 40, 40};
  const auto ds4 = dyn::make_dataset(per_kind);
  CHECK(ds4.train_ids.size() == 144);
  CHECK(ds4.heldout_ids.size() == 16);

  dyn::DatasetSpec empty = spec;
  empty.count_per_kind = {0, 0, 0, 0};
  CHECK_THROWS(dyn::make_dataset(empty));

  CHECK_THROWS(dyn::write_dataset("/nonexistent-dir/x.rdpods", ds));
  CHECK_THROWS(dyn::parse_dataset("BADMAGIC"));
}
