#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rdpo/flow_model.hpp"
#include "rdpo/kernels.hpp"

using namespace rdpo;
using flow::ModelParams;
using flow::ModelShape;

namespace {

ModelShape tiny_shape() {
  ModelShape s;
  s.latent = 16;  // 4 frames x 4 state dims
  s.cond = dyn::kConditionDim;
  s.emb = 4;
  s.width = 8;
  s.layers = 2;
  return s;
}

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

std::vector<double> random_cond(Rng& rng) {
  std::vector<double> c(dyn::kConditionDim, 0.0);
  c[rng.next_u64() % dyn::kNumKinds] = 1.0;
  for (int j = dyn::kNumKinds; j < dyn::kConditionDim; ++j) c[j] = rng.gaussian();
  return c;
}

}  // namespace

TEST_CASE("noising identities at the endpoints are exact per element") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Rng stream = rng.child(trial);
    const auto x0 = random_vec(16, stream);
    Rng noise = stream.child(1);
    const auto at_zero = flow::noising(x0, 0, 50, noise);
    CHECK(at_zero.x == x0);

    Rng noise2 = stream.child(2);
    const auto at_top = flow::noising(x0, 50, 50, noise2);
    CHECK(at_top.x == at_top.eps);
  }
}

TEST_CASE("noising midpoint arithmetic") {
  const std::vector<double> x0{2, 0};
  const auto ns = flow::noising_with_eps(x0, 25, 50, {0, 2});
  CHECK(ns.t == 0.5);
  CHECK(ns.x[0] == 1.0);
  CHECK(ns.x[1] == 1.0);
}

TEST_CASE("noising is the stated linear interpolation") {
  Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    Rng stream = rng.child(trial);
    const auto x0 = random_vec(16, stream);
    const int s = 1 + static_cast<int>(stream.next_u64() % 49);
    Rng noise = stream.child(3);
    const auto ns = flow::noising(x0, s, 50, noise);
    double lhs = 0, rhs = 0;
    for (size_t i = 0; i < x0.size(); ++i) {
      lhs += (ns.x[i] - x0[i]) * (ns.x[i] - x0[i]);
      rhs += (ns.eps[i] - x0[i]) * (ns.eps[i] - x0[i]);
    }
    CHECK(std::sqrt(lhs) == doctest::Approx(ns.t * std::sqrt(rhs)).epsilon(1e-12));
  }
}

TEST_CASE("noising rejects out-of-range steps") {
  const std::vector<double> x0{1, 2};
  Rng rng(1);
  CHECK_THROWS(flow::noising(x0, -1, 50, rng));
  CHECK_THROWS(flow::noising(x0, 51, 50, rng));
  CHECK_THROWS(flow::noising_with_eps(x0, 1, 50, {1.0}));
}

TEST_CASE("zero-initialized parameters give the zero velocity field") {
  const ModelParams p = ModelParams::zeros(tiny_shape());
  Rng rng(4);
  flow::Activations acts;
  for (int trial = 0; trial < 10; ++trial) {
    Rng stream = rng.child(trial);
    const auto x = random_vec(16, stream);
    const auto c = random_cond(stream);
    velocity(p, x, stream.uniform01(), c, acts);
    for (double v : acts.out) CHECK(v == 0.0);
  }
}

TEST_CASE("velocity is deterministic and checks shapes") {
  const ModelParams p = ModelParams::random_init(tiny_shape(), Rng(7).child(1));
  Rng rng(8);
  const auto x = random_vec(16, rng);
  const auto c = random_cond(rng);
  flow::Activations a1, a2;
  velocity(p, x, 0.3, c, a1);
  velocity(p, x, 0.3, c, a2);
  CHECK(a1.out == a2.out);

  flow::Activations bad;
  const std::vector<double> wrong(15, 0.0);
  CHECK_THROWS(velocity(p, wrong, 0.3, c, bad));
}

TEST_CASE("input jacobian-vector products match central differences") {
  const ModelShape shape = tiny_shape();
  const ModelParams p = ModelParams::random_init(shape, Rng(9).child(1));
  Rng rng(10);
  flow::Activations acts, scratch;

  for (int probe = 0; probe < 10; ++probe) {
    Rng stream = rng.child(probe);
    const auto x = random_vec(shape.latent, stream);
    const auto c = random_cond(stream);
    const double t = stream.uniform01();
    auto dir = random_vec(shape.latent, stream);
    double norm = 0;
    for (double v : dir) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;

    // Assemble J v row by row from latent-input VJPs against basis vectors.
    std::vector<double> grad(shape.param_count());
    std::vector<double> jv(shape.latent, 0.0);
    std::vector<double> basis(shape.latent, 0.0);
    std::vector<double> g_x(shape.latent, 0.0);
    velocity(p, x, t, c, acts);
    for (int r = 0; r < shape.latent; ++r) {
      std::fill(basis.begin(), basis.end(), 0.0);
      basis[r] = 1.0;
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(g_x.begin(), g_x.end(), 0.0);
      velocity_vjp(p, acts, basis, grad, g_x, scratch);
      for (int i = 0; i < shape.latent; ++i) jv[r] += g_x[i] * dir[i];
    }

    const double h = 1e-4;
    std::vector<double> xp(x), xm(x);
    for (int i = 0; i < shape.latent; ++i) {
      xp[i] += h * dir[i];
      xm[i] -= h * dir[i];
    }
    flow::Activations ap, am;
    velocity(p, xp, t, c, ap);
    velocity(p, xm, t, c, am);
    for (int r = 0; r < shape.latent; ++r) {
      const double fd = (ap.out[r] - am.out[r]) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(jv[r]), 1e-8});
      CHECK(std::abs(fd - jv[r]) / denom < 1e-4);
    }
  }
}

TEST_CASE("flow error oracle cases") {
  const ModelShape shape = tiny_shape();
  Rng rng(12);

  // Zero velocity: error is exactly ||eps - x0||^2.
  const ModelParams zeros = ModelParams::zeros(shape);
  const auto x0 = random_vec(shape.latent, rng);
  const auto eps = random_vec(shape.latent, rng);
  const auto cond = random_cond(rng);
  double want = 0;
  for (int i = 0; i < shape.latent; ++i) {
    want += (eps[i] - x0[i]) * (eps[i] - x0[i]);
  }
  CHECK(kernels::flow_error(zeros, x0, cond, 0.37, eps) == doctest::Approx(want).epsilon(1e-12));

  // A parameterization whose velocity equals the regression target exactly:
  // zero input weights make the output the bias, set to eps - x0.
  ModelParams oracle = ModelParams::zeros(shape);
  const std::vector<double> x0z(shape.latent, 0.0);
  std::vector<double> eps_const(shape.latent);
  Rng estream = rng.child(5);
  for (double& v : eps_const) v = estream.gaussian();
  for (int i = 0; i < shape.latent; ++i) {
    oracle.data[oracle.off_b_out() + i] = static_cast<float>(eps_const[i]);
  }
  std::vector<double> eps_exact(shape.latent);
  for (int i = 0; i < shape.latent; ++i) {
    eps_exact[i] = static_cast<double>(static_cast<float>(eps_const[i]));
  }
  CHECK(kernels::flow_error(oracle, x0z, cond, 0.61, eps_exact) <= 1e-12);
}

TEST_CASE("euler reverse sampling is exact on constant fields") {
  const ModelShape shape = tiny_shape();
  Rng rng(13);
  flow::Activations acts;
  for (int trial = 0; trial < 20; ++trial) {
    Rng stream = rng.child(trial);
    const auto x0 = random_vec(shape.latent, stream);
    const auto x1 = random_vec(shape.latent, stream);
    const auto cond = random_cond(stream);

    // Constant field v = x1 - x0 via the output bias.
    ModelParams p = ModelParams::zeros(shape);
    for (int i = 0; i < shape.latent; ++i) {
      p.data[p.off_b_out() + i] = static_cast<float>(x1[i] - x0[i]);
    }
    std::vector<double> field(shape.latent);
    for (int i = 0; i < shape.latent; ++i) {
      field[i] = static_cast<double>(p.data[p.off_b_out() + i]);
    }

    const int total = 50;
    const int s = 1 + static_cast<int>(stream.next_u64() % total);
    const double t = static_cast<double>(s) / total;
    std::vector<double> xs(shape.latent);
    for (int i = 0; i < shape.latent; ++i) xs[i] = x0[i] + t * field[i];

    const auto chain = flow::reverse_sample(p, xs, s, total, cond, acts);
    CHECK(chain.finite);
    CHECK(static_cast<int>(chain.latents.size()) == (s + 1) * shape.latent);
    const auto end = chain.endpoint();
    for (int i = 0; i < shape.latent; ++i) {
      CHECK(std::abs(end[i] - x0[i]) <= 1e-12);
    }
  }
}

TEST_CASE("one euler step arithmetic") {
  ModelShape shape = tiny_shape();
  shape.latent = 2;
  ModelParams p = ModelParams::zeros(shape);
  p.data[p.off_b_out() + 0] = 2.0f;
  p.data[p.off_b_out() + 1] = 0.0f;
  const std::vector<double> start{1, 1};
  const std::vector<double> cond(dyn::kConditionDim, 0.0);
  flow::Activations acts;
  const auto chain = flow::reverse_sample(p, start, 1, 2, cond, acts);
  CHECK(chain.endpoint()[0] == 0.0);
  CHECK(chain.endpoint()[1] == 1.0);

  CHECK_THROWS(flow::reverse_sample(p, start, 0, 2, cond, acts));
  CHECK_THROWS(flow::reverse_sample(p, start, 3, 2, cond, acts));
}

TEST_CASE("checkpoint serialization round trips bit-exactly") {
  const ModelParams p = ModelParams::random_init(tiny_shape(), Rng(14).child(1));
  const flow::CheckpointMeta meta{4, 4, 50};
  const std::string bytes = flow::serialize_checkpoint(p, meta);
  const auto [back, meta_back] = flow::parse_checkpoint(bytes);
  CHECK(back.data == p.data);
  CHECK(back.shape == p.shape);
  CHECK(meta_back == meta);
  CHECK(flow::serialize_checkpoint(back, meta_back) == bytes);
  CHECK(flow::checkpoint_hash(p, meta) == flow::checkpoint_hash(back, meta_back));

  CHECK_THROWS(flow::parse_checkpoint("WRONGMAGIC"));
  std::string truncated = bytes.substr(0, bytes.size() - 2);
  CHECK_THROWS(flow::parse_checkpoint(truncated));
}

TEST_CASE("adamw with zero learning rate leaves parameters untouched") {
  ModelParams p = ModelParams::random_init(tiny_shape(), Rng(15).child(1));
  const std::vector<float> before = p.data;
  flow::AdamW adam(p.shape.param_count(), 0.0, 0.1);
  std::vector<double> grad(p.shape.param_count(), 1.0);
  for (int i = 0; i < 5; ++i) adam.step(p.data, grad);
  CHECK(p.data == before);
}

TEST_CASE("tiny training run is seed-deterministic") {
  dyn::DatasetSpec spec;
  spec.count_per_kind = {10, 10, 10, 10};
  spec.frames = 4;
  spec.dt = 0.25;
  spec.heldout_fraction = 0.1;
  spec.seed = 5;
  spec.worlds = {dyn::World{dyn::WorldKind::ConstantVelocity, {}},
                 [] { dyn::World w{dyn::WorldKind::Projectile, {}}; w.params.gravity = 1; return w; }(),
                 [] { dyn::World w{dyn::WorldKind::BouncingBall, {}}; w.params.gravity = 2; w.params.restitution = 0.85; w.params.box_w = 4; w.params.box_h = 4; return w; }(),
                 [] { dyn::World w{dyn::WorldKind::SpringOscillator, {}}; w.params.spring_k = 4; w.params.spring_zeta = 0.1; return w; }()};
  const auto ds = dyn::make_dataset(spec);

  flow::TrainOptions opt;
  opt.steps = 30;
  opt.batch = 8;
  opt.lr = 1e-3;
  opt.eval_every = 10;
  opt.seed = 77;
  opt.jobs = 2;

  std::vector<flow::CurveRow> curve_a, curve_b;
  const auto pa = flow::train_base(ds, tiny_shape(), opt, &curve_a);
  const auto pb = flow::train_base(ds, tiny_shape(), opt, &curve_b);
  CHECK(pa.data == pb.data);
  REQUIRE(curve_a.size() == curve_b.size());
  for (size_t i = 0; i < curve_a.size(); ++i) {
    CHECK(curve_a[i].heldout_loss == curve_b[i].heldout_loss);
  }
}
