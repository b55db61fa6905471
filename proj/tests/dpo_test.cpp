#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdpo/dpo.hpp"

using namespace rdpo;

namespace {

dyn::DatasetSpec small_spec(uint64_t seed) {
  dyn::DatasetSpec spec;
  spec.count_per_kind = {30, 30, 30, 30};
  spec.frames = 8;
  spec.dt = 0.25;
  spec.heldout_fraction = 0.1;
  spec.seed = seed;
  dyn::World cv{dyn::WorldKind::ConstantVelocity, {}};
  dyn::World proj{dyn::WorldKind::Projectile, {}};
  proj.params.gravity = 1;
  dyn::World ball{dyn::WorldKind::BouncingBall, {}};
  ball.params.gravity = 2;
  ball.params.restitution = 0.85;
  ball.params.box_w = 4;
  ball.params.box_h = 4;
  dyn::World spring{dyn::WorldKind::SpringOscillator, {}};
  spring.params.spring_k = 4;
  spring.params.spring_zeta = 0.1;
  spec.worlds = {cv, proj, ball, spring};
  return spec;
}

flow::ModelShape small_shape(int frames) {
  flow::ModelShape s;
  s.latent = frames * dyn::kStateDim;
  s.emb = 4;
  s.width = 16;
  s.layers = 2;
  return s;
}

pairs::PairDataset make_pairs(uint64_t seed, int count, int s = 20) {
  const auto ds = dyn::make_dataset(small_spec(seed));
  const auto params = flow::ModelParams::random_init(small_shape(8), Rng(seed).child(1));
  return pairs::build_pair_dataset(params, 1, ds, {s}, 50, 4, count, seed, 2);
}

}  // namespace

TEST_CASE("loss at theta == theta_ref is ln 2 for any batch and beta") {
  const auto pd = make_pairs(31, 24);
  const auto views = dpo::pair_views(pd);
  const auto theta = flow::ModelParams::random_init(small_shape(8), Rng(32).child(1));
  kernels::Workspace ws;
  std::vector<double> grad(theta.shape.param_count());

  for (int trial = 0; trial < 5; ++trial) {
    const double beta = std::pow(10.0, trial - 2);  // 0.01 .. 100
    const double loss = dpo::flow_dpo_loss_and_grad(theta, theta, views, beta,
                                                    Rng(trial).child(3), 2, ws, grad);
    CHECK(std::abs(loss - std::log(2.0)) <= 1e-9);
  }
}

TEST_CASE("loss approaches ln 2 as beta approaches zero") {
  const auto pd = make_pairs(33, 16);
  const auto views = dpo::pair_views(pd);
  const auto theta = flow::ModelParams::random_init(small_shape(8), Rng(34).child(1));
  const auto ref = flow::ModelParams::random_init(small_shape(8), Rng(34).child(2));
  kernels::Workspace ws;
  std::vector<double> grad(theta.shape.param_count());
  const double loss = dpo::flow_dpo_loss_and_grad(theta, ref, views, 1e-10,
                                                  Rng(9).child(1), 2, ws, grad);
  CHECK(std::abs(loss - std::log(2.0)) <= 1e-6);
}

TEST_CASE("swapping winner and loser negates the margin under shared draws") {
  const auto pd = make_pairs(35, 8);
  const auto theta = flow::ModelParams::random_init(small_shape(8), Rng(36).child(1));
  const auto ref = flow::ModelParams::random_init(small_shape(8), Rng(36).child(2));

  for (size_t i = 0; i < pd.items.size(); ++i) {
    const auto& p = pd.items[i];
    const kernels::PairSample fwd{p.preferred, p.model, p.cond};
    const kernels::PairSample swapped{p.model, p.preferred, p.cond};
    const Rng stream = Rng(40).child(i);
    const double m = kernels::pair_margin(theta, ref, fwd, 1.0, stream, 4);
    const double ms = kernels::pair_margin(theta, ref, swapped, 1.0, stream, 4);
    CHECK(m == -ms);
  }
}

TEST_CASE("implicit reward accuracy is exactly one half at the reference") {
  const auto pd = make_pairs(37, 32);
  const auto theta = flow::ModelParams::random_init(small_shape(8), Rng(38).child(1));
  CHECK(dpo::implicit_reward_accuracy(theta, theta, pd, 1.0, 4, 99, 2) == 0.5);
}

TEST_CASE("implicit reward accuracy ignores pair order") {
  const auto pd = make_pairs(39, 20);
  const auto theta = flow::ModelParams::random_init(small_shape(8), Rng(40).child(1));
  const auto ref = flow::ModelParams::random_init(small_shape(8), Rng(40).child(2));
  const double acc = dpo::implicit_reward_accuracy(theta, ref, pd, 1.0, 4, 7, 2);

  pairs::PairDataset shuffled = pd;
  std::reverse(shuffled.items.begin(), shuffled.items.end());
  std::swap(shuffled.items[0], shuffled.items[10]);
  CHECK(dpo::implicit_reward_accuracy(theta, ref, shuffled, 1.0, 4, 7, 2) == acc);
}

TEST_CASE("preference training separates a small fixed pair set") {
  const auto pd = make_pairs(41, 10, 10);
  const auto views = dpo::pair_views(pd);
  flow::ModelParams theta = flow::ModelParams::random_init(small_shape(8), Rng(42).child(1));
  const flow::ModelParams ref = theta;

  kernels::Workspace ws;
  std::vector<double> grad(theta.shape.param_count());
  flow::AdamW adam(theta.shape.param_count(), 3e-3, 0.0);
  for (int step = 0; step < 1500; ++step) {
    dpo::flow_dpo_loss_and_grad(theta, ref, views, 1.0, Rng(50).child(step), 2, ws, grad);
    adam.step(theta.data, grad);
  }
  CHECK(dpo::implicit_reward_accuracy(theta, ref, pd, 1.0, 16, 123, 2) == 1.0);
}

TEST_CASE("schedule parsing validates stages") {
  const auto sched = dpo::parse_schedule("42,40,mix", 50);
  REQUIRE(sched.size() == 3);
  CHECK(sched[0].s == 42);
  CHECK(!sched[0].mix);
  CHECK(sched[1].s == 40);
  CHECK(sched[2].mix);

  CHECK_THROWS(dpo::parse_schedule("", 50));
  CHECK_THROWS(dpo::parse_schedule("0", 50));
  CHECK_THROWS(dpo::parse_schedule("51", 50));
  CHECK_THROWS(dpo::parse_schedule("mix", 50));       // nothing to mix
  CHECK_THROWS(dpo::parse_schedule("42,mix", 50));    // needs two earlier stages
  CHECK_THROWS(dpo::parse_schedule("42,x", 50));
}

TEST_CASE("sft with zero learning rate returns the start bit-exactly") {
  const auto ds = dyn::make_dataset(small_spec(43));
  const auto start = flow::ModelParams::random_init(small_shape(8), Rng(44).child(1));
  dpo::SftOptions opt;
  opt.steps = 20;
  opt.batch = 8;
  opt.lr = 0.0;
  opt.seed = 1;
  opt.jobs = 2;
  const auto out = dpo::sft_train(start, ds, opt, nullptr);
  CHECK(out.data == start.data);
}

TEST_CASE("sft reduces the held-out flow loss on a short run") {
  const auto ds = dyn::make_dataset(small_spec(45));
  const auto start = flow::ModelParams::random_init(small_shape(8), Rng(46).child(1));
  dpo::SftOptions opt;
  opt.steps = 300;
  opt.batch = 16;
  opt.lr = 3e-3;
  opt.eval_every = 50;
  opt.seed = 2;
  opt.jobs = 2;
  std::vector<flow::CurveRow> curve;
  dpo::sft_train(start, ds, opt, &curve);
  REQUIRE(curve.size() >= 6);

  // Windowed median of the held-out loss is non-increasing end to end.
  auto window_median = [&](size_t from) {
    std::array<double, 3> w{curve[from].heldout_loss, curve[from + 1].heldout_loss,
                            curve[from + 2].heldout_loss};
    std::sort(w.begin(), w.end());
    return w[1];
  };
  CHECK(window_median(curve.size() - 3) < window_median(0));
}

TEST_CASE("progressive training with zero learning rate is the identity") {
  const auto ds = dyn::make_dataset(small_spec(47));
  const auto start = flow::ModelParams::random_init(small_shape(8), Rng(48).child(1));
  dpo::ProgressiveOptions opt;
  opt.lr = 0.0;
  opt.steps_per_iter = 6;
  opt.batch = 4;
  opt.schedule = dpo::parse_schedule("10", 50);
  opt.pair_count = 12;
  opt.k = 2;
  opt.total_steps = 50;
  opt.reward_every = 1000000;
  opt.residual_every = 1000000;
  opt.seed = 3;
  opt.jobs = 2;
  const auto out = dpo::progressive_train(start, ds, opt, nullptr);
  CHECK(out.data == start.data);
}

TEST_CASE("progressive training is bit-reproducible across the pair boundary") {
  const auto ds = dyn::make_dataset(small_spec(49));
  const auto start = flow::ModelParams::random_init(small_shape(8), Rng(50).child(1));
  dpo::ProgressiveOptions opt;
  opt.lr = 1e-3;
  opt.steps_per_iter = 10;
  opt.batch = 4;
  opt.schedule = dpo::parse_schedule("10,8,mix", 50);
  opt.pair_count = 16;
  opt.k = 2;
  opt.total_steps = 50;
  opt.reward_every = 5;
  opt.reward_pairs = 8;
  opt.reward_draws = 2;
  opt.residual_every = 5;
  opt.residual_conditions = 4;
  opt.seed = 4;

  struct Capture : dpo::ProgressiveSink {
    std::vector<std::string> pair_bytes;
    std::vector<std::vector<float>> ckpts;
    std::vector<std::string> rows;
    void on_pairs(int, const pairs::PairDataset& pd) override {
      pair_bytes.push_back(pairs::serialize_pairs(pd));
    }
    void on_checkpoint(int, const flow::ModelParams& p) override {
      ckpts.push_back(p.data);
    }
    void on_report(const dpo::ReportRow& row) override {
      rows.push_back(dpo::report_csv_row(row));
    }
  };

  Capture a, b;
  opt.jobs = 1;
  const auto out_a = dpo::progressive_train(start, ds, opt, &a);
  opt.jobs = 2;
  const auto out_b = dpo::progressive_train(start, ds, opt, &b);
  CHECK(out_a.data == out_b.data);
  CHECK(a.pair_bytes == b.pair_bytes);
  CHECK(a.ckpts == b.ckpts);
  CHECK(a.rows == b.rows);
  CHECK(a.ckpts.size() == 3);
  CHECK(a.pair_bytes.size() == 2);  // the mix stage generates nothing new
}

TEST_CASE("report rows carry the alternation and the header notes the reference policy") {
  dpo::ProgressiveOptions opt;
  const std::string header = dpo::report_csv_header(opt);
  CHECK(header.find("theta_ref=reset_per_iteration") != std::string::npos);
  CHECK(header.find("step,branch,loss,implicit_reward_accuracy,"
                    "heldout_physics_residual_median") != std::string::npos);

  dpo::ReportRow row;
  row.step = 3;
  row.branch = "sft";
  row.loss = 0.5;
  CHECK(dpo::report_csv_row(row) == "3,sft,0.5,,\n");
}
