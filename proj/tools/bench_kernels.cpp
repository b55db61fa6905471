// Serial vs OpenMP timings for the batch kernels, with a bitwise equality
// check between the two paths.

#include <cstdio>
#include <cstring>
#include <vector>

#include <omp.h>

#include "rdpo/kernels.hpp"

using namespace rdpo;

namespace {

struct Fixture {
  flow::ModelParams params;
  flow::ModelParams ref;
  std::vector<double> latents;
  std::vector<double> conds;
  int latent;
  int n;

  Fixture(int n_, const flow::ModelShape& shape) : latent(shape.latent), n(n_) {
    params = flow::ModelParams::random_init(shape, Rng(11).child(1));
    ref = flow::ModelParams::random_init(shape, Rng(11).child(2));
    Rng data(3);
    latents.resize(static_cast<size_t>(n) * latent);
    for (double& v : latents) v = data.gaussian();
    conds.resize(static_cast<size_t>(n) * shape.cond);
    for (double& v : conds) v = data.uniform01();
  }

  kernels::Sample sample(int i) const {
    return kernels::Sample{
        std::span<const double>(latents).subspan(static_cast<size_t>(i) * latent, latent),
        std::span<const double>(conds).subspan(static_cast<size_t>(i) * params.shape.cond,
                                               params.shape.cond)};
  }
  kernels::PairSample pair(int i) const {
    const int j = (i + 1) % n;
    return kernels::PairSample{
        std::span<const double>(latents).subspan(static_cast<size_t>(i) * latent, latent),
        std::span<const double>(latents).subspan(static_cast<size_t>(j) * latent, latent),
        std::span<const double>(conds).subspan(static_cast<size_t>(i) * params.shape.cond,
                                               params.shape.cond)};
  }
};

double time_of(int reps, auto&& fn) {
  fn();  // warm up
  const double t0 = omp_get_wtime();
  for (int r = 0; r < reps; ++r) fn();
  return (omp_get_wtime() - t0) / reps * 1e3;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main() {
  const int jobs = omp_get_max_threads();
  std::printf("threads=%d\n", jobs);
  std::printf("%-22s %6s %12s %12s %9s %6s\n", "kernel", "batch", "serial_ms",
              "parallel_ms", "speedup", "equal");

  flow::ModelShape shape;
  for (int batch : {32, 128}) {
    Fixture fx(batch, shape);
    std::vector<kernels::Sample> samples;
    std::vector<kernels::PairSample> pairs_;
    for (int i = 0; i < batch; ++i) {
      samples.push_back(fx.sample(i));
      pairs_.push_back(fx.pair(i));
    }
    const Rng draws = Rng(5).child(9);
    kernels::Workspace ws;
    std::vector<double> g_serial(shape.param_count()), g_par(shape.param_count());

    {
      const double ts = time_of(3, [&] {
        kernels::flow_loss_grad_serial(fx.params, samples, draws, ws, g_serial);
      });
      const double tp = time_of(3, [&] {
        kernels::flow_loss_grad(fx.params, samples, draws, jobs, ws, g_par);
      });
      std::printf("%-22s %6d %12.3f %12.3f %8.2fx %6s\n", "flow_loss_grad", batch, ts,
                  tp, ts / tp, same_bits(g_serial, g_par) ? "yes" : "NO");
    }
    {
      const double ts = time_of(3, [&] {
        kernels::dpo_loss_grad_serial(fx.params, fx.ref, pairs_, 1.0, draws, ws, g_serial);
      });
      const double tp = time_of(3, [&] {
        kernels::dpo_loss_grad(fx.params, fx.ref, pairs_, 1.0, draws, jobs, ws, g_par);
      });
      std::printf("%-22s %6d %12.3f %12.3f %8.2fx %6s\n", "dpo_loss_grad", batch, ts, tp,
                  ts / tp, same_bits(g_serial, g_par) ? "yes" : "NO");
    }
    {
      std::vector<std::span<const double>> starts, conds;
      for (int i = 0; i < batch; ++i) {
        starts.push_back(fx.sample(i).x0);
        conds.push_back(fx.sample(i).cond);
      }
      std::vector<flow::SampleChain> chains_s, chains_p;
      const double ts = time_of(3, [&] {
        kernels::reverse_chains(fx.params, starts, conds, 50, 50, 1, chains_s);
      });
      const double tp = time_of(3, [&] {
        kernels::reverse_chains(fx.params, starts, conds, 50, 50, jobs, chains_p);
      });
      bool equal = chains_s.size() == chains_p.size();
      for (size_t i = 0; equal && i < chains_s.size(); ++i) {
        equal = same_bits(chains_s[i].latents, chains_p[i].latents);
      }
      std::printf("%-22s %6d %12.3f %12.3f %8.2fx %6s\n", "reverse_chains", batch, ts,
                  tp, ts / tp, equal ? "yes" : "NO");
    }
  }
  return 0;
}
