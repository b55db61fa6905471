#include "rdpo/kernels.hpp"

#include <cmath>
#include <stdexcept>

#include "rdpo/parallel.hpp"

namespace rdpo::kernels {

double stable_softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

namespace {

void size_workspace(Workspace& ws, const flow::ModelShape& shape, int64_t batch,
                    int64_t acts_per_elem, int64_t vecs_per_elem, bool grads) {
  const int64_t acts = batch * acts_per_elem;
  if (static_cast<int64_t>(ws.acts.size()) < acts) ws.acts.resize(acts);
  if (static_cast<int64_t>(ws.scratch.size()) < batch) ws.scratch.resize(batch);
  ws.elem_loss.assign(batch, 0.0);
  ws.elem_aux.assign(batch, 0.0);
  ws.vecs.assign(batch * vecs_per_elem * shape.latent, 0.0);
  if (grads) ws.elem_grad.assign(batch * shape.param_count(), 0.0);
}

// Per-element flow term: noise x0 at a drawn t, evaluate the velocity, and
// (optionally) backpropagate the squared regression error.
double flow_element(const flow::ModelParams& params, const Sample& s, Rng stream,
                    flow::Activations& acts, flow::Activations& scratch,
                    std::span<double> grad, double inv_batch, double* xt,
                    double* target) {
  const int latent = params.shape.latent;
  const double t = stream.uniform01();
  for (int i = 0; i < latent; ++i) {
    const double eps = stream.gaussian();
    xt[i] = (1.0 - t) * s.x0[i] + t * eps;
    target[i] = eps - s.x0[i];
  }
  velocity(params, std::span<const double>(xt, latent), t, s.cond, acts);
  double err = 0.0;
  for (int i = 0; i < latent; ++i) {
    const double d = acts.out[i] - target[i];
    err += d * d;
  }
  if (!grad.empty()) {
    // d(err)/d(out) = 2 (v - target); scale by 1/batch for the mean.
    for (int i = 0; i < latent; ++i) {
      target[i] = 2.0 * (acts.out[i] - target[i]) * inv_batch;
    }
    velocity_vjp(params, acts, std::span<const double>(target, latent), grad, {},
                 scratch);
  }
  return err;
}

double reduce_mean_losses(const Workspace& ws, int64_t batch) {
  double total = 0.0;
  for (int64_t i = 0; i < batch; ++i) total += ws.elem_loss[i];
  return total / static_cast<double>(batch);
}

void reduce_grads(const Workspace& ws, int64_t batch, int64_t n,
                  std::span<double> grad_out) {
  std::fill(grad_out.begin(), grad_out.end(), 0.0);
  for (int64_t i = 0; i < batch; ++i) {
    const double* g = ws.elem_grad.data() + i * n;
    for (int64_t j = 0; j < n; ++j) grad_out[j] += g[j];
  }
}

}  // namespace

double flow_loss_grad(const flow::ModelParams& params, std::span<const Sample> batch,
                      const Rng& draw_base, int jobs, Workspace& ws,
                      std::span<double> grad_out) {
  const int64_t b = static_cast<int64_t>(batch.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  const int64_t n = params.shape.param_count();
  const int latent = params.shape.latent;
  size_workspace(ws, params.shape, b, 1, 2, true);

  parallel_for(b, jobs, [&](int64_t i) {
    double* xt = ws.vecs.data() + i * 2 * latent;
    ws.elem_loss[i] = flow_element(
        params, batch[i], draw_base.child(i), ws.acts[i], ws.scratch[i],
        std::span<double>(ws.elem_grad.data() + i * n, n), 1.0 / b, xt, xt + latent);
  });

  reduce_grads(ws, b, n, grad_out);
  return reduce_mean_losses(ws, b);
}

double flow_loss_grad_serial(const flow::ModelParams& params,
                             std::span<const Sample> batch, const Rng& draw_base,
                             Workspace& ws, std::span<double> grad_out) {
  const int64_t b = static_cast<int64_t>(batch.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  const int64_t n = params.shape.param_count();
  const int latent = params.shape.latent;
  size_workspace(ws, params.shape, 1, 1, 2, false);
  std::fill(grad_out.begin(), grad_out.end(), 0.0);

  std::vector<double> elem(n);
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    std::fill(elem.begin(), elem.end(), 0.0);
    double* xt = ws.vecs.data();
    total += flow_element(params, batch[i], draw_base.child(i), ws.acts[0],
                          ws.scratch[0], elem, 1.0 / b, xt, xt + latent);
    for (int64_t j = 0; j < n; ++j) grad_out[j] += elem[j];
  }
  return total / static_cast<double>(b);
}

double flow_loss_eval(const flow::ModelParams& params, std::span<const Sample> batch,
                      const Rng& draw_base, int jobs, Workspace& ws) {
  const int64_t b = static_cast<int64_t>(batch.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  const int latent = params.shape.latent;
  size_workspace(ws, params.shape, b, 1, 2, false);

  parallel_for(b, jobs, [&](int64_t i) {
    double* xt = ws.vecs.data() + i * 2 * latent;
    ws.elem_loss[i] = flow_element(params, batch[i], draw_base.child(i), ws.acts[i],
                                   ws.scratch[i], {}, 0.0, xt, xt + latent);
  });
  return reduce_mean_losses(ws, b);
}

namespace {

// Squared flow error of one side of a pair under fixed params.
double side_error(const flow::ModelParams& params, std::span<const double> x0,
                  std::span<const double> cond, double t, const double* eps,
                  double* xt, flow::Activations& acts) {
  const int latent = params.shape.latent;
  for (int i = 0; i < latent; ++i) xt[i] = (1.0 - t) * x0[i] + t * eps[i];
  velocity(params, std::span<const double>(xt, latent), t, cond, acts);
  double err = 0.0;
  for (int i = 0; i < latent; ++i) {
    const double d = acts.out[i] - (eps[i] - x0[i]);
    err += d * d;
  }
  return err;
}

}  // namespace

double flow_error(const flow::ModelParams& params, std::span<const double> x0,
                  std::span<const double> cond, double t,
                  std::span<const double> eps) {
  if (eps.size() != x0.size()) throw std::invalid_argument("noise length mismatch");
  flow::Activations acts;
  std::vector<double> xt(x0.size());
  return side_error(params, x0, cond, t, eps.data(), xt.data(), acts);
}

namespace {

struct PairEval {
  double loss = 0.0;
  double margin = 0.0;
};

// One pair: shared t, independent noise per side, margin through theta and a
// frozen reference. Gradients (when requested) flow through theta only.
PairEval dpo_element(const flow::ModelParams& theta, const flow::ModelParams& theta_ref,
                     const PairSample& pair, double beta, Rng stream,
                     flow::Activations& acts_w, flow::Activations& acts_l,
                     flow::Activations& scratch, std::span<double> grad,
                     double inv_batch, double* buf) {
  const int latent = theta.shape.latent;
  double* eps_w = buf;
  double* eps_l = buf + latent;
  double* xw = buf + 2 * latent;
  double* xl = buf + 3 * latent;
  double* g_out = buf + 4 * latent;

  const double t = stream.uniform01();
  for (int i = 0; i < latent; ++i) eps_w[i] = stream.gaussian();
  for (int i = 0; i < latent; ++i) eps_l[i] = stream.gaussian();

  const double e_w = side_error(theta, pair.winner, pair.cond, t, eps_w, xw, acts_w);
  const double e_l = side_error(theta, pair.loser, pair.cond, t, eps_l, xl, acts_l);
  const double e_w_ref =
      side_error(theta_ref, pair.winner, pair.cond, t, eps_w, g_out, scratch);
  const double e_l_ref =
      side_error(theta_ref, pair.loser, pair.cond, t, eps_l, g_out, scratch);

  const double margin = -0.5 * beta * ((e_w - e_w_ref) - (e_l - e_l_ref));
  PairEval ev;
  ev.margin = margin;
  ev.loss = stable_softplus(-margin);

  if (!grad.empty()) {
    // d(-log sigmoid(m))/dm = -sigmoid(-m); winner term enters m with -beta/2.
    const double dm = sigmoid(-margin);
    const double cw = dm * 0.5 * beta * inv_batch;
    for (int i = 0; i < latent; ++i) {
      g_out[i] = cw * 2.0 * (acts_w.out[i] - (eps_w[i] - pair.winner[i]));
    }
    velocity_vjp(theta, acts_w, std::span<const double>(g_out, latent), grad, {},
                 scratch);
    const double cl = -cw;
    for (int i = 0; i < latent; ++i) {
      g_out[i] = cl * 2.0 * (acts_l.out[i] - (eps_l[i] - pair.loser[i]));
    }
    velocity_vjp(theta, acts_l, std::span<const double>(g_out, latent), grad, {},
                 scratch);
  }
  return ev;
}

}  // namespace

double dpo_loss_grad(const flow::ModelParams& theta, const flow::ModelParams& theta_ref,
                     std::span<const PairSample> batch, double beta,
                     const Rng& draw_base, int jobs, Workspace& ws,
                     std::span<double> grad_out, double* mean_margin) {
  const int64_t b = static_cast<int64_t>(batch.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  if (!(beta > 0)) throw std::invalid_argument("beta must be > 0");
  if (theta.shape != theta_ref.shape) {
    throw std::invalid_argument("theta and reference shapes differ");
  }
  const int64_t n = theta.shape.param_count();
  const int latent = theta.shape.latent;
  size_workspace(ws, theta.shape, b, 2, 5, true);

  parallel_for(b, jobs, [&](int64_t i) {
    double* buf = ws.vecs.data() + i * 5 * latent;
    const PairEval ev = dpo_element(
        theta, theta_ref, batch[i], beta, draw_base.child(i), ws.acts[2 * i],
        ws.acts[2 * i + 1], ws.scratch[i],
        std::span<double>(ws.elem_grad.data() + i * n, n), 1.0 / b, buf);
    ws.elem_loss[i] = ev.loss;
    ws.elem_aux[i] = ev.margin;
  });

  reduce_grads(ws, b, n, grad_out);
  if (mean_margin) {
    double m = 0.0;
    for (int64_t i = 0; i < b; ++i) m += ws.elem_aux[i];
    *mean_margin = m / static_cast<double>(b);
  }
  return reduce_mean_losses(ws, b);
}

double dpo_loss_grad_serial(const flow::ModelParams& theta,
                            const flow::ModelParams& theta_ref,
                            std::span<const PairSample> batch, double beta,
                            const Rng& draw_base, Workspace& ws,
                            std::span<double> grad_out, double* mean_margin) {
  const int64_t b = static_cast<int64_t>(batch.size());
  if (b == 0) throw std::invalid_argument("empty batch");
  const int64_t n = theta.shape.param_count();
  const int latent = theta.shape.latent;
  size_workspace(ws, theta.shape, 2, 1, 5, false);
  std::fill(grad_out.begin(), grad_out.end(), 0.0);

  std::vector<double> elem(n);
  double total = 0.0, margin_sum = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    std::fill(elem.begin(), elem.end(), 0.0);
    const PairEval ev =
        dpo_element(theta, theta_ref, batch[i], beta, draw_base.child(i), ws.acts[0],
                    ws.acts[1], ws.scratch[0], elem, 1.0 / b, ws.vecs.data());
    total += ev.loss;
    margin_sum += ev.margin;
    for (int64_t j = 0; j < n; ++j) grad_out[j] += elem[j];
  }
  if (mean_margin) *mean_margin = margin_sum / static_cast<double>(b);
  return total / static_cast<double>(b);
}

double pair_margin(const flow::ModelParams& theta, const flow::ModelParams& theta_ref,
                   const PairSample& pair, double beta, Rng stream, int n_draws) {
  if (n_draws < 1) throw std::invalid_argument("need at least one draw");
  const int latent = theta.shape.latent;
  flow::Activations a, b_, scratch;
  std::vector<double> buf(5 * latent);
  double total = 0.0;
  for (int d = 0; d < n_draws; ++d) {
    total += dpo_element(theta, theta_ref, pair, beta, stream.child(d), a, b_,
                         scratch, {}, 0.0, buf.data())
                 .margin;
  }
  return total / n_draws;
}

void reverse_chains(const flow::ModelParams& params,
                    std::span<const std::span<const double>> starts,
                    std::span<const std::span<const double>> conds, int start_step,
                    int total_steps, int jobs, std::vector<flow::SampleChain>& out) {
  if (starts.size() != conds.size()) {
    throw std::invalid_argument("starts and conditions differ in length");
  }
  const int64_t n = static_cast<int64_t>(starts.size());
  out.resize(n);
  parallel_for(n, jobs, [&](int64_t i) {
    flow::Activations acts;
    out[i] = flow::reverse_sample(params, starts[i], start_step, total_steps,
                                  conds[i], acts);
  });
}

}  // namespace rdpo::kernels
