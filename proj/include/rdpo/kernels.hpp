#pragma once

#include <span>
#include <vector>

#include "rdpo/flow_model.hpp"
#include "rdpo/rng.hpp"

namespace rdpo::kernels {

// Data-parallel batch kernels. Each element's work goes to its own output
// slot and its own draw stream (child of the caller's base stream keyed by
// element index), and reductions run serially in element order; results are
// therefore byte-identical for every jobs value. The *_serial variants are
// plain-loop reference implementations kept for tests and benchmarks.

struct Sample {
  std::span<const double> x0;
  std::span<const double> cond;
};

struct PairSample {
  std::span<const double> winner;
  std::span<const double> loser;
  std::span<const double> cond;
};

struct Workspace {
  std::vector<flow::Activations> acts;
  std::vector<flow::Activations> scratch;
  std::vector<double> elem_grad;   // batch * param_count
  std::vector<double> elem_loss;   // batch
  std::vector<double> elem_aux;    // batch (margins etc.)
  std::vector<double> vecs;        // batch * per-element vector scratch
};

// Squared flow error for one explicit draw:
// || (eps - x0) - v((1-t) x0 + t eps, t, c) ||^2. The batch losses below are
// means of this quantity over drawn (t, eps).
double flow_error(const flow::ModelParams& params, std::span<const double> x0,
                  std::span<const double> cond, double t,
                  std::span<const double> eps);

// Flow-matching loss: per element draw t ~ U(0,1), eps ~ N(0,I), noise x0 and
// regress the velocity onto (eps - x0). Returns the batch mean; grad_out is
// overwritten with the exact gradient.
double flow_loss_grad(const flow::ModelParams& params, std::span<const Sample> batch,
                      const Rng& draw_base, int jobs, Workspace& ws,
                      std::span<double> grad_out);
double flow_loss_grad_serial(const flow::ModelParams& params,
                             std::span<const Sample> batch, const Rng& draw_base,
                             Workspace& ws, std::span<double> grad_out);

// Loss only (no gradient); used for held-out evaluation with caller-fixed
// draw streams.
double flow_loss_eval(const flow::ModelParams& params, std::span<const Sample> batch,
                      const Rng& draw_base, int jobs, Workspace& ws);

// Preference loss: per pair one shared t, independent noise per side; the
// margin is -(beta/2) of the reference-relative flow-error difference and the
// loss is -log sigmoid(margin). Gradients flow through theta only.
double dpo_loss_grad(const flow::ModelParams& theta, const flow::ModelParams& theta_ref,
                     std::span<const PairSample> batch, double beta,
                     const Rng& draw_base, int jobs, Workspace& ws,
                     std::span<double> grad_out, double* mean_margin = nullptr);
double dpo_loss_grad_serial(const flow::ModelParams& theta,
                            const flow::ModelParams& theta_ref,
                            std::span<const PairSample> batch, double beta,
                            const Rng& draw_base, Workspace& ws,
                            std::span<double> grad_out, double* mean_margin = nullptr);

// Single-pair margin averaged over n_draws (t, eps) draws; no gradients.
double pair_margin(const flow::ModelParams& theta, const flow::ModelParams& theta_ref,
                   const PairSample& pair, double beta, Rng stream, int n_draws);

// Reverse-samples one chain per start latent, in parallel across chains.
void reverse_chains(const flow::ModelParams& params,
                    std::span<const std::span<const double>> starts,
                    std::span<const std::span<const double>> conds, int start_step,
                    int total_steps, int jobs, std::vector<flow::SampleChain>& out);

double stable_softplus(double x);  // log(1 + e^x)
double sigmoid(double x);

}  // namespace rdpo::kernels
