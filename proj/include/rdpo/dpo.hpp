#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdpo/dynamics.hpp"
#include "rdpo/flow_model.hpp"
#include "rdpo/kernels.hpp"
#include "rdpo/pairgen.hpp"

namespace rdpo::dpo {

// Pair views plus a content hash; reward-accuracy draws are keyed by the hash
// so the statistic is invariant to pair order in the file.
struct PairView {
  std::span<const double> winner;
  std::span<const double> loser;
  std::span<const double> cond;
  uint64_t content_hash = 0;
};
std::vector<PairView> pair_views(const pairs::PairDataset& ds);

double flow_dpo_loss_and_grad(const flow::ModelParams& theta,
                              const flow::ModelParams& theta_ref,
                              std::span<const PairView> batch, double beta,
                              const Rng& draw_base, int jobs,
                              kernels::Workspace& ws, std::span<double> grad_out);

// Fraction of pairs whose draw-averaged margin is positive; exact zeros count
// half. At theta == theta_ref every margin is exactly zero.
double implicit_reward_accuracy(const flow::ModelParams& theta,
                                const flow::ModelParams& theta_ref,
                                const pairs::PairDataset& ds, double beta,
                                int n_draws, uint64_t seed, int jobs);

struct SftOptions {
  int steps = 2000;
  int batch = 32;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  int eval_every = 100;
  int heldout_items = 256;
  int heldout_draws = 2;
  uint64_t seed = 0;
  int jobs = 1;
};

flow::ModelParams sft_train(const flow::ModelParams& start, const dyn::Dataset& ds,
                            const SftOptions& opt, std::vector<flow::CurveRow>* curve);

// One curriculum stage: either fresh pairs at a fixed reverse step, or an
// even mixture of all previous stages' pair datasets.
struct StageSpec {
  bool mix = false;
  int s = 0;
};
std::vector<StageSpec> parse_schedule(const std::string& text, int total_steps);

struct ReportRow {
  int iter = 0;
  int step = 0;
  const char* branch = "dpo";  // "dpo" or "sft"
  double loss = 0.0;
  std::optional<double> reward_accuracy;
  std::optional<double> heldout_residual_median;
};

struct ProgressiveOptions {
  double beta = 1.0;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  int steps_per_iter = 2000;
  int batch = 32;
  bool sft_interleave = true;
  std::vector<StageSpec> schedule;
  int pair_count = 2000;
  int k = 8;
  int total_steps = 50;
  int reward_every = 100;
  int reward_pairs = 128;
  int reward_draws = 8;
  int residual_every = 500;
  int residual_conditions = 64;
  uint64_t seed = 0;
  int jobs = 1;
};

// Persistence hooks; the trainer itself never touches the filesystem.
struct ProgressiveSink {
  virtual ~ProgressiveSink() = default;
  virtual void on_pairs(int iter, const pairs::PairDataset&) {}
  virtual void on_checkpoint(int iter, const flow::ModelParams&) {}
  virtual void on_report(const ReportRow&) {}
};

// Iterative preference training: per stage the reference (and the optimizer
// state) resets to the current model, the stage's pair set is generated by
// that model, and steps alternate preference/flow-matching updates when the
// interleave is on (preference first).
flow::ModelParams progressive_train(const flow::ModelParams& start,
                                    const dyn::Dataset& real,
                                    const ProgressiveOptions& opt,
                                    ProgressiveSink* sink);

std::string report_csv_header(const ProgressiveOptions& opt);
std::string report_csv_row(const ReportRow& row);

}  // namespace rdpo::dpo
