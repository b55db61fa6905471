#include "rdpo/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rdpo/bytes.hpp"
#include "rdpo/parallel.hpp"

namespace rdpo::dpo {

std::vector<PairView> pair_views(const pairs::PairDataset& ds) {
  std::vector<PairView> views;
  views.reserve(ds.items.size());
  for (const pairs::PreferencePair& p : ds.items) {
    PairView v;
    v.winner = p.preferred;
    v.loser = p.model;
    v.cond = p.cond;
    v.content_hash = io::fnv1a64(pairs::serialize_pair_record(p));
    views.push_back(v);
  }
  return views;
}

namespace {

std::vector<kernels::PairSample> to_samples(std::span<const PairView> views) {
  std::vector<kernels::PairSample> out(views.size());
  for (size_t i = 0; i < views.size(); ++i) {
    out[i] = kernels::PairSample{views[i].winner, views[i].loser, views[i].cond};
  }
  return out;
}

}  // namespace

double flow_dpo_loss_and_grad(const flow::ModelParams& theta,
                              const flow::ModelParams& theta_ref,
                              std::span<const PairView> batch, double beta,
                              const Rng& draw_base, int jobs,
                              kernels::Workspace& ws, std::span<double> grad_out) {
  const std::vector<kernels::PairSample> samples = to_samples(batch);
  const double loss =
      kernels::dpo_loss_grad(theta, theta_ref, samples, beta, draw_base, jobs, ws, grad_out);
  if (!std::isfinite(loss)) throw std::runtime_error("preference loss is not finite");
  return loss;
}

double implicit_reward_accuracy(const flow::ModelParams& theta,
                                const flow::ModelParams& theta_ref,
                                const pairs::PairDataset& ds, double beta,
                                int n_draws, uint64_t seed, int jobs) {
  if (n_draws < 1) throw std::invalid_argument("need at least one evaluation draw");
  const std::vector<PairView> views = pair_views(ds);
  const Rng root = Rng(seed).child(kRewardDraw);
  std::vector<double> margins(views.size());
  parallel_for(static_cast<int64_t>(views.size()), jobs, [&](int64_t i) {
    const kernels::PairSample sample{views[i].winner, views[i].loser, views[i].cond};
    margins[i] = kernels::pair_margin(theta, theta_ref, sample, beta,
                                      root.child(views[i].content_hash), n_draws);
  });
  double score = 0.0;
  for (double m : margins) {
    if (m > 0) {
      score += 1.0;
    } else if (m == 0) {
      score += 0.5;
    }
  }
  return score / static_cast<double>(views.size());
}

flow::ModelParams sft_train(const flow::ModelParams& start, const dyn::Dataset& ds,
                            const SftOptions& opt, std::vector<flow::CurveRow>* curve) {
  if (ds.train_ids.empty()) throw std::invalid_argument("training split is empty");
  const flow::LatentTable train = flow::latent_table(ds, ds.train_ids);
  const flow::LatentTable heldout = flow::latent_table(ds, ds.heldout_ids);

  const Rng root = Rng(opt.seed).child(kSftStage);
  flow::ModelParams params = start;
  flow::AdamW adam(params.shape.param_count(), opt.lr, opt.weight_decay);
  kernels::Workspace ws;
  std::vector<double> grad(params.shape.param_count());
  std::vector<kernels::Sample> batch(opt.batch);

  auto heldout_loss = [&]() {
    return heldout.count == 0
               ? 0.0
               : flow::heldout_flow_loss(params, heldout, opt.heldout_items,
                                         opt.heldout_draws, opt.seed, opt.jobs);
  };

  for (int step = 0; step < opt.steps; ++step) {
    Rng pick = root.child(kSftBatch, step);
    for (int b = 0; b < opt.batch; ++b) {
      const int64_t i = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(train.count));
      batch[b] = kernels::Sample{train.latent_at(i), train.cond_at(i)};
    }
    const double loss = kernels::flow_loss_grad(params, batch, root.child(kSftDraw, step),
                                                opt.jobs, ws, grad);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("fine-tuning diverged at step " + std::to_string(step));
    }
    if (curve && step % opt.eval_every == 0) {
      curve->push_back(flow::CurveRow{step, loss, heldout_loss()});
    }
    adam.step(params.data, grad);
  }
  if (curve) {
    curve->push_back(flow::CurveRow{opt.steps,
                                    curve->empty() ? 0.0 : curve->back().train_loss,
                                    heldout_loss()});
  }
  return params;
}

std::vector<StageSpec> parse_schedule(const std::string& text, int total_steps) {
  std::vector<StageSpec> out;
  int fresh_before = 0;
  for (const std::string& tok : io::split(text, ',')) {
    if (tok.empty()) throw std::invalid_argument("empty schedule entry");
    StageSpec spec;
    if (tok == "mix") {
      if (fresh_before < 2) {
        throw std::invalid_argument("'mix' needs at least two earlier fixed-step stages");
      }
      spec.mix = true;
    } else {
      spec.s = static_cast<int>(io::parse_i64(tok));
      if (spec.s < 1 || spec.s > total_steps) {
        throw std::invalid_argument("schedule step out of [1, total steps]");
      }
      ++fresh_before;
    }
    out.push_back(spec);
  }
  if (out.empty()) throw std::invalid_argument("schedule is empty");
  return out;
}

namespace {

// Median physics residual of one-sample-per-condition generations from pure
// noise, with condition-keyed noise so successive evaluations are paired.
double heldout_residual_median(const flow::ModelParams& params,
                               const dyn::Dataset& real, int conditions,
                               int total_steps, uint64_t seed, int jobs) {
  const int n = std::min<int>(conditions, static_cast<int>(real.heldout_ids.size()));
  if (n == 0) return 0.0;
  const int latent = params.shape.latent;
  const Rng root = Rng(seed).child(kProgressResidual);

  std::vector<std::vector<double>> starts(n);
  std::vector<std::vector<double>> conds(n);
  std::vector<std::span<const double>> start_views(n), cond_views(n);
  for (int i = 0; i < n; ++i) {
    Rng stream = root.child(i);
    starts[i].resize(latent);
    for (double& v : starts[i]) v = stream.gaussian();
    conds[i] = dyn::condition_of(real.items[real.heldout_ids[i]]).encoding();
    start_views[i] = starts[i];
    cond_views[i] = conds[i];
  }
  std::vector<flow::SampleChain> chains;
  kernels::reverse_chains(params, start_views, cond_views, total_steps, total_steps,
                          jobs, chains);

  std::vector<double> residuals;
  residuals.reserve(n);
  for (int i = 0; i < n; ++i) {
    const dyn::World& world = real.items[real.heldout_ids[i]].world;
    if (!chains[i].finite) {
      residuals.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    residuals.push_back(dyn::physics_residual(world, chains[i].endpoint(),
                                              real.spec.frames, real.spec.dt));
  }
  std::sort(residuals.begin(), residuals.end());
  const size_t mid = residuals.size() / 2;
  return residuals.size() % 2 ? residuals[mid]
                              : 0.5 * (residuals[mid - 1] + residuals[mid]);
}

}  // namespace

flow::ModelParams progressive_train(const flow::ModelParams& start,
                                    const dyn::Dataset& real,
                                    const ProgressiveOptions& opt,
                                    ProgressiveSink* sink) {
  if (opt.schedule.empty()) throw std::invalid_argument("schedule is empty");
  if (opt.batch < 2 || opt.batch % 2 != 0) {
    throw std::invalid_argument("batch must be even (mixture stages split batches in half)");
  }
  if (real.train_ids.empty()) throw std::invalid_argument("training split is empty");
  const flow::LatentTable train = flow::latent_table(real, real.train_ids);

  const Rng root(opt.seed);
  flow::ModelParams theta = start;
  const flow::CheckpointMeta meta{real.spec.frames, dyn::kStateDim, opt.total_steps};

  kernels::Workspace ws;
  std::vector<double> grad(theta.shape.param_count());
  std::vector<kernels::Sample> sft_batch(opt.batch);
  std::vector<kernels::PairSample> dpo_batch(opt.batch);

  std::vector<pairs::PairDataset> stage_sets;  // fresh (non-mix) stages, in order
  std::vector<std::vector<PairView>> stage_views;
  stage_sets.reserve(opt.schedule.size());
  stage_views.reserve(opt.schedule.size());

  for (size_t iter = 0; iter < opt.schedule.size(); ++iter) {
    const StageSpec& stage = opt.schedule[iter];
    const flow::ModelParams theta_ref = theta;  // frozen for this stage
    flow::AdamW adam(theta.shape.param_count(), opt.lr, opt.weight_decay);

    // Pair sources for this stage: one fresh set generated by the current
    // model, or an even mixture over all earlier fresh sets.
    std::vector<const pairs::PairDataset*> source_sets;
    if (!stage.mix) {
      const uint64_t ref_hash = flow::checkpoint_hash(theta_ref, meta);
      pairs::PairDataset fresh = pairs::build_pair_dataset(
          theta_ref, ref_hash, real, {stage.s}, opt.total_steps, opt.k,
          opt.pair_count, root.child(kPairStage, iter).next_u64(), opt.jobs);
      if (sink) sink->on_pairs(static_cast<int>(iter) + 1, fresh);
      stage_sets.push_back(std::move(fresh));
      stage_views.push_back(pair_views(stage_sets.back()));
      source_sets.push_back(&stage_sets.back());
    } else {
      for (const auto& sds : stage_sets) source_sets.push_back(&sds);
    }
    std::vector<const std::vector<PairView>*> sources;
    if (!stage.mix) {
      sources.push_back(&stage_views.back());
    } else {
      for (const auto& views : stage_views) sources.push_back(&views);
    }

    // Reward-accuracy probe: a fixed prefix taken round-robin from the sources.
    pairs::PairDataset probe;
    probe.meta = source_sets.front()->meta;
    {
      size_t total = 0;
      for (const auto* sds : source_sets) total += sds->items.size();
      const size_t want = std::min<size_t>(opt.reward_pairs, total);
      const size_t nsrc = source_sets.size();
      for (size_t j = 0; probe.items.size() < want && j < want * nsrc + nsrc; ++j) {
        const pairs::PairDataset& sds = *source_sets[j % nsrc];
        const size_t idx = j / nsrc;
        if (idx < sds.items.size()) probe.items.push_back(sds.items[idx]);
      }
    }

    for (int step = 0; step < opt.steps_per_iter; ++step) {
      const bool dpo_branch = opt.sft_interleave ? (step % 2 == 0) : true;
      double loss = 0.0;
      if (dpo_branch) {
        Rng pick = root.child(kDpoBatch, iter).child(step);
        for (int b = 0; b < opt.batch; ++b) {
          const auto& src = *sources[b % sources.size()];
          const PairView& v = src[pick.next_u64() % src.size()];
          dpo_batch[b] = kernels::PairSample{v.winner, v.loser, v.cond};
        }
        loss = kernels::dpo_loss_grad(theta, theta_ref, dpo_batch, opt.beta,
                                      root.child(kDpoDraw, iter).child(step), opt.jobs,
                                      ws, grad);
      } else {
        Rng pick = root.child(kSftBatch, iter).child(step);
        for (int b = 0; b < opt.batch; ++b) {
          const int64_t i =
              static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(train.count));
          sft_batch[b] = kernels::Sample{train.latent_at(i), train.cond_at(i)};
        }
        loss = kernels::flow_loss_grad(theta, sft_batch,
                                       root.child(kSftDraw, iter).child(step), opt.jobs,
                                       ws, grad);
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("preference training diverged (iteration " +
                                 std::to_string(iter + 1) + ", step " +
                                 std::to_string(step) + ")");
      }

      if (sink) {
        ReportRow row;
        row.iter = static_cast<int>(iter) + 1;
        row.step = step;
        row.branch = dpo_branch ? "dpo" : "sft";
        row.loss = loss;
        if (step % opt.reward_every == 0) {
          row.reward_accuracy = implicit_reward_accuracy(
              theta, theta_ref, probe, opt.beta, opt.reward_draws, opt.seed, opt.jobs);
        }
        if (step % opt.residual_every == 0) {
          row.heldout_residual_median = heldout_residual_median(
              theta, real, opt.residual_conditions, opt.total_steps, opt.seed, opt.jobs);
        }
        sink->on_report(row);
      }
      adam.step(theta.data, grad);
    }
    if (sink) sink->on_checkpoint(static_cast<int>(iter) + 1, theta);
  }
  return theta;
}

std::string report_csv_header(const ProgressiveOptions& opt) {
  std::string out = "# theta_ref=reset_per_iteration beta=" + io::fmt_double(opt.beta) +
                    " lr=" + io::fmt_double(opt.lr) +
                    " steps_per_iter=" + io::fmt_int(opt.steps_per_iter) +
                    " sft_interleave=" + (opt.sft_interleave ? std::string("true") : std::string("false")) +
                    " seed=" + std::to_string(opt.seed) + "\n";
  out += "step,branch,loss,implicit_reward_accuracy,heldout_physics_residual_median\n";
  return out;
}

std::string report_csv_row(const ReportRow& row) {
  std::string out = io::fmt_int(row.step);
  out += ",";
  out += row.branch;
  out += "," + io::fmt_double(row.loss) + ",";
  if (row.reward_accuracy) out += io::fmt_double(*row.reward_accuracy);
  out += ",";
  if (row.heldout_residual_median) out += io::fmt_double(*row.heldout_residual_median);
  out += "\n";
  return out;
}

}  // namespace rdpo::dpo
