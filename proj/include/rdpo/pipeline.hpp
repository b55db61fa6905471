#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rdpo/config.hpp"
#include "rdpo/dynamics.hpp"
#include "rdpo/eval.hpp"
#include "rdpo/flow_model.hpp"
#include "rdpo/pairgen.hpp"

namespace rdpo::pipeline {

// Run directories are append-only: a stage whose output already exists either
// verifies byte equality (cheap artifacts) or reuses the file (checkpoints,
// pair sets). --force overwrites.
struct RunPaths {
  std::string dir;

  std::string dataset() const { return dir + "/dataset.rdpods"; }
  std::string base_ckpt() const { return dir + "/base.ckpt"; }
  std::string base_curve() const { return dir + "/base_loss.csv"; }
  std::string sft_ckpt() const { return dir + "/sft.ckpt"; }
  std::string sft_curve() const { return dir + "/sft_loss.csv"; }
  std::string rdpo_ckpt(bool sft, int iter) const;
  std::string rdpo_pairs(bool sft, int iter) const;
  std::string rdpo_report(bool sft, int iter) const;
  std::string pairs_file(const std::string& tag) const;
  std::string audit_pairs() const { return dir + "/audit_pairs.rdpopr"; }
  std::string audit_csv_path() const { return dir + "/audit.csv"; }
  std::string eval_csv(const std::string& name) const { return dir + "/eval_" + name + ".csv"; }
  std::string ablation_csv_path() const { return dir + "/ablation.csv"; }
  std::string chart() const { return dir + "/chart.svg"; }
  std::string manifest() const { return dir + "/manifest.json"; }
};

RunPaths run_paths(const std::string& out_root, const cfg::RunConfig& config);
void ensure_dir(const std::string& dir);

struct StageOut {
  std::string path;
  uint64_t hash = 0;
  bool reused = false;
};

// Writes content unless an identical file is already there; a different
// existing file is an error without force.
StageOut write_artifact(const std::string& path, const std::string& content, bool force);

StageOut gen_data(const cfg::RunConfig& config, const RunPaths& paths, bool force);

struct TrainOut {
  StageOut ckpt;
  double heldout_initial = 0.0;
  double heldout_final = 0.0;
};
TrainOut train_base_stage(const cfg::RunConfig& config, const RunPaths& paths,
                          int jobs, bool force);
TrainOut train_sft_stage(const cfg::RunConfig& config, const RunPaths& paths,
                         int jobs, bool force);

StageOut gen_pairs_stage(const cfg::RunConfig& config, const RunPaths& paths,
                         const std::string& ckpt_path, const std::vector<int>& s_values,
                         int k, int count, const std::string& out_path, int jobs,
                         bool force);

StageOut audit_stage(const cfg::RunConfig& config, const RunPaths& paths,
                     const std::string& pairs_path, bool force);

std::vector<StageOut> train_rdpo_stage(const cfg::RunConfig& config,
                                       const RunPaths& paths, bool sft_interleave,
                                       std::optional<int> iters_override, int jobs,
                                       bool force);

StageOut eval_stage(const cfg::RunConfig& config, const RunPaths& paths,
                    const std::string& ckpt_path, const std::string& name, int jobs,
                    bool force);

eval::CompareResult compare_stage(const cfg::RunConfig& config, const RunPaths& paths,
                                  const std::string& ckpt_a, const std::string& ckpt_b,
                                  int jobs);

StageOut ablation_stage(const cfg::RunConfig& config, const RunPaths& paths, int jobs,
                        bool force);

struct ReproOut {
  RunPaths paths;
  StageOut ablation;
  StageOut audit;
};
ReproOut repro(const cfg::RunConfig& config, const std::string& out_root, int jobs,
               bool force);

}  // namespace rdpo::pipeline
