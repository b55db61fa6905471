#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rdpo/dynamics.hpp"
#include "rdpo/flow_model.hpp"
#include "rdpo/pairgen.hpp"

namespace rdpo::eval {

struct ResidualStats {
  int n = 0;
  int divergent = 0;
  double median = 0.0;
  double mean = 0.0;
  double iqr = 0.0;
};
ResidualStats residual_stats(std::vector<double> residuals, int divergent);

struct EvalReport {
  uint64_t checkpoint_hash = 0;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  int conditions = 0;
  int samples_per_condition = 0;
  int total_steps = 0;
  ResidualStats overall;
  std::array<ResidualStats, dyn::kNumKinds> per_kind;
  double heldout_flow_loss = 0.0;
  // Hash of the run's pair-audit table when one exists, "none" otherwise.
  std::string audit_reference = "none";
};

// Conditions come from the held-out split, in stored order.
std::vector<uint32_t> heldout_condition_ids(const dyn::Dataset& ds, int n);

EvalReport evaluate_model(const flow::ModelParams& params, uint64_t checkpoint_hash,
                          const dyn::Dataset& ds, int conditions,
                          int samples_per_condition, int total_steps,
                          uint64_t config_hash, uint64_t seed, int jobs);
std::string report_csv(const EvalReport& report);

struct CompareResult {
  double win_rate = 0.0;  // of the first model over the second
  double ci95 = 0.0;
  int n = 0;
  int ties = 0;
};

// Paired design: both models denoise from the same condition-keyed noise, so
// comparing a checkpoint against itself gives exactly one half.
CompareResult compare_models(const flow::ModelParams& a, const flow::ModelParams& b,
                             const dyn::Dataset& ds, int conditions, int total_steps,
                             uint64_t seed, int jobs);

struct AblationRow {
  std::string name;
  bool present = false;
  double median_residual = 0.0;
  double mean_residual = 0.0;
  double heldout_flow_loss = 0.0;
  double win_rate_vs_base = 0.0;
  double win_ci95 = 0.0;
};

// Fixed row order: base, sft, rdpo_wo_sft, rdpo_w_sft, iter1, iter2, iter3.
const std::vector<std::string>& ablation_row_names();

struct NamedCheckpoint {
  flow::ModelParams params;
  uint64_t hash = 0;
};

std::vector<AblationRow> ablation_table(
    const std::map<std::string, NamedCheckpoint>& checkpoints,
    const dyn::Dataset& ds, int conditions, int samples_per_condition,
    int total_steps, uint64_t seed, int jobs);
std::string ablation_csv(const std::vector<AblationRow>& rows, uint64_t config_hash,
                         uint64_t seed, int conditions, int samples);

// Static two-panel line chart: audit accuracy vs reverse step, and median
// residual across training stages.
std::string svg_chart(const std::vector<pairs::AuditRow>& audit,
                      const std::vector<std::pair<std::string, double>>& stage_medians);

std::string run_manifest_json(const std::string& command, uint64_t config_hash,
                              uint64_t seed,
                              const std::map<std::string, std::string>& artifacts);

}  // namespace rdpo::eval
