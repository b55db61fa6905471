#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdpo/dynamics.hpp"
#include "rdpo/flow_model.hpp"
#include "rdpo/rng.hpp"

namespace rdpo::pairs {

struct PreferencePair {
  uint32_t source_id = 0;
  dyn::World world;
  int s = 0;            // reverse step the preferred chain started from
  int total_steps = 0;
  int k = 0;
  uint32_t selected_index = 0;
  std::vector<float> candidate_distances;  // squared L2, one per candidate
  std::vector<double> cond;                // condition encoding
  std::vector<double> preferred;           // latents, float32-exact values
  std::vector<double> model;
};

struct PairDatasetMeta {
  uint64_t checkpoint_hash = 0;
  int total_steps = 0;
  std::vector<int> schedule;  // distinct reverse steps present
  int k = 0;
  uint64_t seed = 0;
  int frames = 0;
  int dim = 0;
  double dt = 0.0;
};

struct PairDataset {
  PairDatasetMeta meta;
  std::vector<PreferencePair> items;
};

// Lowest-index argmin; the selection contract for candidate distances.
uint32_t select_candidate(std::span<const float> distances);

// Algorithm: noise the real latent to the terminal step, run the model chain
// down to zero recording its intermediate at step s, pick the closest of k
// fresh noisings of the real latent at step s, and denoise that candidate.
// Returns nothing if either chain leaves the finite range.
std::optional<PreferencePair> generate_pair(const flow::ModelParams& params,
                                            const dyn::Trajectory& real, int s,
                                            int total_steps, int k, Rng stream);

PairDataset build_pair_dataset(const flow::ModelParams& params,
                               uint64_t checkpoint_hash, const dyn::Dataset& real,
                               const std::vector<int>& s_values, int total_steps,
                               int k, int count, uint64_t seed, int jobs);

std::string serialize_pair_record(const PreferencePair& pair);
std::string serialize_pairs(const PairDataset& ds);
PairDataset parse_pairs(std::string_view bytes);
void write_pairs(const std::string& path, const PairDataset& ds);
PairDataset read_pairs(const std::string& path);

// Re-checks the stored selection invariant; returns the number of violations.
int verify_selection_invariant(const PairDataset& ds);

struct AuditRow {
  int s = 0;
  int n = 0;
  double accuracy = 0.0;
  double ci95 = 0.0;  // binomial half-width
};

// Oracle audit: a pair counts as correct when the preferred latent has the
// strictly lower physics residual; exact ties count half.
std::vector<AuditRow> pair_audit(const PairDataset& ds);
std::string audit_csv(const std::vector<AuditRow>& rows);

}  // namespace rdpo::pairs
