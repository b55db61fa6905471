#include "rdpo/pairgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "rdpo/bytes.hpp"
#include "rdpo/parallel.hpp"

namespace rdpo::pairs {

namespace {

constexpr std::string_view kPairMagic = "RDPOPR1\n";

// Sub-stream labels within one pair's stream.
constexpr uint64_t kChainNoise = 0;
constexpr uint64_t kCandidateNoise = 1;

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> quantized(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = quantize_f32(v[i]);
  return out;
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

uint32_t select_candidate(std::span<const float> distances) {
  if (distances.empty()) throw std::invalid_argument("no candidates");
  uint32_t best = 0;
  for (uint32_t i = 1; i < distances.size(); ++i) {
    if (distances[i] < distances[best]) best = i;
  }
  return best;
}

std::optional<PreferencePair> generate_pair(const flow::ModelParams& params,
                                            const dyn::Trajectory& real, int s,
                                            int total_steps, int k, Rng stream) {
  if (s < 1 || s > total_steps) throw std::invalid_argument("reverse step out of range");
  if (k < 1) throw std::invalid_argument("candidate count must be >= 1");

  const std::vector<double> x0 = dyn::flatten(real);
  const dyn::Condition cond = dyn::condition_of(real);
  const std::vector<double> cond_enc = cond.encoding();
  flow::Activations acts;

  // Model chain seeded with the terminal noising of the real latent (at the
  // terminal step the latent content is gone; the provenance is shared).
  Rng chain_rng = stream.child(kChainNoise);
  const flow::NoisySample terminal =
      flow::noising(x0, total_steps, total_steps, chain_rng, real.id);
  const flow::SampleChain model_chain =
      flow::reverse_sample(params, terminal.x, total_steps, total_steps, cond_enc, acts);
  if (!model_chain.finite) return std::nullopt;
  const std::span<const double> model_at_s = model_chain.at_step(s);

  // Rejection selection: distances are rounded to float32 before the argmin
  // so the stored metadata re-verifies exactly.
  std::vector<float> distances(k);
  std::vector<std::vector<double>> candidates(k);
  for (int i = 0; i < k; ++i) {
    Rng cand_rng = stream.child(kCandidateNoise, static_cast<uint64_t>(i));
    candidates[i] = flow::noising(x0, s, total_steps, cand_rng, real.id).x;
    double d = 0.0;
    for (size_t j = 0; j < candidates[i].size(); ++j) {
      const double diff = candidates[i][j] - model_at_s[j];
      d += diff * diff;
    }
    distances[i] = static_cast<float>(d);
  }
  const uint32_t selected = select_candidate(distances);

  const flow::SampleChain preferred_chain = flow::reverse_sample(
      params, candidates[selected], s, total_steps, cond_enc, acts);
  if (!preferred_chain.finite) return std::nullopt;

  PreferencePair pair;
  pair.source_id = real.id;
  pair.world = real.world;
  pair.s = s;
  pair.total_steps = total_steps;
  pair.k = k;
  pair.selected_index = selected;
  pair.candidate_distances = std::move(distances);
  pair.cond = cond_enc;
  pair.preferred = quantized(preferred_chain.endpoint());
  pair.model = quantized(model_chain.endpoint());
  if (!all_finite(pair.preferred) || !all_finite(pair.model)) return std::nullopt;
  return pair;
}

PairDataset build_pair_dataset(const flow::ModelParams& params,
                               uint64_t checkpoint_hash, const dyn::Dataset& real,
                               const std::vector<int>& s_values, int total_steps,
                               int k, int count, uint64_t seed, int jobs) {
  if (count < 1) throw std::invalid_argument("pair count must be >= 1");
  if (s_values.empty()) throw std::invalid_argument("no reverse steps given");
  if (real.train_ids.empty()) throw std::invalid_argument("real dataset has no training split");
  for (int s : s_values) {
    if (s < 1 || s > total_steps) throw std::invalid_argument("reverse step out of range");
  }

  const Rng root(seed);
  const Rng traj_pick = root.child(kPairTrajectory);
  const Rng noise_root = root.child(kPairNoise);

  PairDataset ds;
  ds.meta.checkpoint_hash = checkpoint_hash;
  ds.meta.total_steps = total_steps;
  for (int s : s_values) {
    if (std::find(ds.meta.schedule.begin(), ds.meta.schedule.end(), s) ==
        ds.meta.schedule.end()) {
      ds.meta.schedule.push_back(s);
    }
  }
  ds.meta.k = k;
  ds.meta.seed = seed;
  ds.meta.frames = real.spec.frames;
  ds.meta.dim = dyn::kStateDim;
  ds.meta.dt = real.spec.dt;

  // Pair i draws its trajectory and all its noise from streams keyed by i, so
  // generation order and worker count never change the output.
  std::vector<std::optional<PreferencePair>> slots(count);
  const int ns = static_cast<int>(s_values.size());
  parallel_for(count, jobs, [&](int64_t i) {
    Rng pick = traj_pick.child(i);
    const uint32_t idx =
        real.train_ids[pick.next_u64() % real.train_ids.size()];
    slots[i] = generate_pair(params, real.items[idx], s_values[i % ns],
                             total_steps, k, noise_root.child(i));
  });

  int divergent = 0;
  for (auto& slot : slots) {
    if (slot) {
      ds.items.push_back(std::move(*slot));
    } else {
      ++divergent;
    }
  }
  if (divergent * 100 > count) {
    throw std::runtime_error("pair generation diverged on " + std::to_string(divergent) +
                             " of " + std::to_string(count) + " chains (over 1%)");
  }
  if (ds.items.empty()) throw std::runtime_error("all pair generations diverged");
  return ds;
}

std::string serialize_pair_record(const PreferencePair& pair) {
  std::string out;
  io::put_u32(out, pair.source_id);
  io::put_u8(out, static_cast<uint8_t>(pair.world.kind));
  pair.world.encode_params(out);
  io::put_u32(out, static_cast<uint32_t>(pair.s));
  io::put_u32(out, static_cast<uint32_t>(pair.k));
  io::put_u32(out, pair.selected_index);
  for (float d : pair.candidate_distances) io::put_f32(out, d);
  for (double c : pair.cond) io::put_f32(out, static_cast<float>(c));
  for (double v : pair.preferred) io::put_f32(out, static_cast<float>(v));
  for (double v : pair.model) io::put_f32(out, static_cast<float>(v));
  return out;
}

std::string serialize_pairs(const PairDataset& ds) {
  std::string out(kPairMagic);
  std::string sched;
  for (size_t i = 0; i < ds.meta.schedule.size(); ++i) {
    if (i) sched.push_back(',');
    sched += io::fmt_int(ds.meta.schedule[i]);
  }
  out += io::kv_line({{"version", "1"},
                      {"checkpoint", io::hex16(ds.meta.checkpoint_hash)},
                      {"steps", io::fmt_int(ds.meta.total_steps)},
                      {"schedule", sched},
                      {"k", io::fmt_int(ds.meta.k)},
                      {"seed", std::to_string(ds.meta.seed)},
                      {"count", io::fmt_int(static_cast<int64_t>(ds.items.size()))},
                      {"frames", io::fmt_int(ds.meta.frames)},
                      {"dim", io::fmt_int(ds.meta.dim)},
                      {"dt", io::fmt_double(ds.meta.dt)}});
  for (const PreferencePair& pair : ds.items) out += serialize_pair_record(pair);
  return out;
}

PairDataset parse_pairs(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.get_bytes(kPairMagic.size()) != kPairMagic) {
    throw std::runtime_error("not a preference-pair file (bad magic)");
  }
  const auto kv = io::parse_kv_line(r.get_line());
  if (io::kv_get(kv, "version") != "1") {
    throw std::runtime_error("unsupported pair file version");
  }
  PairDataset ds;
  ds.meta.checkpoint_hash = io::parse_hex_u64(io::kv_get(kv, "checkpoint"));
  ds.meta.total_steps = static_cast<int>(io::parse_i64(io::kv_get(kv, "steps")));
  for (const std::string& tok : io::split(io::kv_get(kv, "schedule"), ',')) {
    ds.meta.schedule.push_back(static_cast<int>(io::parse_i64(tok)));
  }
  ds.meta.k = static_cast<int>(io::parse_i64(io::kv_get(kv, "k")));
  ds.meta.seed = io::parse_u64(io::kv_get(kv, "seed"));
  ds.meta.frames = static_cast<int>(io::parse_i64(io::kv_get(kv, "frames")));
  ds.meta.dim = static_cast<int>(io::parse_i64(io::kv_get(kv, "dim")));
  ds.meta.dt = io::parse_double(io::kv_get(kv, "dt"));
  const int64_t count = io::parse_i64(io::kv_get(kv, "count"));
  if (count < 1) throw std::runtime_error("pair file is empty");

  const int latent = ds.meta.frames * ds.meta.dim;
  const std::set<int> schedule_set(ds.meta.schedule.begin(), ds.meta.schedule.end());
  ds.items.reserve(count);
  for (int64_t i = 0; i < count; ++i) {
    PreferencePair pair;
    pair.source_id = r.get_u32();
    const uint8_t kind_byte = r.get_u8();
    if (kind_byte >= dyn::kNumKinds) throw std::runtime_error("bad world kind in pair file");
    pair.world.kind = static_cast<dyn::WorldKind>(kind_byte);
    pair.world.params = dyn::World::decode_params(pair.world.kind, r);
    pair.s = static_cast<int>(r.get_u32());
    pair.k = static_cast<int>(r.get_u32());
    pair.selected_index = r.get_u32();
    pair.total_steps = ds.meta.total_steps;
    if (pair.k != ds.meta.k || !schedule_set.count(pair.s)) {
      throw std::runtime_error("pair metadata does not match file header");
    }
    if (pair.selected_index >= static_cast<uint32_t>(pair.k)) {
      throw std::runtime_error("selected index out of range");
    }
    pair.candidate_distances.resize(pair.k);
    for (float& d : pair.candidate_distances) d = r.get_f32();
    pair.cond.resize(dyn::kConditionDim);
    for (double& c : pair.cond) c = r.get_f32();
    pair.preferred.resize(latent);
    for (double& v : pair.preferred) v = r.get_f32();
    pair.model.resize(latent);
    for (double& v : pair.model) v = r.get_f32();
    ds.items.push_back(std::move(pair));
  }
  if (!r.at_end()) throw std::runtime_error("trailing bytes in pair file");
  return ds;
}

void write_pairs(const std::string& path, const PairDataset& ds) {
  io::write_file(path, serialize_pairs(ds));
}

PairDataset read_pairs(const std::string& path) {
  return parse_pairs(io::read_file(path));
}

int verify_selection_invariant(const PairDataset& ds) {
  int violations = 0;
  for (const PreferencePair& pair : ds.items) {
    if (select_candidate(pair.candidate_distances) != pair.selected_index) {
      ++violations;
    }
  }
  return violations;
}

std::vector<AuditRow> pair_audit(const PairDataset& ds) {
  struct Bucket {
    int n = 0;
    double wins = 0.0;
  };
  std::map<int, Bucket> buckets;
  for (const PreferencePair& pair : ds.items) {
    const double res_pref = dyn::physics_residual(pair.world, pair.preferred,
                                                  ds.meta.frames, ds.meta.dt);
    const double res_model = dyn::physics_residual(pair.world, pair.model,
                                                   ds.meta.frames, ds.meta.dt);
    Bucket& b = buckets[pair.s];
    ++b.n;
    if (res_pref < res_model) {
      b.wins += 1.0;
    } else if (res_pref == res_model) {
      b.wins += 0.5;
    }
  }
  std::vector<AuditRow> rows;
  for (const auto& [s, b] : buckets) {
    AuditRow row;
    row.s = s;
    row.n = b.n;
    row.accuracy = b.wins / b.n;
    row.ci95 = 1.96 * std::sqrt(std::max(row.accuracy * (1.0 - row.accuracy), 0.0) / b.n);
    rows.push_back(row);
  }
  return rows;
}

std::string audit_csv(const std::vector<AuditRow>& rows) {
  std::string out = "s,n,accuracy,ci95\n";
  for (const AuditRow& r : rows) {
    out += io::fmt_int(r.s) + "," + io::fmt_int(r.n) + "," + io::fmt_double(r.accuracy) +
           "," + io::fmt_double(r.ci95) + "\n";
  }
  return out;
}

}  // namespace rdpo::pairs
