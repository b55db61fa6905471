#include "rdpo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rdpo/bytes.hpp"
#include "rdpo/kernels.hpp"
#include "rdpo/parallel.hpp"

namespace rdpo::eval {

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  // Linear interpolation between order statistics.
  if (v.empty()) return 0.0;
  if (v.size() == 1) return v[0];
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

struct SampledResiduals {
  std::vector<double> values;                          // finite residuals
  std::array<std::vector<double>, dyn::kNumKinds> by_kind;
  int divergent = 0;
  std::array<int, dyn::kNumKinds> divergent_by_kind{};
};

// One residual per (condition, sample), generated from pure noise keyed by
// (purpose, condition, sample) streams.
SampledResiduals sample_residuals(const flow::ModelParams& params,
                                  const dyn::Dataset& ds,
                                  const std::vector<uint32_t>& cond_ids,
                                  int samples_per_condition, int total_steps,
                                  uint64_t seed, uint64_t purpose, int jobs) {
  const int latent = params.shape.latent;
  const int64_t n = static_cast<int64_t>(cond_ids.size()) * samples_per_condition;
  const Rng root = Rng(seed).child(purpose);

  std::vector<std::vector<double>> conds(cond_ids.size());
  for (size_t i = 0; i < cond_ids.size(); ++i) {
    conds[i] = dyn::condition_of(ds.items[cond_ids[i]]).encoding();
  }

  std::vector<double> residuals(n);
  parallel_for(n, jobs, [&](int64_t task) {
    const int64_t ci = task / samples_per_condition;
    const int64_t si = task % samples_per_condition;
    Rng stream = root.child(ci).child(si);
    std::vector<double> x(latent);
    for (double& v : x) v = stream.gaussian();
    flow::Activations acts;
    const flow::SampleChain chain =
        flow::reverse_sample(params, x, total_steps, total_steps, conds[ci], acts);
    const dyn::Trajectory& src = ds.items[cond_ids[ci]];
    residuals[task] = chain.finite
                          ? dyn::physics_residual(src.world, chain.endpoint(),
                                                  ds.spec.frames, ds.spec.dt)
                          : std::numeric_limits<double>::infinity();
  });

  SampledResiduals out;
  for (int64_t task = 0; task < n; ++task) {
    const int64_t ci = task / samples_per_condition;
    const int kind = static_cast<int>(ds.items[cond_ids[ci]].world.kind);
    if (std::isfinite(residuals[task])) {
      out.values.push_back(residuals[task]);
      out.by_kind[kind].push_back(residuals[task]);
    } else {
      ++out.divergent;
      ++out.divergent_by_kind[kind];
    }
  }
  return out;
}

}  // namespace

ResidualStats residual_stats(std::vector<double> residuals, int divergent) {
  ResidualStats st;
  st.n = static_cast<int>(residuals.size());
  st.divergent = divergent;
  if (residuals.empty()) return st;
  std::sort(residuals.begin(), residuals.end());
  double total = 0.0;
  for (double v : residuals) total += v;
  st.mean = total / st.n;
  st.median = quantile_sorted(residuals, 0.5);
  st.iqr = quantile_sorted(residuals, 0.75) - quantile_sorted(residuals, 0.25);
  return st;
}

std::vector<uint32_t> heldout_condition_ids(const dyn::Dataset& ds, int n) {
  if (ds.heldout_ids.empty()) throw std::invalid_argument("no held-out split");
  const int take = std::min<int>(n, static_cast<int>(ds.heldout_ids.size()));
  return std::vector<uint32_t>(ds.heldout_ids.begin(), ds.heldout_ids.begin() + take);
}

EvalReport evaluate_model(const flow::ModelParams& params, uint64_t checkpoint_hash,
                          const dyn::Dataset& ds, int conditions,
                          int samples_per_condition, int total_steps,
                          uint64_t config_hash, uint64_t seed, int jobs) {
  if (samples_per_condition < 1) throw std::invalid_argument("need at least one sample");
  const std::vector<uint32_t> cond_ids = heldout_condition_ids(ds, conditions);

  EvalReport report;
  report.checkpoint_hash = checkpoint_hash;
  report.config_hash = config_hash;
  report.seed = seed;
  report.conditions = static_cast<int>(cond_ids.size());
  report.samples_per_condition = samples_per_condition;
  report.total_steps = total_steps;

  SampledResiduals sampled =
      sample_residuals(params, ds, cond_ids, samples_per_condition, total_steps,
                       seed, kEvalNoise, jobs);
  const int total = report.conditions * samples_per_condition;
  if (sampled.divergent * 100 > total) {
    throw std::runtime_error("sampling diverged on " + std::to_string(sampled.divergent) +
                             " of " + std::to_string(total) + " chains (over 1%)");
  }
  report.overall = residual_stats(std::move(sampled.values), sampled.divergent);
  for (int k = 0; k < dyn::kNumKinds; ++k) {
    report.per_kind[k] = residual_stats(std::move(sampled.by_kind[k]),
                                        sampled.divergent_by_kind[k]);
  }

  const flow::LatentTable heldout = flow::latent_table(ds, ds.heldout_ids);
  report.heldout_flow_loss =
      flow::heldout_flow_loss(params, heldout, 256, 2, seed, jobs);
  return report;
}

std::string report_csv(const EvalReport& r) {
  std::string out = "# checkpoint=" + io::hex16(r.checkpoint_hash) +
                    " config=" + io::hex16(r.config_hash) + " seed=" + std::to_string(r.seed) +
                    " conditions=" + io::fmt_int(r.conditions) +
                    " samples=" + io::fmt_int(r.samples_per_condition) +
                    " steps=" + io::fmt_int(r.total_steps) +
                    " heldout_flow_loss=" + io::fmt_double(r.heldout_flow_loss) +
                    " audit=" + r.audit_reference + "\n";
  out += "scope,n,divergent,median_residual,mean_residual,iqr_residual\n";
  auto row = [&](const std::string& scope, const ResidualStats& st) {
    out += scope + "," + io::fmt_int(st.n) + "," + io::fmt_int(st.divergent) + "," +
           io::fmt_double(st.median) + "," + io::fmt_double(st.mean) + "," +
           io::fmt_double(st.iqr) + "\n";
  };
  row("overall", r.overall);
  for (int k = 0; k < dyn::kNumKinds; ++k) {
    row(dyn::kind_name(static_cast<dyn::WorldKind>(k)), r.per_kind[k]);
  }
  return out;
}

CompareResult compare_models(const flow::ModelParams& a, const flow::ModelParams& b,
                             const dyn::Dataset& ds, int conditions, int total_steps,
                             uint64_t seed, int jobs) {
  const std::vector<uint32_t> cond_ids = heldout_condition_ids(ds, conditions);
  const int latent = a.shape.latent;
  const int64_t n = static_cast<int64_t>(cond_ids.size());
  const Rng root = Rng(seed).child(kCompareNoise);

  std::vector<double> res_a(n), res_b(n);
  parallel_for(2 * n, jobs, [&](int64_t task) {
    const int64_t i = task % n;
    const bool first = task < n;
    const flow::ModelParams& params = first ? a : b;
    // Shared condition-level stream: both models start from identical noise.
    Rng stream = root.child(i);
    std::vector<double> x(latent);
    for (double& v : x) v = stream.gaussian();
    const std::vector<double> cond = dyn::condition_of(ds.items[cond_ids[i]]).encoding();
    flow::Activations acts;
    const flow::SampleChain chain =
        flow::reverse_sample(params, x, total_steps, total_steps, cond, acts);
    const dyn::Trajectory& src = ds.items[cond_ids[i]];
    const double res = chain.finite
                           ? dyn::physics_residual(src.world, chain.endpoint(),
                                                   ds.spec.frames, ds.spec.dt)
                           : std::numeric_limits<double>::infinity();
    (first ? res_a : res_b)[i] = res;
  });

  CompareResult out;
  out.n = static_cast<int>(n);
  double wins = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (res_a[i] < res_b[i]) {
      wins += 1.0;
    } else if (res_a[i] == res_b[i]) {
      wins += 0.5;
      ++out.ties;
    }
  }
  out.win_rate = wins / static_cast<double>(n);
  out.ci95 = 1.96 * std::sqrt(std::max(out.win_rate * (1.0 - out.win_rate), 0.0) /
                              static_cast<double>(n));
  return out;
}

const std::vector<std::string>& ablation_row_names() {
  static const std::vector<std::string> names = {
      "base", "sft", "rdpo_wo_sft", "rdpo_w_sft", "iter1", "iter2", "iter3"};
  return names;
}

std::vector<AblationRow> ablation_table(
    const std::map<std::string, NamedCheckpoint>& checkpoints,
    const dyn::Dataset& ds, int conditions, int samples_per_condition,
    int total_steps, uint64_t seed, int jobs) {
  const auto base_it = checkpoints.find("base");
  std::vector<AblationRow> rows;
  for (const std::string& name : ablation_row_names()) {
    AblationRow row;
    row.name = name;
    const auto it = checkpoints.find(name);
    if (it == checkpoints.end()) {
      rows.push_back(row);  // absent; the table still lists the slot
      continue;
    }
    row.present = true;
    const EvalReport report =
        evaluate_model(it->second.params, it->second.hash, ds, conditions,
                       samples_per_condition, total_steps, 0, seed, jobs);
    row.median_residual = report.overall.median;
    row.mean_residual = report.overall.mean;
    row.heldout_flow_loss = report.heldout_flow_loss;
    if (base_it != checkpoints.end()) {
      const CompareResult cmp = compare_models(it->second.params, base_it->second.params,
                                               ds, conditions, total_steps, seed, jobs);
      row.win_rate_vs_base = cmp.win_rate;
      row.win_ci95 = cmp.ci95;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, uint64_t config_hash,
                         uint64_t seed, int conditions, int samples) {
  std::string out = "# config=" + io::hex16(config_hash) + " seed=" + std::to_string(seed) +
                    " conditions=" + io::fmt_int(conditions) +
                    " samples=" + io::fmt_int(samples) + "\n";
  out += "checkpoint,present,median_residual,mean_residual,heldout_flow_loss,"
         "win_rate_vs_base,win_ci95\n";
  for (const AblationRow& r : rows) {
    out += r.name + "," + (r.present ? "1" : "0") + ",";
    if (r.present) {
      out += io::fmt_double(r.median_residual) + "," + io::fmt_double(r.mean_residual) +
             "," + io::fmt_double(r.heldout_flow_loss) + "," +
             io::fmt_double(r.win_rate_vs_base) + "," + io::fmt_double(r.win_ci95);
    } else {
      out += ",,,,";
    }
    out += "\n";
  }
  return out;
}

namespace {

struct Panel {
  double x0, y0, w, h;  // plot area in svg coordinates
};

void polyline(std::string& svg, const Panel& p, const std::vector<double>& xs,
              const std::vector<double>& ys, double xmin, double xmax, double ymin,
              double ymax, const char* color) {
  svg += "<polyline fill='none' stroke='";
  svg += color;
  svg += "' stroke-width='1.5' points='";
  for (size_t i = 0; i < xs.size(); ++i) {
    const double fx = (xmax > xmin) ? (xs[i] - xmin) / (xmax - xmin) : 0.5;
    const double fy = (ymax > ymin) ? (ys[i] - ymin) / (ymax - ymin) : 0.5;
    svg += io::fmt_double(p.x0 + fx * p.w) + "," + io::fmt_double(p.y0 + p.h - fy * p.h) + " ";
  }
  svg += "'/>\n";
}

void axes(std::string& svg, const Panel& p, const std::string& title,
          const std::string& xlabel, const std::string& ylabel) {
  svg += "<rect x='" + io::fmt_double(p.x0) + "' y='" + io::fmt_double(p.y0) +
         "' width='" + io::fmt_double(p.w) + "' height='" + io::fmt_double(p.h) +
         "' fill='none' stroke='black'/>\n";
  svg += "<text x='" + io::fmt_double(p.x0 + p.w / 2) + "' y='" +
         io::fmt_double(p.y0 - 8) + "' text-anchor='middle' font-size='13'>" + title +
         "</text>\n";
  svg += "<text x='" + io::fmt_double(p.x0 + p.w / 2) + "' y='" +
         io::fmt_double(p.y0 + p.h + 28) + "' text-anchor='middle' font-size='11'>" +
         xlabel + "</text>\n";
  svg += "<text x='" + io::fmt_double(p.x0 - 34) + "' y='" +
         io::fmt_double(p.y0 + p.h / 2) + "' text-anchor='middle' font-size='11' "
         "transform='rotate(-90 " + io::fmt_double(p.x0 - 34) + " " +
         io::fmt_double(p.y0 + p.h / 2) + ")'>" + ylabel + "</text>\n";
}

void tick_labels(std::string& svg, const Panel& p, double xmin, double xmax,
                 double ymin, double ymax) {
  for (int i = 0; i <= 2; ++i) {
    const double fx = i / 2.0;
    const double xv = xmin + fx * (xmax - xmin);
    svg += "<text x='" + io::fmt_double(p.x0 + fx * p.w) + "' y='" +
           io::fmt_double(p.y0 + p.h + 14) + "' text-anchor='middle' font-size='10'>" +
           io::fmt_double(xv) + "</text>\n";
    const double yv = ymin + fx * (ymax - ymin);
    svg += "<text x='" + io::fmt_double(p.x0 - 4) + "' y='" +
           io::fmt_double(p.y0 + p.h - fx * p.h + 3) +
           "' text-anchor='end' font-size='10'>" + io::fmt_double(yv) + "</text>\n";
  }
}

}  // namespace

std::string svg_chart(const std::vector<pairs::AuditRow>& audit,
                      const std::vector<std::pair<std::string, double>>& stage_medians) {
  std::string svg =
      "<svg xmlns='http://www.w3.org/2000/svg' width='760' height='320' "
      "font-family='sans-serif'>\n";

  if (!audit.empty()) {
    Panel p{60, 40, 280, 210};
    std::vector<double> xs, ys;
    double ymin = 0.4, ymax = 1.0;
    for (const auto& r : audit) {
      xs.push_back(r.s);
      ys.push_back(r.accuracy);
      ymin = std::min(ymin, r.accuracy - 0.05);
    }
    axes(svg, p, "pair audit accuracy", "reverse step s", "accuracy");
    tick_labels(svg, p, xs.front(), xs.back(), ymin, ymax);
    polyline(svg, p, xs, ys, xs.front(), xs.back(), ymin, ymax, "#1f77b4");
  }

  if (!stage_medians.empty()) {
    Panel p{460, 40, 260, 210};
    std::vector<double> xs, ys;
    double ymax = 0.0;
    for (size_t i = 0; i < stage_medians.size(); ++i) {
      xs.push_back(static_cast<double>(i));
      ys.push_back(stage_medians[i].second);
      ymax = std::max(ymax, stage_medians[i].second);
    }
    axes(svg, p, "median residual by stage", "stage", "median residual");
    tick_labels(svg, p, 0, static_cast<double>(stage_medians.size() - 1), 0, ymax);
    polyline(svg, p, xs, ys, 0, static_cast<double>(stage_medians.size() - 1), 0, ymax,
             "#d62728");
    for (size_t i = 0; i < stage_medians.size(); ++i) {
      svg += "<text x='" + io::fmt_double(p.x0 + (stage_medians.size() > 1
                 ? (p.w * i) / (stage_medians.size() - 1) : p.w / 2)) +
             "' y='" + io::fmt_double(p.y0 + p.h + 40) +
             "' text-anchor='middle' font-size='9'>" + stage_medians[i].first +
             "</text>\n";
    }
  }

  svg += "</svg>\n";
  return svg;
}

std::string run_manifest_json(const std::string& command, uint64_t config_hash,
                              uint64_t seed,
                              const std::map<std::string, std::string>& artifacts) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = io::hex16(config_hash);
  j["seed"] = seed;
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [k, v] : artifacts) a[k] = v;
  j["artifacts"] = a;
  return j.dump(2) + "\n";
}

}  // namespace rdpo::eval
