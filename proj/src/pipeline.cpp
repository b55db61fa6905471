#include "rdpo/pipeline.hpp"

#include <filesystem>
#include <stdexcept>

#include "rdpo/bytes.hpp"
#include "rdpo/dpo.hpp"

namespace rdpo::pipeline {

namespace {

std::string arm_name(bool sft) { return sft ? "rdpo_w_sft" : "rdpo_wo_sft"; }

flow::ModelParams load_params(const std::string& path, const cfg::RunConfig& config) {
  auto [params, meta] = flow::read_checkpoint(path);
  if (meta.frames != config.dataset_spec().frames || meta.dim != dyn::kStateDim ||
      meta.total_steps != config.total_steps()) {
    throw std::runtime_error("checkpoint '" + path + "' does not match the config");
  }
  return params;
}

uint64_t file_hash(const std::string& path) {
  return io::fnv1a64(io::read_file(path));
}

}  // namespace

std::string RunPaths::rdpo_ckpt(bool sft, int iter) const {
  return dir + "/" + arm_name(sft) + "_iter" + std::to_string(iter) + ".ckpt";
}
std::string RunPaths::rdpo_pairs(bool sft, int iter) const {
  return dir + "/" + arm_name(sft) + "_iter" + std::to_string(iter) + "_pairs.rdpopr";
}
std::string RunPaths::rdpo_report(bool sft, int iter) const {
  return dir + "/" + arm_name(sft) + "_iter" + std::to_string(iter) + "_report.csv";
}
std::string RunPaths::pairs_file(const std::string& tag) const {
  return dir + "/pairs_" + tag + ".rdpopr";
}

RunPaths run_paths(const std::string& out_root, const cfg::RunConfig& config) {
  RunPaths p;
  p.dir = out_root + "/" + io::hex16(config.hash()) + "-s" + std::to_string(config.seed());
  return p;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + dir + "': " + ec.message());
}

StageOut write_artifact(const std::string& path, const std::string& content, bool force) {
  StageOut out;
  out.path = path;
  out.hash = io::fnv1a64(content);
  if (!force && io::file_exists(path)) {
    const std::string existing = io::read_file(path);
    if (existing == content) {
      out.reused = true;
      return out;
    }
    throw std::runtime_error("output '" + path +
                             "' exists with different content (use --force to overwrite)");
  }
  io::write_file(path, content);
  return out;
}

StageOut gen_data(const cfg::RunConfig& config, const RunPaths& paths, bool force) {
  ensure_dir(paths.dir);
  const dyn::Dataset ds = dyn::make_dataset(config.dataset_spec());
  return write_artifact(paths.dataset(), dyn::serialize_dataset(ds), force);
}

namespace {

std::string curve_csv(const std::vector<flow::CurveRow>& curve) {
  std::string out = "step,train_loss,heldout_loss\n";
  for (const flow::CurveRow& r : curve) {
    out += io::fmt_int(r.step) + "," + io::fmt_double(r.train_loss) + "," +
           io::fmt_double(r.heldout_loss) + "\n";
  }
  return out;
}

}  // namespace

TrainOut train_base_stage(const cfg::RunConfig& config, const RunPaths& paths,
                          int jobs, bool force) {
  ensure_dir(paths.dir);
  const flow::CheckpointMeta meta{config.dataset_spec().frames, dyn::kStateDim,
                                  config.total_steps()};
  TrainOut out;
  if (!force && io::file_exists(paths.base_ckpt())) {
    out.ckpt = StageOut{paths.base_ckpt(), file_hash(paths.base_ckpt()), true};
    return out;
  }
  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());
  flow::TrainOptions opt = config.train_options();
  opt.jobs = jobs;
  std::vector<flow::CurveRow> curve;
  const flow::ModelParams params = flow::train_base(ds, config.model_shape(), opt, &curve);
  out.ckpt = write_artifact(paths.base_ckpt(), flow::serialize_checkpoint(params, meta), force);
  write_artifact(paths.base_curve(), curve_csv(curve), true);
  if (!curve.empty()) {
    out.heldout_initial = curve.front().heldout_loss;
    out.heldout_final = curve.back().heldout_loss;
  }
  return out;
}

TrainOut train_sft_stage(const cfg::RunConfig& config, const RunPaths& paths,
                         int jobs, bool force) {
  ensure_dir(paths.dir);
  const flow::CheckpointMeta meta{config.dataset_spec().frames, dyn::kStateDim,
                                  config.total_steps()};
  TrainOut out;
  if (!force && io::file_exists(paths.sft_ckpt())) {
    out.ckpt = StageOut{paths.sft_ckpt(), file_hash(paths.sft_ckpt()), true};
    return out;
  }
  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());
  const flow::ModelParams base = load_params(paths.base_ckpt(), config);
  dpo::SftOptions opt = config.sft_options();
  opt.jobs = jobs;
  std::vector<flow::CurveRow> curve;
  const flow::ModelParams params = dpo::sft_train(base, ds, opt, &curve);
  out.ckpt = write_artifact(paths.sft_ckpt(), flow::serialize_checkpoint(params, meta), force);
  write_artifact(paths.sft_curve(), curve_csv(curve), true);
  if (!curve.empty()) {
    out.heldout_initial = curve.front().heldout_loss;
    out.heldout_final = curve.back().heldout_loss;
  }
  return out;
}

StageOut gen_pairs_stage(const cfg::RunConfig& config, const RunPaths& paths,
                         const std::string& ckpt_path, const std::vector<int>& s_values,
                         int k, int count, const std::string& out_path, int jobs,
                         bool force) {
  ensure_dir(paths.dir);
  if (!force && io::file_exists(out_path)) {
    return StageOut{out_path, file_hash(out_path), true};
  }
  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());
  const flow::ModelParams params = load_params(ckpt_path, config);
  const pairs::PairDataset pd = pairs::build_pair_dataset(
      params, file_hash(ckpt_path), ds, s_values, config.total_steps(), k, count,
      config.seed(), jobs);
  return write_artifact(out_path, pairs::serialize_pairs(pd), force);
}

StageOut audit_stage(const cfg::RunConfig& config, const RunPaths& paths,
                     const std::string& pairs_path, bool force) {
  (void)config;
  ensure_dir(paths.dir);
  const pairs::PairDataset pd = pairs::read_pairs(pairs_path);
  const std::vector<pairs::AuditRow> rows = pairs::pair_audit(pd);
  return write_artifact(paths.audit_csv_path(), pairs::audit_csv(rows), force);
}

namespace {

// Persists pair sets, per-stage checkpoints and report rows as training runs.
class FileSink : public dpo::ProgressiveSink {
 public:
  FileSink(const cfg::RunConfig& config, const RunPaths& paths, bool sft,
           const dpo::ProgressiveOptions& opt, bool force)
      : config_(config), paths_(paths), sft_(sft), opt_(opt), force_(force) {
    csv_ = dpo::report_csv_header(opt_);
  }

  void on_pairs(int iter, const pairs::PairDataset& pd) override {
    write_artifact(paths_.rdpo_pairs(sft_, iter), pairs::serialize_pairs(pd), force_);
  }

  void on_checkpoint(int iter, const flow::ModelParams& params) override {
    const flow::CheckpointMeta meta{config_.dataset_spec().frames, dyn::kStateDim,
                                    config_.total_steps()};
    StageOut out = write_artifact(paths_.rdpo_ckpt(sft_, iter),
                                  flow::serialize_checkpoint(params, meta), force_);
    ckpts.push_back(out);
    write_artifact(paths_.rdpo_report(sft_, iter), csv_, true);
    csv_ = dpo::report_csv_header(opt_);
  }

  void on_report(const dpo::ReportRow& row) override {
    csv_ += dpo::report_csv_row(row);
  }

  std::vector<StageOut> ckpts;

 private:
  const cfg::RunConfig& config_;
  const RunPaths& paths_;
  bool sft_;
  dpo::ProgressiveOptions opt_;
  bool force_;
  std::string csv_;
};

}  // namespace

std::vector<StageOut> train_rdpo_stage(const cfg::RunConfig& config,
                                       const RunPaths& paths, bool sft_interleave,
                                       std::optional<int> iters_override, int jobs,
                                       bool force) {
  ensure_dir(paths.dir);
  dpo::ProgressiveOptions opt = config.progressive_options();
  opt.sft_interleave = sft_interleave;
  opt.jobs = jobs;
  if (iters_override) {
    if (*iters_override < 1 ||
        *iters_override > static_cast<int>(opt.schedule.size())) {
      throw std::runtime_error("--iters outside the configured schedule length");
    }
    opt.schedule.resize(*iters_override);
  }

  const int iters = static_cast<int>(opt.schedule.size());
  if (!force) {
    bool all = true;
    for (int i = 1; i <= iters; ++i) all = all && io::file_exists(paths.rdpo_ckpt(sft_interleave, i));
    if (all) {
      std::vector<StageOut> out;
      for (int i = 1; i <= iters; ++i) {
        const std::string p = paths.rdpo_ckpt(sft_interleave, i);
        out.push_back(StageOut{p, file_hash(p), true});
      }
      return out;
    }
  }

  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());
  const flow::ModelParams base = load_params(paths.base_ckpt(), config);
  FileSink sink(config, paths, sft_interleave, opt, force);
  dpo::progressive_train(base, ds, opt, &sink);
  return sink.ckpts;
}

StageOut eval_stage(const cfg::RunConfig& config, const RunPaths& paths,
                    const std::string& ckpt_path, const std::string& name, int jobs,
                    bool force) {
  ensure_dir(paths.dir);
  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());
  const flow::ModelParams params = load_params(ckpt_path, config);
  eval::EvalReport report = eval::evaluate_model(
      params, file_hash(ckpt_path), ds, config.eval_conditions(), config.eval_samples(),
      config.total_steps(), config.hash(), config.seed(), jobs);
  if (io::file_exists(paths.audit_csv_path())) {
    report.audit_reference = io::hex16(file_hash(paths.audit_csv_path()));
  }
  return write_artifact(paths.eval_csv(name), eval::report_csv(report), force);
}

eval::CompareResult compare_stage(const cfg::RunConfig& config, const RunPaths& paths,
                                  const std::string& ckpt_a, const std::string& ckpt_b,
                                  int jobs) {
  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());
  const flow::ModelParams a = load_params(ckpt_a, config);
  const flow::ModelParams b = load_params(ckpt_b, config);
  return eval::compare_models(a, b, ds, config.eval_conditions(), config.total_steps(),
                              config.seed(), jobs);
}

StageOut ablation_stage(const cfg::RunConfig& config, const RunPaths& paths, int jobs,
                        bool force) {
  ensure_dir(paths.dir);
  const dyn::Dataset ds = dyn::read_dataset(paths.dataset());

  std::map<std::string, eval::NamedCheckpoint> checkpoints;
  auto add = [&](const std::string& name, const std::string& path) {
    if (!io::file_exists(path)) return;
    eval::NamedCheckpoint nc;
    nc.params = load_params(path, config);
    nc.hash = file_hash(path);
    checkpoints.emplace(name, std::move(nc));
  };
  add("base", paths.base_ckpt());
  add("sft", paths.sft_ckpt());
  add("rdpo_wo_sft", paths.rdpo_ckpt(false, 1));
  add("rdpo_w_sft", paths.rdpo_ckpt(true, 1));
  add("iter1", paths.rdpo_ckpt(true, 1));
  add("iter2", paths.rdpo_ckpt(true, 2));
  add("iter3", paths.rdpo_ckpt(true, 3));

  const std::vector<eval::AblationRow> rows =
      eval::ablation_table(checkpoints, ds, config.eval_conditions(),
                           config.eval_samples(), config.total_steps(), config.seed(),
                           jobs);
  return write_artifact(paths.ablation_csv_path(),
                        eval::ablation_csv(rows, config.hash(), config.seed(),
                                           config.eval_conditions(), config.eval_samples()),
                        force);
}

ReproOut repro(const cfg::RunConfig& config, const std::string& out_root, int jobs,
               bool force) {
  ReproOut out;
  out.paths = run_paths(out_root, config);
  ensure_dir(out.paths.dir);

  gen_data(config, out.paths, force);
  train_base_stage(config, out.paths, jobs, force);
  train_sft_stage(config, out.paths, jobs, force);
  train_rdpo_stage(config, out.paths, false, 1, jobs, force);
  train_rdpo_stage(config, out.paths, true, std::nullopt, jobs, force);

  // Audit pairs come from the base model across the configured buckets.
  const std::vector<int> buckets = config.audit_buckets();
  const int audit_count = config.audit_count_per_bucket() * static_cast<int>(buckets.size());
  gen_pairs_stage(config, out.paths, out.paths.base_ckpt(), buckets,
                  config.pairgen_k(), audit_count, out.paths.audit_pairs(), jobs, force);
  out.audit = audit_stage(config, out.paths, out.paths.audit_pairs(), force);

  out.ablation = ablation_stage(config, out.paths, jobs, force);

  // Chart: audit trend plus median residual over training stages.
  const std::vector<pairs::AuditRow> audit_rows =
      pairs::pair_audit(pairs::read_pairs(out.paths.audit_pairs()));
  std::vector<std::pair<std::string, double>> medians;
  {
    const std::string csv = io::read_file(out.paths.ablation_csv_path());
    const std::vector<std::string> lines = io::split(csv, '\n');
    for (const std::string& name : {std::string("base"), std::string("iter1"),
                                    std::string("iter2"), std::string("iter3")}) {
      for (const std::string& line : lines) {
        const std::vector<std::string> cells = io::split(line, ',');
        if (cells.size() >= 3 && cells[0] == name && cells[1] == "1") {
          medians.emplace_back(name, io::parse_double(cells[2]));
        }
      }
    }
  }
  write_artifact(out.paths.chart(), eval::svg_chart(audit_rows, medians), force);

  std::map<std::string, std::string> artifacts;
  for (const std::string& name :
       {std::string("dataset.rdpods"), std::string("base.ckpt"), std::string("sft.ckpt"),
        std::string("rdpo_wo_sft_iter1.ckpt"), std::string("rdpo_w_sft_iter1.ckpt"),
        std::string("rdpo_w_sft_iter2.ckpt"), std::string("rdpo_w_sft_iter3.ckpt"),
        std::string("audit_pairs.rdpopr"), std::string("audit.csv"),
        std::string("ablation.csv"), std::string("chart.svg")}) {
    const std::string path = out.paths.dir + "/" + name;
    if (io::file_exists(path)) artifacts[name] = io::hex16(file_hash(path));
  }
  write_artifact(out.paths.manifest(),
                 eval::run_manifest_json("repro", config.hash(), config.seed(), artifacts),
                 force);
  return out;
}

}  // namespace rdpo::pipeline
