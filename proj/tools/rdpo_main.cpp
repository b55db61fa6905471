// Command-line front end for the trajectory preference-optimization pipeline.
// Every subcommand is deterministic given (config, seed) and writes its
// outputs under <out>/<config-hash>-s<seed>/.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rdpo/bytes.hpp"
#include "rdpo/config.hpp"
#include "rdpo/parallel.hpp"
#include "rdpo/pipeline.hpp"

namespace {

using rdpo::cfg::RunConfig;

struct Common {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_root = "runs";
  int jobs = rdpo::default_jobs();
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "configuration file (key = value lines)");
  cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
  cmd->add_option("--out", c.out_root, "output root directory")->capture_default_str();
  cmd->add_option("--jobs", c.jobs, "worker threads; results are identical for any value")
      ->capture_default_str();
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
}

RunConfig load_config(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig::defaults()
                                           : RunConfig::from_file(c.config_path);
  if (c.seed) config.set("seed", std::to_string(*c.seed));
  config.validate();
  return config;
}

std::string config_key_help() {
  std::string out = "Configuration keys (key = value; defaults shown):\n";
  for (const rdpo::cfg::KeySpec& s : rdpo::cfg::key_specs()) {
    out += "  ";
    out += s.name;
    out += " = ";
    out += s.def;
    out += "\n      ";
    out += s.doc;
    out += "\n";
  }
  return out;
}

void print_kv(const char* key, const std::string& value) {
  std::printf("%s=%s\n", key, value.c_str());
}

void print_stage(const rdpo::pipeline::StageOut& s) {
  print_kv("path", s.path);
  print_kv("hash", rdpo::io::hex16(s.hash));
  print_kv("reused", s.reused ? "1" : "0");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotation-free preference optimization for a rectified-flow "
               "trajectory generator, with a physics oracle for evaluation"};
  app.require_subcommand(1);
  app.footer(config_key_help());

  Common c_gen, c_base, c_pairs, c_audit, c_rdpo, c_sft, c_eval, c_cmp, c_abl, c_repro;

  auto* gen = app.add_subcommand("gen-data", "simulate the trajectory dataset");
  add_common(gen, c_gen);

  auto* base = app.add_subcommand("train-base", "train the base flow model");
  add_common(base, c_base);

  auto* gp = app.add_subcommand("gen-pairs", "build a preference-pair dataset");
  add_common(gp, c_pairs);
  std::string gp_ckpt, gp_s, gp_out_file;
  int gp_k = -1, gp_count = -1;
  gp->add_option("--ckpt", gp_ckpt, "checkpoint to sample with (default: base)");
  gp->add_option("--s", gp_s, "reverse step(s), comma separated (default: pairgen.s)");
  gp->add_option("--k", gp_k, "candidates per pair (default: pairgen.k)");
  gp->add_option("--count", gp_count, "pair count (default: pairgen.count)");
  gp->add_option("--pairs-out", gp_out_file, "output file (default: pairs_<s>.rdpopr)");

  auto* audit = app.add_subcommand("pair-audit", "oracle accuracy of stored pairs per reverse step");
  add_common(audit, c_audit);
  std::string audit_pairs_path;
  audit->add_option("--pairs", audit_pairs_path, "pair file (default: audit_pairs.rdpopr)");

  auto* rt = app.add_subcommand("train-rdpo", "progressive preference training");
  add_common(rt, c_rdpo);
  bool rt_no_sft = false, rt_sft = false;
  std::optional<int> rt_iters;
  std::string rt_schedule, rt_beta;
  rt->add_flag("--no-sft", rt_no_sft, "preference steps only (no interleaved flow matching)");
  rt->add_flag("--sft", rt_sft, "interleave flow-matching steps (default from config)");
  rt->add_option("--iters", rt_iters, "run only the first N schedule stages");
  rt->add_option("--schedule", rt_schedule, "override rdpo.schedule");
  rt->add_option("--beta", rt_beta, "override rdpo.beta");

  auto* st = app.add_subcommand("train-sft", "flow-matching fine-tuning arm");
  add_common(st, c_sft);

  auto* ev = app.add_subcommand("eval", "physics-residual report for a checkpoint");
  add_common(ev, c_eval);
  std::string ev_ckpt, ev_name = "base";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint (default: base)");
  ev->add_option("--name", ev_name, "report name suffix")->capture_default_str();

  auto* cp = app.add_subcommand("compare", "paired win rate of one checkpoint over another");
  add_common(cp, c_cmp);
  std::string cp_a, cp_b;
  cp->add_option("--ckpt-a", cp_a, "first checkpoint")->required();
  cp->add_option("--ckpt-b", cp_b, "second checkpoint")->required();

  auto* ab = app.add_subcommand("ablation", "table over all checkpoints in the run directory");
  add_common(ab, c_abl);

  auto* rp = app.add_subcommand("repro", "full pipeline from one seed, ending in the ablation table");
  add_common(rp, c_repro);

  CLI11_PARSE(app, argc, argv);

  try {
    using namespace rdpo;
    if (gen->parsed()) {
      const RunConfig config = load_config(c_gen);
      const auto paths = pipeline::run_paths(c_gen.out_root, config);
      const auto out = pipeline::gen_data(config, paths, c_gen.force);
      print_kv("config", io::hex16(config.hash()));
      print_stage(out);
    } else if (base->parsed()) {
      const RunConfig config = load_config(c_base);
      const auto paths = pipeline::run_paths(c_base.out_root, config);
      const auto out = pipeline::train_base_stage(config, paths, c_base.jobs, c_base.force);
      print_stage(out.ckpt);
      if (!out.ckpt.reused) {
        print_kv("heldout_loss_initial", io::fmt_double(out.heldout_initial));
        print_kv("heldout_loss_final", io::fmt_double(out.heldout_final));
      }
    } else if (gp->parsed()) {
      RunConfig config = load_config(c_pairs);
      if (!gp_s.empty()) config.set("pairgen.s", gp_s);
      if (gp_k >= 0) config.set("pairgen.k", std::to_string(gp_k));
      if (gp_count >= 0) config.set("pairgen.count", std::to_string(gp_count));
      config.validate();
      const auto paths = pipeline::run_paths(c_pairs.out_root, config);
      const std::string ckpt = gp_ckpt.empty() ? paths.base_ckpt() : gp_ckpt;
      std::string tag = config.get("pairgen.s");
      for (char& ch : tag) {
        if (ch == ',') ch = '_';
      }
      const std::string out_path =
          gp_out_file.empty() ? paths.pairs_file("s" + tag) : gp_out_file;
      const auto out = pipeline::gen_pairs_stage(
          config, paths, ckpt, config.pairgen_steps(), config.pairgen_k(),
          config.pairgen_count(), out_path, c_pairs.jobs, c_pairs.force);
      print_stage(out);
    } else if (audit->parsed()) {
      const RunConfig config = load_config(c_audit);
      const auto paths = pipeline::run_paths(c_audit.out_root, config);
      const std::string pairs_path =
          audit_pairs_path.empty() ? paths.audit_pairs() : audit_pairs_path;
      const auto out = pipeline::audit_stage(config, paths, pairs_path, c_audit.force);
      print_stage(out);
    } else if (rt->parsed()) {
      RunConfig config = load_config(c_rdpo);
      if (!rt_schedule.empty()) config.set("rdpo.schedule", rt_schedule);
      if (!rt_beta.empty()) config.set("rdpo.beta", rt_beta);
      config.validate();
      if (rt_no_sft && rt_sft) throw std::runtime_error("--sft conflicts with --no-sft");
      bool interleave = config.progressive_options().sft_interleave;
      if (rt_no_sft) interleave = false;
      if (rt_sft) interleave = true;
      const auto paths = pipeline::run_paths(c_rdpo.out_root, config);
      const auto outs = pipeline::train_rdpo_stage(config, paths, interleave, rt_iters,
                                                   c_rdpo.jobs, c_rdpo.force);
      for (const auto& out : outs) print_stage(out);
    } else if (st->parsed()) {
      const RunConfig config = load_config(c_sft);
      const auto paths = pipeline::run_paths(c_sft.out_root, config);
      const auto out = pipeline::train_sft_stage(config, paths, c_sft.jobs, c_sft.force);
      print_stage(out.ckpt);
    } else if (ev->parsed()) {
      const RunConfig config = load_config(c_eval);
      const auto paths = pipeline::run_paths(c_eval.out_root, config);
      const std::string ckpt = ev_ckpt.empty() ? paths.base_ckpt() : ev_ckpt;
      const auto out = pipeline::eval_stage(config, paths, ckpt, ev_name, c_eval.jobs,
                                            c_eval.force);
      print_stage(out);
    } else if (cp->parsed()) {
      const RunConfig config = load_config(c_cmp);
      const auto paths = pipeline::run_paths(c_cmp.out_root, config);
      const auto r = pipeline::compare_stage(config, paths, cp_a, cp_b, c_cmp.jobs);
      print_kv("win_rate", io::fmt_double(r.win_rate));
      print_kv("ci95", io::fmt_double(r.ci95));
      print_kv("n", io::fmt_int(r.n));
      print_kv("ties", io::fmt_int(r.ties));
    } else if (ab->parsed()) {
      const RunConfig config = load_config(c_abl);
      const auto paths = pipeline::run_paths(c_abl.out_root, config);
      const auto out = pipeline::ablation_stage(config, paths, c_abl.jobs, c_abl.force);
      print_stage(out);
    } else if (rp->parsed()) {
      const RunConfig config = load_config(c_repro);
      const auto out = pipeline::repro(config, c_repro.out_root, c_repro.jobs, c_repro.force);
      print_kv("run_dir", out.paths.dir);
      print_kv("audit", io::hex16(out.audit.hash));
      print_kv("ablation", out.ablation.path);
      print_kv("ablation_hash", io::hex16(out.ablation.hash));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rdpo: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
