#include "rdpo/config.hpp"

#include <algorithm>
#include <stdexcept>

#include "rdpo/bytes.hpp"

namespace rdpo::cfg {

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"seed", "7", "root seed for every stage (overridable with --seed)"},
      {"dynamics.count_per_kind", "800", "trajectories generated per world kind"},
      {"dynamics.frames", "16", "frames per trajectory"},
      {"dynamics.dt", "0.25", "seconds per frame"},
      {"dynamics.split", "0.1", "held-out fraction of each kind"},
      {"dynamics.gravity_projectile", "1", "projectile gravity, units/time^2"},
      {"dynamics.gravity_ball", "2", "bouncing-ball gravity, units/time^2"},
      {"dynamics.restitution", "0.85", "wall restitution, (0, 1]"},
      {"dynamics.box_size", "4", "bouncing-ball box width and height"},
      {"dynamics.spring_k", "4", "spring stiffness (unit mass)"},
      {"dynamics.spring_zeta", "0.1", "spring damping ratio, [0, 1)"},
      {"model.width", "128", "hidden width of the velocity network"},
      {"model.layers", "4", "residual blocks"},
      {"model.time_emb", "16", "sin/cos time feature size (even)"},
      {"model.steps", "50", "diffusion steps T"},
      {"train.steps", "8000", "base-training optimizer steps"},
      {"train.batch", "32", "base-training batch size"},
      {"train.lr", "0.001",
       "base-training learning rate (toy-scale default; large-scale flow "
       "trainers typically run nearer 1e-5)"},
      {"train.weight_decay", "0.0001", "decoupled weight decay"},
      {"train.eval_every", "100", "steps between held-out loss evaluations"},
      {"pairgen.s", "42", "reverse step(s) for gen-pairs, comma separated"},
      {"pairgen.k", "1", "candidate noisings per pair, 1..64"},
      {"pairgen.count", "2000",
       "preference pairs per generated set (desk-scale default; production-scale "
       "runs used 8k per stage)"},
      {"rdpo.beta", "1", "preference strength"},
      {"rdpo.lr", "0.0003", "preference-training learning rate"},
      {"rdpo.weight_decay", "0", "decoupled weight decay during fine-tuning"},
      {"rdpo.steps_per_iter", "2000", "optimizer steps per curriculum stage"},
      {"rdpo.batch", "32", "fine-tuning batch size (even)"},
      {"rdpo.schedule", "42,40,mix",
       "curriculum stages: reverse step per stage, or 'mix' of earlier stages"},
      {"rdpo.sft_interleave", "true", "alternate preference and flow-matching steps"},
      {"rdpo.sft_steps", "2000", "steps for the standalone train-sft arm"},
      {"eval.conditions", "300", "held-out conditions per evaluation"},
      {"eval.samples_per_condition", "4", "generations per condition"},
      {"eval.reward_draws", "8", "noise draws per implicit-reward margin"},
      {"audit.buckets", "20,40,50", "reverse steps audited by pair-audit"},
      {"audit.count_per_bucket", "300", "pairs per audit bucket"},
  };
  return specs;
}

namespace {

const KeySpec* find_spec(const std::string& key) {
  for (const KeySpec& s : key_specs()) {
    if (key == s.name) return &s;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Numbers are stored in to_chars form so "1e-3" and "0.001" share one hash.
std::string canonical_value(const std::string& key, const std::string& value) {
  if (key == "rdpo.schedule" || key == "pairgen.s" || key == "audit.buckets" ||
      key == "rdpo.sft_interleave") {
    return value;
  }
  return io::fmt_double(io::parse_double(value));
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const KeySpec& s : key_specs()) c.values_[s.name] = s.def;
  return c;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c = defaults();
  int lineno = 0;
  for (const std::string& raw : io::split(text, '\n')) {
    ++lineno;
    std::string line = raw;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_text(io::read_file(path));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_spec(key)) {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
  if (value.empty()) {
    throw std::runtime_error("config: empty value for '" + key + "'");
  }
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
  return it->second;
}

std::string RunConfig::canonical() const {
  // std::map keeps keys sorted already.
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k + "=" + canonical_value(k, v) + "\n";
  }
  return out;
}

uint64_t RunConfig::hash() const { return io::fnv1a64(canonical()); }

int64_t RunConfig::get_int(const std::string& key, int64_t lo, int64_t hi) const {
  const int64_t v = io::parse_i64(get(key));
  if (v < lo || v > hi) {
    throw std::runtime_error("config: '" + key + "' out of range [" +
                             std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return v;
}

double RunConfig::get_double(const std::string& key, double lo, double hi) const {
  const double v = io::parse_double(get(key));
  if (!(v >= lo && v <= hi)) {
    throw std::runtime_error("config: '" + key + "' out of range");
  }
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::runtime_error("config: '" + key + "' must be true or false");
}

uint64_t RunConfig::seed() const { return io::parse_u64(get("seed")); }

dyn::DatasetSpec RunConfig::dataset_spec() const {
  dyn::DatasetSpec spec;
  const int count = static_cast<int>(get_int("dynamics.count_per_kind", 1, 1000000));
  spec.count_per_kind.fill(count);
  spec.frames = static_cast<int>(get_int("dynamics.frames", 3, 4096));
  spec.dt = get_double("dynamics.dt", 1e-6, 10.0);
  spec.heldout_fraction = get_double("dynamics.split", 0.0, 0.9);
  spec.seed = seed();

  const double box = get_double("dynamics.box_size", 2.0, 100.0);
  dyn::World cv{dyn::WorldKind::ConstantVelocity, {}};
  dyn::World proj{dyn::WorldKind::Projectile, {}};
  proj.params.gravity = get_double("dynamics.gravity_projectile", 1e-3, 100.0);
  dyn::World ball{dyn::WorldKind::BouncingBall, {}};
  ball.params.gravity = get_double("dynamics.gravity_ball", 1e-3, 100.0);
  ball.params.restitution = get_double("dynamics.restitution", 1e-6, 1.0);
  ball.params.box_w = box;
  ball.params.box_h = box;
  dyn::World spring{dyn::WorldKind::SpringOscillator, {}};
  spring.params.spring_k = get_double("dynamics.spring_k", 1e-6, 1000.0);
  spring.params.spring_zeta = get_double("dynamics.spring_zeta", 0.0, 0.999);
  spec.worlds = {cv, proj, ball, spring};
  return spec;
}

flow::ModelShape RunConfig::model_shape() const {
  flow::ModelShape shape;
  shape.latent = static_cast<int>(get_int("dynamics.frames", 3, 4096)) * dyn::kStateDim;
  shape.cond = dyn::kConditionDim;
  shape.emb = static_cast<int>(get_int("model.time_emb", 2, 512));
  shape.width = static_cast<int>(get_int("model.width", 1, 8192));
  shape.layers = static_cast<int>(get_int("model.layers", 0, 64));
  shape.validate();
  return shape;
}

int RunConfig::total_steps() const {
  return static_cast<int>(get_int("model.steps", 1, 100000));
}

flow::TrainOptions RunConfig::train_options() const {
  flow::TrainOptions opt;
  opt.steps = static_cast<int>(get_int("train.steps", 0, 100000000));
  opt.batch = static_cast<int>(get_int("train.batch", 1, 100000));
  opt.lr = get_double("train.lr", 0.0, 10.0);
  opt.weight_decay = get_double("train.weight_decay", 0.0, 10.0);
  opt.eval_every = static_cast<int>(get_int("train.eval_every", 1, 100000000));
  opt.seed = seed();
  return opt;
}

dpo::SftOptions RunConfig::sft_options() const {
  dpo::SftOptions opt;
  opt.steps = static_cast<int>(get_int("rdpo.sft_steps", 0, 100000000));
  opt.batch = static_cast<int>(get_int("rdpo.batch", 1, 100000));
  opt.lr = get_double("rdpo.lr", 0.0, 10.0);
  opt.weight_decay = get_double("rdpo.weight_decay", 0.0, 10.0);
  opt.eval_every = static_cast<int>(get_int("train.eval_every", 1, 100000000));
  opt.seed = seed();
  return opt;
}

dpo::ProgressiveOptions RunConfig::progressive_options() const {
  dpo::ProgressiveOptions opt;
  opt.beta = get_double("rdpo.beta", 1e-12, 1e6);
  opt.lr = get_double("rdpo.lr", 0.0, 10.0);
  opt.weight_decay = get_double("rdpo.weight_decay", 0.0, 10.0);
  opt.steps_per_iter = static_cast<int>(get_int("rdpo.steps_per_iter", 0, 100000000));
  opt.batch = static_cast<int>(get_int("rdpo.batch", 2, 100000));
  opt.sft_interleave = get_bool("rdpo.sft_interleave");
  opt.schedule = dpo::parse_schedule(get("rdpo.schedule"), total_steps());
  opt.pair_count = pairgen_count();
  opt.k = pairgen_k();
  opt.total_steps = total_steps();
  opt.reward_draws = reward_draws();
  opt.seed = seed();
  return opt;
}

std::vector<int> RunConfig::pairgen_steps() const {
  std::vector<int> out;
  for (const std::string& tok : io::split(get("pairgen.s"), ',')) {
    const int s = static_cast<int>(io::parse_i64(tok));
    if (s < 1 || s > total_steps()) {
      throw std::runtime_error("config: 'pairgen.s' outside [1, model.steps]");
    }
    out.push_back(s);
  }
  return out;
}

int RunConfig::pairgen_k() const {
  return static_cast<int>(get_int("pairgen.k", 1, 64));
}

int RunConfig::pairgen_count() const {
  return static_cast<int>(get_int("pairgen.count", 1, 100000000));
}

std::vector<int> RunConfig::audit_buckets() const {
  std::vector<int> out;
  for (const std::string& tok : io::split(get("audit.buckets"), ',')) {
    const int s = static_cast<int>(io::parse_i64(tok));
    if (s < 1 || s > total_steps()) {
      throw std::runtime_error("config: 'audit.buckets' outside [1, model.steps]");
    }
    out.push_back(s);
  }
  return out;
}

int RunConfig::audit_count_per_bucket() const {
  return static_cast<int>(get_int("audit.count_per_bucket", 1, 100000000));
}

int RunConfig::eval_conditions() const {
  return static_cast<int>(get_int("eval.conditions", 1, 100000000));
}

int RunConfig::eval_samples() const {
  return static_cast<int>(get_int("eval.samples_per_condition", 1, 100000));
}

int RunConfig::reward_draws() const {
  return static_cast<int>(get_int("eval.reward_draws", 1, 100000));
}

void RunConfig::validate() const {
  seed();
  dataset_spec();
  model_shape();
  train_options();
  sft_options();
  progressive_options();
  pairgen_steps();
  audit_buckets();
  audit_count_per_bucket();
  eval_conditions();
  eval_samples();
}

}  // namespace rdpo::cfg
