#include "rdpo/flow_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rdpo/bytes.hpp"
#include "rdpo/kernels.hpp"

namespace rdpo::flow {

void ModelShape::validate() const {
  if (latent < 1 || cond < 1 || width < 1 || layers < 0) {
    throw std::invalid_argument("bad model shape");
  }
  if (emb < 2 || emb % 2 != 0) {
    throw std::invalid_argument("time feature size must be even and >= 2");
  }
}

int64_t ModelShape::param_count() const {
  const int64_t in = input_dim();
  return width * in + width +
         static_cast<int64_t>(layers) * (static_cast<int64_t>(width) * width + width) +
         static_cast<int64_t>(latent) * width + latent;
}

std::vector<TensorRef> tensor_table(const ModelShape& s) {
  std::vector<TensorRef> t;
  int64_t off = 0;
  auto add = [&](std::string name, int rows, int cols) {
    t.push_back(TensorRef{std::move(name), off, rows, cols});
    off += static_cast<int64_t>(rows) * cols;
  };
  add("w_in", s.width, s.input_dim());
  add("b_in", s.width, 1);
  for (int l = 0; l < s.layers; ++l) {
    add("block" + std::to_string(l) + ".w", s.width, s.width);
    add("block" + std::to_string(l) + ".b", s.width, 1);
  }
  add("w_out", s.latent, s.width);
  add("b_out", s.latent, 1);
  return t;
}

int64_t ModelParams::off_b_in() const {
  return static_cast<int64_t>(shape.width) * shape.input_dim();
}
int64_t ModelParams::off_block_w(int l) const {
  return off_b_in() + shape.width +
         static_cast<int64_t>(l) * (static_cast<int64_t>(shape.width) * shape.width + shape.width);
}
int64_t ModelParams::off_block_b(int l) const {
  return off_block_w(l) + static_cast<int64_t>(shape.width) * shape.width;
}
int64_t ModelParams::off_w_out() const {
  return off_block_w(shape.layers);
}
int64_t ModelParams::off_b_out() const {
  return off_w_out() + static_cast<int64_t>(shape.latent) * shape.width;
}

ModelParams ModelParams::zeros(const ModelShape& shape) {
  shape.validate();
  ModelParams p;
  p.shape = shape;
  p.data.assign(shape.param_count(), 0.0f);
  return p;
}

ModelParams ModelParams::random_init(const ModelShape& shape, Rng rng) {
  ModelParams p = zeros(shape);
  auto fill = [&](int64_t off, int rows, int cols) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int64_t i = 0; i < static_cast<int64_t>(rows) * cols; ++i) {
      p.data[off + i] = static_cast<float>(rng.gaussian() * scale);
    }
  };
  fill(p.off_w_in(), shape.width, shape.input_dim());
  for (int l = 0; l < shape.layers; ++l) {
    fill(p.off_block_w(l), shape.width, shape.width);
  }
  // w_out, b_out and all biases stay zero.
  return p;
}

void time_features(double t, int emb, std::span<double> out) {
  const int half = emb / 2;
  for (int i = 0; i < half; ++i) {
    const double expo = (half > 1) ? static_cast<double>(i) / (half - 1) : 0.0;
    const double a = t * std::pow(1000.0, expo);
    out[2 * i] = std::sin(a);
    out[2 * i + 1] = std::cos(a);
  }
}

void Activations::resize(const ModelShape& s) {
  input.resize(s.input_dim());
  h.resize(static_cast<size_t>(s.layers + 1) * s.width);
  u.resize(static_cast<size_t>(s.layers) * s.width);
  out.resize(s.latent);
  gh.resize(s.width);
  gz.resize(s.width);
}

namespace {

// y = W x + b with float weights, double accumulation.
inline void matvec(const float* w, const float* b, const double* x, int rows,
                   int cols, double* y) {
  for (int r = 0; r < rows; ++r) {
    double acc = b ? static_cast<double>(b[r]) : 0.0;
    const float* row = w + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc += static_cast<double>(row[c]) * x[c];
    y[r] = acc;
  }
}

// y += W^T g
inline void matvec_t_add(const float* w, const double* g, int rows, int cols,
                         double* y) {
  for (int r = 0; r < rows; ++r) {
    const double gr = g[r];
    const float* row = w + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) y[c] += static_cast<double>(row[c]) * gr;
  }
}

// G += g x^T
inline void outer_add(double* gw, const double* g, const double* x, int rows,
                      int cols) {
  for (int r = 0; r < rows; ++r) {
    const double gr = g[r];
    double* row = gw + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

}  // namespace

void velocity(const ModelParams& p, std::span<const double> x, double t,
              std::span<const double> cond, Activations& a) {
  const ModelShape& s = p.shape;
  if (x.size() != static_cast<size_t>(s.latent) ||
      cond.size() != static_cast<size_t>(s.cond)) {
    throw std::invalid_argument("velocity input shape mismatch");
  }
  a.resize(s);

  std::copy(x.begin(), x.end(), a.input.begin());
  time_features(t, s.emb, std::span<double>(a.input).subspan(s.latent, s.emb));
  std::copy(cond.begin(), cond.end(), a.input.begin() + s.latent + s.emb);

  double* h0 = a.h.data();
  matvec(p.data.data() + p.off_w_in(), p.data.data() + p.off_b_in(),
         a.input.data(), s.width, s.input_dim(), h0);
  for (int i = 0; i < s.width; ++i) h0[i] = std::tanh(h0[i]);

  for (int l = 0; l < s.layers; ++l) {
    const double* hl = a.h.data() + static_cast<size_t>(l) * s.width;
    double* ul = a.u.data() + static_cast<size_t>(l) * s.width;
    double* hn = a.h.data() + static_cast<size_t>(l + 1) * s.width;
    matvec(p.data.data() + p.off_block_w(l), p.data.data() + p.off_block_b(l),
           hl, s.width, s.width, ul);
    for (int i = 0; i < s.width; ++i) {
      ul[i] = std::tanh(ul[i]);
      hn[i] = hl[i] + ul[i];
    }
  }

  matvec(p.data.data() + p.off_w_out(), p.data.data() + p.off_b_out(),
         a.h.data() + static_cast<size_t>(s.layers) * s.width, s.latent, s.width,
         a.out.data());
}

void velocity_vjp(const ModelParams& p, const Activations& a,
                  std::span<const double> g_out, std::span<double> grad,
                  std::span<double> g_x, Activations& scratch) {
  const ModelShape& s = p.shape;
  if (grad.size() != static_cast<size_t>(s.param_count())) {
    throw std::invalid_argument("gradient buffer shape mismatch");
  }
  scratch.resize(s);
  double* gh = scratch.gh.data();
  double* gz = scratch.gz.data();

  const double* h_last = a.h.data() + static_cast<size_t>(s.layers) * s.width;
  outer_add(grad.data() + p.off_w_out(), g_out.data(), h_last, s.latent, s.width);
  for (int i = 0; i < s.latent; ++i) grad[p.off_b_out() + i] += g_out[i];
  std::fill(gh, gh + s.width, 0.0);
  matvec_t_add(p.data.data() + p.off_w_out(), g_out.data(), s.latent, s.width, gh);

  for (int l = s.layers - 1; l >= 0; --l) {
    const double* hl = a.h.data() + static_cast<size_t>(l) * s.width;
    const double* ul = a.u.data() + static_cast<size_t>(l) * s.width;
    for (int i = 0; i < s.width; ++i) gz[i] = gh[i] * (1.0 - ul[i] * ul[i]);
    outer_add(grad.data() + p.off_block_w(l), gz, hl, s.width, s.width);
    for (int i = 0; i < s.width; ++i) grad[p.off_block_b(l) + i] += gz[i];
    // gh already carries the residual path; add the block path.
    matvec_t_add(p.data.data() + p.off_block_w(l), gz, s.width, s.width, gh);
  }

  const double* h0 = a.h.data();
  for (int i = 0; i < s.width; ++i) gz[i] = gh[i] * (1.0 - h0[i] * h0[i]);
  outer_add(grad.data() + p.off_w_in(), gz, a.input.data(), s.width, s.input_dim());
  for (int i = 0; i < s.width; ++i) grad[p.off_b_in() + i] += gz[i];

  if (!g_x.empty()) {
    if (g_x.size() != static_cast<size_t>(s.latent)) {
      throw std::invalid_argument("latent gradient buffer shape mismatch");
    }
    std::vector<double> g_in(s.input_dim(), 0.0);
    matvec_t_add(p.data.data() + p.off_w_in(), gz, s.width, s.input_dim(),
                 g_in.data());
    std::copy(g_in.begin(), g_in.begin() + s.latent, g_x.begin());
  }
}

NoisySample noising_with_eps(std::span<const double> x0, int s, int total_steps,
                             std::vector<double> eps, uint32_t source_id) {
  if (s < 0 || s > total_steps) {
    throw std::invalid_argument("noising step out of range");
  }
  if (eps.size() != x0.size()) {
    throw std::invalid_argument("noise vector length mismatch");
  }
  NoisySample ns;
  ns.step = s;
  ns.total_steps = total_steps;
  ns.t = static_cast<double>(s) / total_steps;
  ns.eps = std::move(eps);
  ns.x.resize(x0.size());
  const double t = ns.t;
  for (size_t i = 0; i < x0.size(); ++i) {
    ns.x[i] = (1.0 - t) * x0[i] + t * ns.eps[i];
  }
  ns.source_id = source_id;
  return ns;
}

NoisySample noising(std::span<const double> x0, int s, int total_steps, Rng& rng,
                    uint32_t source_id) {
  std::vector<double> eps(x0.size());
  for (double& e : eps) e = rng.gaussian();
  return noising_with_eps(x0, s, total_steps, std::move(eps), source_id);
}

SampleChain reverse_sample(const ModelParams& params, std::span<const double> x_start,
                           int start_step, int total_steps,
                           std::span<const double> cond, Activations& acts) {
  if (start_step < 1 || start_step > total_steps) {
    throw std::invalid_argument("reverse start step out of range");
  }
  const int latent = params.shape.latent;
  SampleChain chain;
  chain.start_step = start_step;
  chain.latent = latent;
  chain.latents.resize(static_cast<size_t>(start_step + 1) * latent);
  std::copy(x_start.begin(), x_start.end(), chain.latents.begin());

  const double dt = 1.0 / total_steps;
  for (int k = start_step; k >= 1; --k) {
    const double* xk = chain.latents.data() + static_cast<size_t>(start_step - k) * latent;
    double* xn = chain.latents.data() + static_cast<size_t>(start_step - k + 1) * latent;
    velocity(params, std::span<const double>(xk, latent),
             static_cast<double>(k) / total_steps, cond, acts);
    bool ok = true;
    for (int i = 0; i < latent; ++i) {
      xn[i] = xk[i] - dt * acts.out[i];
      ok = ok && std::isfinite(xn[i]);
    }
    if (!ok) {
      chain.finite = false;
      // Backfill so downstream indexing stays valid.
      for (int kk = k - 1; kk >= 1; --kk) {
        double* rest = chain.latents.data() + static_cast<size_t>(start_step - kk + 1) * latent;
        std::copy(xn, xn + latent, rest);
      }
      break;
    }
  }
  return chain;
}

AdamW::AdamW(int64_t n, double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), m(n, 0.0), v(n, 0.0) {}

void AdamW::step(std::span<float> params, std::span<const double> grad) {
  if (params.size() != m.size() || grad.size() != m.size()) {
    throw std::invalid_argument("optimizer size mismatch");
  }
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (size_t i = 0; i < m.size(); ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double p = static_cast<double>(params[i]);
    const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps) + weight_decay * p;
    params[i] = static_cast<float>(p - lr * update);
  }
}

LatentTable latent_table(const dyn::Dataset& ds, const std::vector<uint32_t>& ids) {
  LatentTable t;
  t.count = static_cast<int64_t>(ids.size());
  if (ids.empty()) return t;
  t.latent = ds.spec.frames * dyn::kStateDim;
  t.x.reserve(ids.size() * t.latent);
  t.cond.reserve(ids.size() * dyn::kConditionDim);
  for (uint32_t id : ids) {
    const dyn::Trajectory& traj = ds.items.at(id);
    const std::vector<double> lat = dyn::flatten(traj);
    t.x.insert(t.x.end(), lat.begin(), lat.end());
    const std::vector<double> c = dyn::condition_of(traj).encoding();
    t.cond.insert(t.cond.end(), c.begin(), c.end());
  }
  return t;
}

double heldout_flow_loss(const ModelParams& params, const LatentTable& heldout,
                         int items, int draws, uint64_t seed, int jobs) {
  const int64_t n = std::min<int64_t>(items, heldout.count);
  if (n == 0 || draws < 1) throw std::invalid_argument("empty held-out evaluation");
  std::vector<kernels::Sample> samples;
  samples.reserve(n * draws);
  for (int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < draws; ++j) {
      samples.push_back(kernels::Sample{heldout.latent_at(i), heldout.cond_at(i)});
    }
  }
  // Draw streams keyed by (item, draw) only, so the value is a fixed function
  // of the checkpoint and seed, comparable across evaluations.
  kernels::Workspace ws;
  return kernels::flow_loss_eval(params, samples, Rng(seed).child(kHeldoutDraw), jobs, ws);
}

ModelParams train_base(const dyn::Dataset& ds, const ModelShape& shape,
                       const TrainOptions& opt, std::vector<CurveRow>* curve) {
  if (ds.train_ids.empty()) throw std::invalid_argument("training split is empty");
  if (opt.batch < 1 || opt.steps < 0) throw std::invalid_argument("bad training options");

  const LatentTable train = latent_table(ds, ds.train_ids);
  const LatentTable heldout = latent_table(ds, ds.heldout_ids);

  const Rng root(opt.seed);
  ModelParams params = ModelParams::random_init(shape, root.child(kModelInit));
  AdamW adam(shape.param_count(), opt.lr, opt.weight_decay);
  kernels::Workspace ws;
  std::vector<double> grad(shape.param_count());
  std::vector<kernels::Sample> batch(opt.batch);

  auto heldout_loss = [&]() {
    return heldout.count == 0
               ? 0.0
               : heldout_flow_loss(params, heldout, opt.heldout_items,
                                   opt.heldout_draws, opt.seed, opt.jobs);
  };

  for (int step = 0; step < opt.steps; ++step) {
    Rng pick = root.child(kTrainBatch, step);
    for (int b = 0; b < opt.batch; ++b) {
      const int64_t i = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(train.count));
      batch[b] = kernels::Sample{train.latent_at(i), train.cond_at(i)};
    }
    const double loss = kernels::flow_loss_grad(params, batch, root.child(kTrainDraw, step),
                                                opt.jobs, ws, grad);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("training diverged at step " + std::to_string(step));
    }
    if (curve && step % opt.eval_every == 0) {
      curve->push_back(CurveRow{step, loss, heldout_loss()});
    }
    adam.step(params.data, grad);
  }
  if (curve) {
    curve->push_back(CurveRow{opt.steps, curve->empty() ? 0.0 : curve->back().train_loss,
                              heldout_loss()});
  }
  return params;
}

namespace {
constexpr std::string_view kCheckpointMagic = "RDPOCKPT1\n";
}

std::string serialize_checkpoint(const ModelParams& params, const CheckpointMeta& meta) {
  std::string out(kCheckpointMagic);
  std::string kinds;
  for (int k = 0; k < dyn::kNumKinds; ++k) {
    if (k) kinds.push_back(',');
    kinds += io::fmt_int(k) + ":" + dyn::kind_name(static_cast<dyn::WorldKind>(k));
  }
  out += io::kv_line({{"version", "1"},
                      {"width", io::fmt_int(params.shape.width)},
                      {"layers", io::fmt_int(params.shape.layers)},
                      {"emb", io::fmt_int(params.shape.emb)},
                      {"frames", io::fmt_int(meta.frames)},
                      {"dim", io::fmt_int(meta.dim)},
                      {"steps", io::fmt_int(meta.total_steps)},
                      {"kinds", kinds}});
  out.reserve(out.size() + params.data.size() * 4);
  for (float v : params.data) io::put_f32(out, v);
  return out;
}

std::pair<ModelParams, CheckpointMeta> parse_checkpoint(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw std::runtime_error("not a checkpoint file (bad magic)");
  }
  const auto kv = io::parse_kv_line(r.get_line());
  if (io::kv_get(kv, "version") != "1") {
    throw std::runtime_error("unsupported checkpoint version");
  }
  CheckpointMeta meta;
  meta.frames = static_cast<int>(io::parse_i64(io::kv_get(kv, "frames")));
  meta.dim = static_cast<int>(io::parse_i64(io::kv_get(kv, "dim")));
  meta.total_steps = static_cast<int>(io::parse_i64(io::kv_get(kv, "steps")));

  ModelShape shape;
  shape.latent = meta.frames * meta.dim;
  shape.width = static_cast<int>(io::parse_i64(io::kv_get(kv, "width")));
  shape.layers = static_cast<int>(io::parse_i64(io::kv_get(kv, "layers")));
  shape.emb = static_cast<int>(io::parse_i64(io::kv_get(kv, "emb")));
  shape.validate();

  ModelParams params = ModelParams::zeros(shape);
  for (float& v : params.data) v = r.get_f32();
  if (!r.at_end()) throw std::runtime_error("trailing bytes in checkpoint");
  return {std::move(params), meta};
}

void write_checkpoint(const std::string& path, const ModelParams& params,
                      const CheckpointMeta& meta) {
  io::write_file(path, serialize_checkpoint(params, meta));
}

std::pair<ModelParams, CheckpointMeta> read_checkpoint(const std::string& path) {
  return parse_checkpoint(io::read_file(path));
}

uint64_t checkpoint_hash(const ModelParams& params, const CheckpointMeta& meta) {
  return io::fnv1a64(serialize_checkpoint(params, meta));
}

}  // namespace rdpo::flow
