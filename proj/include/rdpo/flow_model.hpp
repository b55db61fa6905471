#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdpo/dynamics.hpp"
#include "rdpo/rng.hpp"

namespace rdpo::flow {

// Residual MLP over [latent | time features | condition]. The whole parameter
// vector is float32 (matching the checkpoint format bit for bit); all math
// runs in double.
struct ModelShape {
  int latent = 64;
  int cond = dyn::kConditionDim;
  int emb = 16;
  int width = 128;
  int layers = 4;

  int input_dim() const { return latent + emb + cond; }
  int64_t param_count() const;
  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

struct TensorRef {
  std::string name;
  int64_t offset = 0;
  int rows = 0;
  int cols = 0;  // 1 for biases
  int64_t size() const { return static_cast<int64_t>(rows) * cols; }
};
std::vector<TensorRef> tensor_table(const ModelShape& shape);

struct ModelParams {
  ModelShape shape;
  std::vector<float> data;  // tensors concatenated in tensor_table order

  static ModelParams zeros(const ModelShape& shape);
  // Entries scaled by 1/sqrt(fan_in); output head starts at zero so a fresh
  // model is the zero velocity field.
  static ModelParams random_init(const ModelShape& shape, Rng rng);

  int64_t off_w_in() const { return 0; }
  int64_t off_b_in() const;
  int64_t off_block_w(int l) const;
  int64_t off_block_b(int l) const;
  int64_t off_w_out() const;
  int64_t off_b_out() const;

  bool operator==(const ModelParams&) const = default;
};

struct CheckpointMeta {
  int frames = 16;
  int dim = dyn::kStateDim;
  int total_steps = 50;
  bool operator==(const CheckpointMeta&) const = default;
};

std::string serialize_checkpoint(const ModelParams& params, const CheckpointMeta& meta);
std::pair<ModelParams, CheckpointMeta> parse_checkpoint(std::string_view bytes);
void write_checkpoint(const std::string& path, const ModelParams& params,
                      const CheckpointMeta& meta);
std::pair<ModelParams, CheckpointMeta> read_checkpoint(const std::string& path);
uint64_t checkpoint_hash(const ModelParams& params, const CheckpointMeta& meta);

// Geometric sin/cos features of t; emb must be even.
void time_features(double t, int emb, std::span<double> out);

// Forward-pass scratch, reused across calls.
struct Activations {
  std::vector<double> input;  // input_dim
  std::vector<double> h;      // (layers + 1) * width
  std::vector<double> u;      // layers * width (block tanh outputs)
  std::vector<double> out;    // latent
  std::vector<double> gh, gz; // backward scratch, width each
  void resize(const ModelShape& shape);
};

// Velocity field v(x, t, c); result lands in acts.out.
void velocity(const ModelParams& params, std::span<const double> x, double t,
              std::span<const double> cond, Activations& acts);

// Accumulates d(loss)/d(params) into grad given d(loss)/d(out); acts must hold
// the matching forward pass. When g_x is non-empty (latent length) the
// gradient with respect to the latent input is also produced.
void velocity_vjp(const ModelParams& params, const Activations& acts,
                  std::span<const double> g_out, std::span<double> grad,
                  std::span<double> g_x, Activations& scratch);

struct NoisySample {
  std::vector<double> x;    // (1 - s/T) x0 + (s/T) eps, elementwise
  int step = 0;
  int total_steps = 1;
  double t = 0.0;
  std::vector<double> eps;
  uint32_t source_id = 0;
};

NoisySample noising_with_eps(std::span<const double> x0, int s, int total_steps,
                             std::vector<double> eps, uint32_t source_id = 0);
NoisySample noising(std::span<const double> x0, int s, int total_steps, Rng& rng,
                    uint32_t source_id = 0);

struct SampleChain {
  int start_step = 0;
  int latent = 0;
  bool finite = true;
  std::vector<double> latents;  // (start_step + 1) * latent; x_s first, x_0 last

  std::span<const double> at_step(int s) const {
    return std::span<const double>(latents).subspan(
        static_cast<size_t>(start_step - s) * latent, latent);
  }
  std::span<const double> endpoint() const { return at_step(0); }
};

// Explicit Euler on dx/dt = v from t = s/T down to 0, uniform step 1/T.
SampleChain reverse_sample(const ModelParams& params, std::span<const double> x_start,
                           int start_step, int total_steps,
                           std::span<const double> cond, Activations& acts);

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::vector<double> m, v;
  int64_t steps = 0;

  AdamW(int64_t n, double lr_, double weight_decay_);
  void step(std::span<float> params, std::span<const double> grad);
};

struct TrainOptions {
  int steps = 3000;
  int batch = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int eval_every = 100;
  int heldout_items = 256;
  int heldout_draws = 2;
  uint64_t seed = 0;
  int jobs = 1;
};

struct CurveRow {
  int step = 0;
  double train_loss = 0.0;
  double heldout_loss = 0.0;
};

// Latents plus condition encodings for a dataset split, in split order.
struct LatentTable {
  int latent = 0;
  std::vector<double> x;     // n * latent
  std::vector<double> cond;  // n * kConditionDim
  int64_t count = 0;
  std::span<const double> latent_at(int64_t i) const {
    return std::span<const double>(x).subspan(i * latent, latent);
  }
  std::span<const double> cond_at(int64_t i) const {
    return std::span<const double>(cond).subspan(i * dyn::kConditionDim,
                                                 dyn::kConditionDim);
  }
};
LatentTable latent_table(const dyn::Dataset& ds, const std::vector<uint32_t>& ids);

ModelParams train_base(const dyn::Dataset& ds, const ModelShape& shape,
                       const TrainOptions& opt, std::vector<CurveRow>* curve);

double heldout_flow_loss(const ModelParams& params, const LatentTable& heldout,
                         int items, int draws, uint64_t seed, int jobs);

}  // namespace rdpo::flow
