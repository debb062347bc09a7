#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "data/dataset.hpp"
#include "nn/model.hpp"
#include "nn/train.hpp"

namespace advt::defense {

// Hyperparameters of the input transformation: a least-likely-class PGD
// attack on the frozen external model f_b.
struct TransformConfig {
  double delta = 0.3;      // L-inf perturbation range, pixel units in [0,1]
  int steps = 13;          // N
  double stepsize = 0.05;  // per-step epsilon; defaults to delta / 6
  bool random_start = true;
  uint64_t rng_seed = 0;

  static TransformConfig make(double delta, int steps, bool random_start, uint64_t seed);
  void validate() const;
};

int least_likely_class(const nn::Model& fb, const Tensor& x);
std::vector<int> least_likely_classes(const nn::Model& fb, const Tensor& batch);

// Optional instrumentation: records the target class used at each step.
struct TransformTrace {
  std::vector<std::vector<int>> step_targets;
};

// g(x): N signed-gradient steps toward f_b's least likely class (decided on
// the clean input), projected into the delta-ball around x and clipped to
// [0,1] after every step. Fully determined by (batch, config, seeds).
// start_out, when non-null, receives the post-random-start iterate x'_0.
Tensor adversarial_transform_batch(const nn::Model& fb, const TransformConfig& cfg,
                                   const Tensor& batch, const std::vector<uint64_t>& seeds,
                                   TransformTrace* trace = nullptr, Tensor* start_out = nullptr);

Tensor adversarial_transform(const nn::Model& fb, const TransformConfig& cfg, const Tensor& x,
                             uint64_t sample_seed);

struct DefensePipeline {
  nn::Model fa;
  nn::Model fb;  // frozen after construction
  TransformConfig transform;

  std::string fb_digest() const;
};

// f_a(g(x)) logits with one fresh transformation sample per call.
Tensor defense_forward(const DefensePipeline& p, const Tensor& x, uint64_t sample_seed);
Tensor defense_forward_batch(const DefensePipeline& p, const Tensor& batch,
                             const std::vector<uint64_t>& seeds);

// Trains f_a on transformed inputs; f_b stays untouched. The per-example
// start offset is re-sampled every epoch, keyed by
// (transform.rng_seed, example index, epoch).
nn::TrainTrace train_defense(DefensePipeline& p, const data::Dataset& ds,
                             const nn::SGDConfig& cfg, uint64_t seed);

struct EotDiagnostic {
  Tensor mean_transform;
  int sample_count = 0;
  double linf_distance = 0.0;  // || x - mean_transform ||_inf
};

// Monte-Carlo estimate of E[g(x)] and its L-inf distance from x — the f_b
// selection diagnostic.
EotDiagnostic eot_mean_transform(const nn::Model& fb, const TransformConfig& cfg,
                                 const Tensor& x, int sample_count, uint64_t seed);

// Per-example transform seed used by training and evaluation.
uint64_t transform_seed(uint64_t base, uint64_t example_index, uint64_t epoch);

}  // namespace advt::defense
