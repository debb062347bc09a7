#include "defense/transform.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "nn/checkpoint.hpp"

namespace advt::defense {

namespace {

void check_pixel_range(const Tensor& x) {
  for (int64_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= 0.0 && x[i] <= 1.0))
      throw ArgumentError("transform input pixel outside [0,1]: " + std::to_string(x[i]));
}

Tensor single_row_batch(const Tensor& x) {
  if (x.rank() == 4) return x;
  if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  throw DimensionError("expected a CHW example or NCHW batch, got " + shape_str(x.shape()));
}

}  // namespace

TransformConfig TransformConfig::make(double delta, int steps, bool random_start,
                                      uint64_t seed) {
  TransformConfig cfg;
  cfg.delta = delta;
  cfg.steps = steps;
  cfg.stepsize = delta / 6.0;
  cfg.random_start = random_start;
  cfg.rng_seed = seed;
  return cfg;
}

void TransformConfig::validate() const {
  if (!(delta > 0.0)) throw ConfigError("transform delta must be > 0");
  if (steps < 0) throw ConfigError("transform steps must be >= 0");
  if (!(stepsize > 0.0)) throw ConfigError("transform stepsize must be > 0");
}

int least_likely_class(const nn::Model& fb, const Tensor& x) {
  return least_likely_classes(fb, single_row_batch(x))[0];
}

std::vector<int> least_likely_classes(const nn::Model& fb, const Tensor& batch) {
  return argmin_rows(nn::model_forward(fb, batch));
}

Tensor adversarial_transform_batch(const nn::Model& fb, const TransformConfig& cfg,
                                   const Tensor& batch, const std::vector<uint64_t>& seeds,
                                   TransformTrace* trace, Tensor* start_out) {
  cfg.validate();
  nn::check_batch_shape(fb.spec, batch);
  check_pixel_range(batch);
  const int64_t n = batch.dim(0);
  if (static_cast<int64_t>(seeds.size()) != n)
    throw ArgumentError("adversarial_transform: one seed per example required");

  // Target class is decided once, on the clean input.
  std::vector<int> targets = least_likely_classes(fb, batch);

  const int64_t px = batch.size() / n;
  Tensor cur = batch;
  if (cfg.random_start) {
    for (int64_t r = 0; r < n; ++r) {
      Rng rng(seeds[static_cast<size_t>(r)]);
      double* row = cur.data() + r * px;
      for (int64_t i = 0; i < px; ++i) {
        // project onto the delta ball (a no-op for a fresh draw), then clip
        double v = row[i] + rng.uniform(-cfg.delta, cfg.delta);
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        row[i] = v;
      }
    }
  }
  if (start_out) *start_out = cur;
  for (int step = 0; step < cfg.steps; ++step) {
    if (trace) trace->step_targets.push_back(targets);
    Tape tape;
    int xid = tape.leaf(cur);
    nn::ForwardIds ids = nn::record_forward(tape, fb, xid);
    int loss = tape.cross_entropy(ids.logits, targets, /*mean_reduce=*/false);
    Tensor g = tape.backward(loss).wrt(xid);
    for (int64_t i = 0; i < cur.size(); ++i) {
      double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = cur[i] - cfg.stepsize * s;  // descend toward the target class
      double u = v - batch[i];
      if (u > cfg.delta) u = cfg.delta;
      if (u < -cfg.delta) u = -cfg.delta;
      v = batch[i] + u;
      if (v < 0.0) v = 0.0;
      if (v > 1.0) v = 1.0;
      cur[i] = v;
    }
  }
  return cur;
}

Tensor adversarial_transform(const nn::Model& fb, const TransformConfig& cfg, const Tensor& x,
                             uint64_t sample_seed) {
  Tensor batch = single_row_batch(x);
  Tensor out = adversarial_transform_batch(fb, cfg, batch, {sample_seed});
  return x.rank() == 3 ? out.reshaped(x.shape()) : out;
}

std::string DefensePipeline::fb_digest() const { return nn::model_digest(fb); }

Tensor defense_forward(const DefensePipeline& p, const Tensor& x, uint64_t sample_seed) {
  Tensor batch = single_row_batch(x);
  return nn::model_forward(p.fa, adversarial_transform_batch(p.fb, p.transform, batch,
                                                             {sample_seed}));
}

Tensor defense_forward_batch(const DefensePipeline& p, const Tensor& batch,
                             const std::vector<uint64_t>& seeds) {
  return nn::model_forward(p.fa, adversarial_transform_batch(p.fb, p.transform, batch, seeds));
}

uint64_t transform_seed(uint64_t base, uint64_t example_index, uint64_t epoch) {
  return rng_derive(rng_derive(base, example_index), epoch);
}

nn::TrainTrace train_defense(DefensePipeline& p, const data::Dataset& ds,
                             const nn::SGDConfig& cfg, uint64_t seed) {
  cfg.validate();
  p.transform.validate();
  if (ds.size() == 0) throw ArgumentError("train_defense: empty dataset");

  nn::TrainTrace trace;
  nn::SGDState state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    uint64_t shuffle_seed = rng_derive(rng_derive(seed, 0x01), uint64_t(epoch));
    double epoch_loss = 0.0;
    for (const auto& batch : data::batch_indices(ds.size(), cfg.batch_size, shuffle_seed)) {
      data::Dataset mb = data::gather(ds, batch);
      std::vector<uint64_t> seeds(batch.size());
      for (size_t i = 0; i < batch.size(); ++i)
        seeds[i] = transform_seed(p.transform.rng_seed, uint64_t(batch[i]), uint64_t(epoch));
      Tensor transformed = adversarial_transform_batch(p.fb, p.transform, mb.images, seeds);

      Tape tape;
      int xid = tape.leaf(transformed);
      nn::ForwardIds ids = nn::record_forward(tape, p.fa, xid);
      int loss = tape.cross_entropy(ids.logits, mb.labels, /*mean_reduce=*/true);
      GradMap grads = tape.backward(loss);
      std::map<std::string, Tensor> gmap;
      for (size_t i = 0; i < p.fa.params.size(); ++i)
        gmap[p.fa.params[i].first] = grads.wrt(ids.params[i]);
      nn::sgd_step(p.fa, gmap, state, cfg);
      epoch_loss += tape.value(loss)[0] * static_cast<double>(batch.size());
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(ds.size()));
  }
  return trace;
}

EotDiagnostic eot_mean_transform(const nn::Model& fb, const TransformConfig& cfg,
                                 const Tensor& x, int sample_count, uint64_t seed) {
  if (sample_count < 1) throw ArgumentError("eot_mean_transform: sample_count must be >= 1");
  Tensor one = single_row_batch(x);
  const int64_t px = one.size();
  Tensor mean(one.shape());

  // Samples are independent rows, so they can share batched transforms.
  const int64_t chunk = 64;
  for (int64_t k0 = 0; k0 < sample_count; k0 += chunk) {
    int64_t rows = std::min<int64_t>(chunk, sample_count - k0);
    Tensor rep({rows, one.dim(1), one.dim(2), one.dim(3)});
    std::vector<uint64_t> seeds(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(one.data(), one.data() + px, rep.data() + r * px);
      seeds[static_cast<size_t>(r)] = rng_derive(seed, uint64_t(k0 + r));
    }
    Tensor out = adversarial_transform_batch(fb, cfg, rep, seeds);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < px; ++i) mean[i] += out[r * px + i];
  }
  for (int64_t i = 0; i < mean.size(); ++i) mean[i] /= sample_count;

  EotDiagnostic diag;
  diag.sample_count = sample_count;
  diag.linf_distance = linf_distance(one, mean);
  diag.mean_transform = x.rank() == 3 ? mean.reshaped(x.shape()) : std::move(mean);
  return diag;
}

}  // namespace advt::defense
