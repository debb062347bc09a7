#include "nn/train.hpp"

#include <cmath>
#include <numeric>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace advt::nn {

namespace {

constexpr uint64_t kShuffleStream = 0x01;
constexpr uint64_t kPgdStream = 0x02;

// Signed-gradient ascent step material: d(sum CE)/dx on the current model.
Tensor input_gradient(const Model& model, const Tensor& x, const std::vector<int>& y) {
  Tape tape;
  int xid = tape.leaf(x);
  ForwardIds ids = record_forward(tape, model, xid);
  int loss = tape.cross_entropy(ids.logits, y, /*mean_reduce=*/false);
  return tape.backward(loss).wrt(xid);
}

std::map<std::string, Tensor> param_gradients(const Model& model, const Tensor& x,
                                              const std::vector<int>& y, double* loss_out) {
  Tape tape;
  int xid = tape.leaf(x);
  ForwardIds ids = record_forward(tape, model, xid);
  int loss = tape.cross_entropy(ids.logits, y, /*mean_reduce=*/true);
  GradMap grads = tape.backward(loss);
  if (loss_out) *loss_out = tape.value(loss)[0];
  std::map<std::string, Tensor> out;
  for (size_t i = 0; i < model.params.size(); ++i)
    out[model.params[i].first] = grads.wrt(ids.params[i]);
  return out;
}

}  // namespace

void SGDConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

void sgd_step(Model& model, const std::map<std::string, Tensor>& grads, SGDState& state,
              const SGDConfig& cfg) {
  cfg.validate();
  for (auto& [name, theta] : model.params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ArgumentError("sgd_step: missing gradient for '" + name + "'");
    const Tensor& g = it->second;
    if (!g.same_shape(theta))
      throw DimensionError("sgd_step: gradient shape " + shape_str(g.shape()) +
                           " does not match parameter '" + name + "' " +
                           shape_str(theta.shape()));
    Tensor& v = state.velocity[name];
    if (v.empty()) v = Tensor(theta.shape());
    for (int64_t i = 0; i < theta.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i];
      theta[i] -= cfg.learning_rate * v[i];
    }
  }
}

TrainTrace train_standard(Model& model, const data::Dataset& ds, const SGDConfig& cfg,
                          uint64_t seed) {
  cfg.validate();
  if (ds.size() == 0) throw ArgumentError("train_standard: empty dataset");
  TrainTrace trace;
  SGDState state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    uint64_t shuffle_seed = rng_derive(rng_derive(seed, kShuffleStream), uint64_t(epoch));
    double epoch_loss = 0.0;
    for (const auto& batch : data::batch_indices(ds.size(), cfg.batch_size, shuffle_seed)) {
      data::Dataset mb = data::gather(ds, batch);
      double loss = 0.0;
      auto grads = param_gradients(model, mb.images, mb.labels, &loss);
      sgd_step(model, grads, state, cfg);
      epoch_loss += loss * static_cast<double>(batch.size());
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(ds.size()));
  }
  return trace;
}

Tensor craft_pgd_batch(const Model& model, const Tensor& x, const std::vector<int>& y,
                       const PgdParams& p, const std::vector<uint64_t>& seeds) {
  if (p.epsilon < 0.0 || p.steps < 0) throw ArgumentError("craft_pgd_batch: bad parameters");
  if (p.epsilon == 0.0) return x;
  check_batch_shape(model.spec, x);
  const int64_t n = x.dim(0);
  if (static_cast<int64_t>(seeds.size()) != n)
    throw ArgumentError("craft_pgd_batch: one seed per example required");
  const int64_t px = x.size() / n;

  Tensor cur = x;
  if (p.random_start) {
    for (int64_t r = 0; r < n; ++r) {
      Rng rng(seeds[static_cast<size_t>(r)]);
      double* row = cur.data() + r * px;
      for (int64_t i = 0; i < px; ++i) {
        double v = row[i] + rng.uniform(-p.epsilon, p.epsilon);
        row[i] = std::min(1.0, std::max(0.0, v));
      }
    }
  }
  for (int step = 0; step < p.steps; ++step) {
    Tensor g = input_gradient(model, cur, y);
    for (int64_t i = 0; i < cur.size(); ++i) {
      double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = cur[i] + p.stepsize * s;
      double u = v - x[i];
      if (u > p.epsilon) u = p.epsilon;
      if (u < -p.epsilon) u = -p.epsilon;
      v = x[i] + u;
      cur[i] = std::min(1.0, std::max(0.0, v));
    }
  }
  return cur;
}

TrainTrace adversarial_train(Model& model, const data::Dataset& ds, const SGDConfig& cfg,
                             const PgdParams& attack, uint64_t seed) {
  cfg.validate();
  if (ds.size() == 0) throw ArgumentError("adversarial_train: empty dataset");
  TrainTrace trace;
  SGDState state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    uint64_t shuffle_seed = rng_derive(rng_derive(seed, kShuffleStream), uint64_t(epoch));
    uint64_t pgd_epoch = rng_derive(rng_derive(seed, kPgdStream), uint64_t(epoch));
    double epoch_loss = 0.0;
    for (const auto& batch : data::batch_indices(ds.size(), cfg.batch_size, shuffle_seed)) {
      data::Dataset mb = data::gather(ds, batch);
      std::vector<uint64_t> seeds(batch.size());
      for (size_t i = 0; i < batch.size(); ++i)
        seeds[i] = rng_derive(pgd_epoch, static_cast<uint64_t>(batch[i]));
      Tensor adv = craft_pgd_batch(model, mb.images, mb.labels, attack, seeds);
      double loss = 0.0;
      auto grads = param_gradients(model, adv, mb.labels, &loss);
      sgd_step(model, grads, state, cfg);
      epoch_loss += loss * static_cast<double>(batch.size());
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(ds.size()));
  }
  return trace;
}

double evaluate_accuracy(const Model& model, const data::Dataset& ds) {
  if (ds.size() == 0) throw ArgumentError("evaluate_accuracy: empty dataset");
  const int64_t chunk = 256;
  int64_t correct = 0;
  for (int64_t start = 0; start < ds.size(); start += chunk) {
    int64_t stop = std::min(ds.size(), start + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    data::Dataset part = data::gather(ds, idx);
    std::vector<int> pred = argmax_rows(model_forward(model, part.images));
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == part.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace advt::nn
