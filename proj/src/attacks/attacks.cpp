#include "attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace advt::attacks {

namespace {

constexpr uint64_t kStartStream = 0x51;
constexpr uint64_t kQueryStream = 0x6A;
constexpr int64_t kChunk = 32;  // examples per unrolled tape

double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Hard postcondition on every attack output.
void enforce_budget(const Tensor& clean, const Tensor& adv, double epsilon) {
  for (int64_t i = 0; i < clean.size(); ++i) {
    double d = std::fabs(adv[i] - clean[i]);
    if (!(d <= epsilon + 1e-12) || !(adv[i] >= 0.0 && adv[i] <= 1.0))
      throw Error("attack budget violated: |delta|=" + std::to_string(d) + " eps=" +
                  std::to_string(epsilon) + " pixel=" + std::to_string(adv[i]));
  }
}

Tensor rows_of(const Tensor& batch, int64_t lo, int64_t hi) {
  std::vector<int64_t> shape = batch.shape();
  const int64_t px = batch.size() / batch.dim(0);
  shape[0] = hi - lo;
  Tensor out(shape);
  std::copy(batch.data() + lo * px, batch.data() + hi * px, out.data());
  return out;
}

uint64_t eval_transform_seed(const EvalPolicy& eval, int64_t example_index, uint64_t salt) {
  uint64_t s = rng_derive(eval.seed, static_cast<uint64_t>(example_index));
  return eval.resample_per_call ? rng_derive(s, salt) : s;
}

// Gradient of the summed cross entropy of a plain model at x.
Tensor model_input_gradient(const nn::Model& model, const Tensor& x, const std::vector<int>& y) {
  Tape tape;
  int xid = tape.leaf(x);
  nn::ForwardIds ids = nn::record_forward(tape, model, xid);
  int loss = tape.cross_entropy(ids.logits, y, /*mean_reduce=*/false);
  return tape.backward(loss).wrt(xid);
}

std::vector<uint64_t> start_seeds_for(uint64_t base, int64_t index_base, int64_t n,
                                      uint64_t sample) {
  std::vector<uint64_t> seeds(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r)
    seeds[static_cast<size_t>(r)] =
        rng_derive(rng_derive(base, static_cast<uint64_t>(index_base + r)), sample);
  return seeds;
}

using ChunkRuleFactory = std::function<GradientRule(int64_t index_base)>;

// Shared driver: PGD per chunk, then one grading pass on the target pipeline.
AttackOutcome pgd_over_dataset(const defense::DefensePipeline& target, const data::Dataset& ds,
                               const AttackConfig& cfg, const EvalPolicy& eval,
                               const ChunkRuleFactory& make_rule) {
  cfg.validate();
  const int64_t n = ds.size();
  if (n == 0) throw ArgumentError("attack dataset is empty");
  AttackOutcome out;
  out.result.adversarial = Tensor(ds.images.shape());
  out.result.success.resize(static_cast<size_t>(n));
  const int64_t px = ds.images.size() / n;

  int64_t correct = 0;
  for (int64_t lo = 0; lo < n; lo += kChunk) {
    int64_t hi = std::min(n, lo + kChunk);
    Tensor x = rows_of(ds.images, lo, hi);
    std::vector<int> y(ds.labels.begin() + lo, ds.labels.begin() + hi);
    GradientRule rule = make_rule(lo);
    Predictor predict = [&](const Tensor& cand) {
      return pipeline_predict(target, cand, lo, eval);
    };
    AttackResult part = pgd_attack(rule, predict, x, y, cfg, lo);
    std::copy(part.adversarial.data(), part.adversarial.data() + part.adversarial.size(),
              out.result.adversarial.data() + lo * px);
    for (int64_t r = 0; r < hi - lo; ++r) {
      out.result.success[static_cast<size_t>(lo + r)] = part.success[static_cast<size_t>(r)];
      if (!part.success[static_cast<size_t>(r)]) ++correct;
    }
  }
  out.robust_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("attack epsilon must be > 0");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (!(stepsize > 0.0)) throw ConfigError("attack stepsize must be > 0");
  if (eot_samples < 1) throw ConfigError("attack eot_samples must be >= 1");
}

std::vector<int> pipeline_predict(const defense::DefensePipeline& p, const Tensor& batch,
                                  int64_t index_base, const EvalPolicy& eval,
                                  uint64_t call_salt) {
  const int64_t n = batch.dim(0);
  std::vector<uint64_t> seeds(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r)
    seeds[static_cast<size_t>(r)] = eval_transform_seed(eval, index_base + r, call_salt);
  return argmax_rows(defense::defense_forward_batch(p, batch, seeds));
}

double pipeline_accuracy(const defense::DefensePipeline& p, const data::Dataset& ds,
                         const EvalPolicy& eval) {
  if (ds.size() == 0) throw ArgumentError("pipeline_accuracy: empty dataset");
  int64_t correct = 0;
  for (int64_t lo = 0; lo < ds.size(); lo += kChunk) {
    int64_t hi = std::min(ds.size(), lo + kChunk);
    std::vector<int> pred = pipeline_predict(p, rows_of(ds.images, lo, hi), lo, eval);
    for (int64_t r = 0; r < hi - lo; ++r)
      if (pred[static_cast<size_t>(r)] == ds.labels[static_cast<size_t>(lo + r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

AttackResult fgsm(const nn::Model& model, const Tensor& x, const std::vector<int>& y,
                  double epsilon) {
  if (epsilon < 0.0) throw ArgumentError("fgsm epsilon must be >= 0");
  AttackResult res;
  res.adversarial = x;
  if (epsilon > 0.0) {
    Tensor g = model_input_gradient(model, x, y);
    for (int64_t i = 0; i < x.size(); ++i)
      res.adversarial[i] = clip01(x[i] + epsilon * sgn(g[i]));
  }
  std::vector<int> pred = argmax_rows(nn::model_forward(model, res.adversarial));
  res.success.resize(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) res.success[i] = pred[i] != y[i];
  enforce_budget(x, res.adversarial, epsilon);
  return res;
}

AttackResult pgd_attack(const GradientRule& grad, const Predictor& predict, const Tensor& x,
                        const std::vector<int>& y, const AttackConfig& cfg,
                        int64_t index_base) {
  cfg.validate();
  if (!grad) throw ConfigError("pgd_attack: missing gradient rule");
  const int64_t n = x.dim(0);
  const int64_t px = x.size() / n;

  Tensor cur = x;
  for (int64_t r = 0; r < n; ++r) {
    Rng rng(rng_derive(rng_derive(cfg.rng_seed, kStartStream),
                       static_cast<uint64_t>(index_base + r)));
    double* row = cur.data() + r * px;
    for (int64_t i = 0; i < px; ++i)
      row[i] = clip01(row[i] + rng.uniform(-cfg.epsilon, cfg.epsilon));
  }
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor g = grad(cur, y, step);
    if (!g.same_shape(cur))
      throw DimensionError("gradient rule returned shape " + shape_str(g.shape()));
    for (int64_t i = 0; i < cur.size(); ++i) {
      double v = cur[i] + cfg.stepsize * sgn(g[i]);  // ascend the loss
      double u = v - x[i];
      if (u > cfg.epsilon) u = cfg.epsilon;
      if (u < -cfg.epsilon) u = -cfg.epsilon;
      cur[i] = clip01(x[i] + u);
    }
  }
  AttackResult res;
  res.adversarial = std::move(cur);
  std::vector<int> pred = predict(res.adversarial);
  res.success.resize(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) res.success[i] = pred[i] != y[i];
  enforce_budget(x, res.adversarial, cfg.epsilon);
  return res;
}

AttackResult pgd_attack(const nn::Model& model, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& cfg) {
  GradientRule rule = [&model](const Tensor& xt, const std::vector<int>& yt, int) {
    return model_input_gradient(model, xt, yt);
  };
  Predictor predict = [&model](const Tensor& cand) {
    return argmax_rows(nn::model_forward(model, cand));
  };
  return pgd_attack(rule, predict, x, y, cfg);
}

int record_unrolled_transform(Tape& tape, const defense::DefensePipeline& p, int x0_id,
                              SurrogateMode surrogate, const Tensor* start_deltas) {
  const defense::TransformConfig& cfg = p.transform;
  cfg.validate();
  const Tensor& x0 = tape.value(x0_id);
  std::vector<int> targets = defense::least_likely_classes(p.fb, x0);

  int cur = x0_id;
  if (cfg.random_start) {
    if (!start_deltas)
      throw ArgumentError("unrolled transform: random start requires start offsets");
    cur = tape.clamp(tape.add(x0_id, tape.leaf(*start_deltas)), 0.0, 1.0);
  }
  for (int step = 0; step < cfg.steps; ++step) {
    int gin = nn::record_input_gradient(tape, p.fb, cur, targets);
    int dir = tape.unary(UnaryKind::Sign, gin, surrogate);
    int moved = tape.sub(cur, tape.scale(dir, cfg.stepsize));
    int proj = tape.project_linf(moved, x0_id, cfg.delta, surrogate);
    cur = tape.clamp(proj, 0.0, 1.0);
  }
  return cur;
}

Tensor bpda_gradient(const defense::DefensePipeline& p, const Tensor& x,
                     const std::vector<int>& y, SurrogateMode surrogate,
                     const std::vector<uint64_t>* start_seeds) {
  if (surrogate == SurrogateMode::Exact)
    throw ConfigError("bpda_gradient: the exact mode has no usable backward; pick a surrogate");
  const int64_t n = x.dim(0);
  const int64_t px = x.size() / n;

  Tensor deltas;
  if (p.transform.random_start) {
    if (!start_seeds || static_cast<int64_t>(start_seeds->size()) != n)
      throw ArgumentError("bpda_gradient: one start seed per example required");
    // The same draws the real transform would make; treated as constants.
    deltas = Tensor(x.shape());
    for (int64_t r = 0; r < n; ++r) {
      Rng rng((*start_seeds)[static_cast<size_t>(r)]);
      for (int64_t i = 0; i < px; ++i)
        deltas[r * px + i] = rng.uniform(-p.transform.delta, p.transform.delta);
    }
  }

  Tape tape;
  int x0 = tape.leaf(x);
  int g_out = record_unrolled_transform(tape, p, x0, surrogate,
                                        p.transform.random_start ? &deltas : nullptr);
  nn::ForwardIds ids = nn::record_forward(tape, p.fa, g_out);
  int loss = tape.cross_entropy(ids.logits, y, /*mean_reduce=*/false);
  return tape.backward(loss).wrt(x0);
}

Tensor eot_gradient(const SeededGradientRule& rule, const Tensor& x, const std::vector<int>& y,
                    int K, uint64_t seed) {
  if (K < 1) throw ArgumentError("eot_gradient: K must be >= 1");
  Tensor mean(x.shape());
  for (int k = 0; k < K; ++k) {
    Tensor g = rule(x, y, rng_derive(seed, static_cast<uint64_t>(k)));
    for (int64_t i = 0; i < mean.size(); ++i) mean[i] += g[i];
  }
  for (int64_t i = 0; i < mean.size(); ++i) mean[i] /= K;
  return mean;
}

AttackOutcome bpda_unrolled_attack(const defense::DefensePipeline& p, const data::Dataset& ds,
                                   const AttackConfig& cfg, const EvalPolicy& eval) {
  ChunkRuleFactory factory = [&](int64_t base) -> GradientRule {
    return [&, base](const Tensor& xt, const std::vector<int>& yt, int) {
      if (!p.transform.random_start) return bpda_gradient(p, xt, yt, cfg.surrogate);
      SeededGradientRule sampled = [&, base](const Tensor& xs, const std::vector<int>& ys,
                                             uint64_t sample_seed) {
        std::vector<uint64_t> seeds(static_cast<size_t>(xs.dim(0)));
        for (int64_t r = 0; r < xs.dim(0); ++r)
          seeds[static_cast<size_t>(r)] =
              rng_derive(sample_seed, static_cast<uint64_t>(base + r));
        return bpda_gradient(p, xs, ys, cfg.surrogate, &seeds);
      };
      return eot_gradient(sampled, xt, yt, cfg.eot_samples, cfg.rng_seed);
    };
  };
  return pgd_over_dataset(p, ds, cfg, eval, factory);
}

AttackOutcome bpda_identity_attack(const defense::DefensePipeline& p, const data::Dataset& ds,
                                   const AttackConfig& cfg, const EvalPolicy& eval) {
  ChunkRuleFactory factory = [&](int64_t base) -> GradientRule {
    return [&, base](const Tensor& xt, const std::vector<int>& yt, int) {
      // Forward through a sampled g; backward bypasses it entirely.
      SeededGradientRule sampled = [&, base](const Tensor& xs, const std::vector<int>& ys,
                                             uint64_t sample_seed) {
        std::vector<uint64_t> seeds(static_cast<size_t>(xs.dim(0)));
        for (int64_t r = 0; r < xs.dim(0); ++r)
          seeds[static_cast<size_t>(r)] =
              rng_derive(sample_seed, static_cast<uint64_t>(base + r));
        Tensor u = defense::adversarial_transform_batch(p.fb, p.transform, xs, seeds);
        return model_input_gradient(p.fa, u, ys);
      };
      int K = p.transform.random_start ? cfg.eot_samples : 1;
      return eot_gradient(sampled, xt, yt, K, cfg.rng_seed);
    };
  };
  return pgd_over_dataset(p, ds, cfg, eval, factory);
}

double finite_difference_entry(const std::function<Tensor(const Tensor&)>& g, const Tensor& x,
                               int64_t i, int64_t j, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_difference_entry: h must be > 0");
  if (j < 0 || j >= x.size()) throw ArgumentError("finite_difference_entry: pixel j out of range");
  Tensor probe = x;
  probe[j] = x[j] + h;
  Tensor up = g(probe);
  probe[j] = x[j] - h;
  Tensor down = g(probe);
  if (i < 0 || i >= up.size()) throw ArgumentError("finite_difference_entry: pixel i out of range");
  return (up[i] - down[i]) / (2.0 * h);
}

AttackOutcome transfer_attack(const nn::Model& source, const defense::DefensePipeline& target,
                              const data::Dataset& ds, const AttackConfig& cfg,
                              const EvalPolicy& eval) {
  if (source.spec.input != target.fa.spec.input)
    throw DimensionError("transfer_attack: source and target input shapes differ");
  ChunkRuleFactory factory = [&](int64_t) -> GradientRule {
    return [&](const Tensor& xt, const std::vector<int>& yt, int) {
      return model_input_gradient(source, xt, yt);
    };
  };
  return pgd_over_dataset(target, ds, cfg, eval, factory);
}

AttackOutcome transfer_attack(const defense::DefensePipeline& source,
                              const defense::DefensePipeline& target, const data::Dataset& ds,
                              const AttackConfig& cfg, const EvalPolicy& eval) {
  if (source.fa.spec.input != target.fa.spec.input)
    throw DimensionError("transfer_attack: source and target input shapes differ");
  ChunkRuleFactory factory = [&](int64_t base) -> GradientRule {
    return [&, base](const Tensor& xt, const std::vector<int>& yt, int) {
      if (!source.transform.random_start) return bpda_gradient(source, xt, yt, cfg.surrogate);
      SeededGradientRule sampled = [&, base](const Tensor& xs, const std::vector<int>& ys,
                                             uint64_t sample_seed) {
        std::vector<uint64_t> seeds(static_cast<size_t>(xs.dim(0)));
        for (int64_t r = 0; r < xs.dim(0); ++r)
          seeds[static_cast<size_t>(r)] =
              rng_derive(sample_seed, static_cast<uint64_t>(base + r));
        return bpda_gradient(source, xs, ys, cfg.surrogate, &seeds);
      };
      return eot_gradient(sampled, xt, yt, cfg.eot_samples, cfg.rng_seed);
    };
  };
  return pgd_over_dataset(target, ds, cfg, eval, factory);
}

QueryOracle make_pipeline_oracle(const defense::DefensePipeline& p, const EvalPolicy& eval) {
  return [&p, eval](const Tensor& candidates, int64_t example_index) {
    std::vector<uint64_t> seeds(static_cast<size_t>(candidates.dim(0)),
                                eval_transform_seed(eval, example_index, 0));
    return defense::defense_forward_batch(p, candidates, seeds);
  };
}

AttackResult blackbox_query_attack(const QueryOracle& oracle, const data::Dataset& ds,
                                   const AttackConfig& cfg, int population, int generations) {
  cfg.validate();
  if (population < 1 || generations < 0)
    throw ArgumentError("blackbox_query_attack: population >= 1, generations >= 0");
  const int64_t n = ds.size();
  if (n == 0) throw ArgumentError("blackbox_query_attack: empty dataset");
  const int64_t px = ds.images.size() / n;

  AttackResult res;
  res.adversarial = ds.images;
  res.success.assign(static_cast<size_t>(n), 0);
  res.queries_used.assign(static_cast<size_t>(n), 0);

  const double eps = cfg.epsilon;
  const double sigma = 0.25 * eps;  // mutation scale

  parallel_for(n, [&](int64_t r) {
    const double* clean = ds.images.data() + r * px;
    const int y = ds.labels[static_cast<size_t>(r)];
    Rng rng(rng_derive(rng_derive(cfg.rng_seed, kQueryStream), static_cast<uint64_t>(r)));

    std::vector<std::vector<double>> perts(static_cast<size_t>(population),
                                           std::vector<double>(static_cast<size_t>(px), 0.0));
    for (int c = 1; c < population; ++c)
      for (int64_t i = 0; i < px; ++i) perts[static_cast<size_t>(c)][static_cast<size_t>(i)] =
          rng.uniform(-eps, eps);

    std::vector<double> fitness(static_cast<size_t>(population), 0.0);
    int64_t queries = 0;
    int found = -1;

    auto materialize = [&](const std::vector<double>& pert, double* out) {
      for (int64_t i = 0; i < px; ++i) out[i] = clip01(clean[i] + pert[static_cast<size_t>(i)]);
    };
    auto evaluate_all = [&]() {
      Tensor cand({population, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
      for (int c = 0; c < population; ++c)
        materialize(perts[static_cast<size_t>(c)], cand.data() + int64_t(c) * px);
      Tensor logits = oracle(cand, r);
      queries += population;
      const int64_t classes = logits.dim(1);
      for (int c = 0; c < population; ++c) {
        const double* row = logits.data() + int64_t(c) * classes;
        // fitness = cross entropy of the true class (maximize)
        double m = row[0];
        for (int64_t k = 1; k < classes; ++k) m = std::max(m, row[k]);
        double denom = 0.0;
        for (int64_t k = 0; k < classes; ++k) denom += std::exp(row[k] - m);
        fitness[static_cast<size_t>(c)] = m + std::log(denom) - row[y];
        int pred = 0;
        for (int64_t k = 1; k < classes; ++k)
          if (row[k] > row[pred]) pred = static_cast<int>(k);
        if (pred != y && found < 0) found = c;
      }
    };

    evaluate_all();
    for (int gen = 0; gen < generations && found < 0; ++gen) {
      std::vector<int> order(static_cast<size_t>(population));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return fitness[static_cast<size_t>(a)] > fitness[static_cast<size_t>(b)];
      });
      int parents = std::max(1, population / 2);
      std::vector<std::vector<double>> next(static_cast<size_t>(population));
      next[0] = perts[static_cast<size_t>(order[0])];  // elitism 1
      for (int c = 1; c < population; ++c) {
        const std::vector<double>& parent =
            perts[static_cast<size_t>(order[static_cast<size_t>((c - 1) % parents)])];
        std::vector<double> child(static_cast<size_t>(px));
        for (int64_t i = 0; i < px; ++i) {
          double v = parent[static_cast<size_t>(i)] + rng.uniform(-sigma, sigma);
          if (v > eps) v = eps;
          if (v < -eps) v = -eps;
          child[static_cast<size_t>(i)] = v;
        }
        next[static_cast<size_t>(c)] = std::move(child);
      }
      perts = std::move(next);
      evaluate_all();
    }

    res.queries_used[static_cast<size_t>(r)] = queries;
    double* out_row = res.adversarial.data() + r * px;
    if (found >= 0) {
      materialize(perts[static_cast<size_t>(found)], out_row);
      res.success[static_cast<size_t>(r)] = 1;
    } else {
      // best-effort candidate: highest loss seen in the final population
      int best = 0;
      for (int c = 1; c < population; ++c)
        if (fitness[static_cast<size_t>(c)] > fitness[static_cast<size_t>(best)]) best = c;
      materialize(perts[static_cast<size_t>(best)], out_row);
    }
  });
  enforce_budget(ds.images, res.adversarial, cfg.epsilon);
  return res;
}

ReparamOutcome reparameterization_attack(const defense::DefensePipeline& p,
                                         const data::Dataset& train_split,
                                         const data::Dataset& val_split,
                                         const nn::ModelSpec& surrogate_spec,
                                         const nn::SGDConfig& surrogate_train,
                                         const AttackConfig& cfg, const EvalPolicy& eval,
                                         uint64_t seed) {
  surrogate_spec.validate();
  auto out_shape = surrogate_spec.output_shape();
  const nn::InputShape& in = surrogate_spec.input;
  bool image_shaped = out_shape == std::vector<int64_t>{in.channels, in.height, in.width} ||
                      out_shape == std::vector<int64_t>{in.flat()};
  if (!image_shaped)
    throw ConfigError("reparameterization surrogate must map images to images, got output " +
                      shape_str(out_shape));
  if (train_split.size() == 0 || val_split.size() == 0)
    throw ArgumentError("reparameterization_attack: empty split");

  ReparamOutcome out;
  out.surrogate = nn::init_params(surrogate_spec, rng_derive(seed, 0x11));

  auto mse_epoch = [&](const data::Dataset& split, uint64_t epoch, bool train,
                       nn::SGDState* state) {
    double total = 0.0;
    uint64_t stream = rng_derive(seed, train ? 0x21 : 0x22);
    for (const auto& batch :
         data::batch_indices(split.size(), surrogate_train.batch_size,
                             rng_derive(rng_derive(seed, train ? 0x31 : 0x32), epoch))) {
      data::Dataset mb = data::gather(split, batch);
      std::vector<uint64_t> seeds(batch.size());
      for (size_t i = 0; i < batch.size(); ++i)
        seeds[i] = defense::transform_seed(stream, uint64_t(batch[i]), epoch);
      Tensor start;  // h sees the randomly started point the transform saw
      Tensor target =
          defense::adversarial_transform_batch(p.fb, p.transform, mb.images, seeds, nullptr,
                                               &start);
      Tape tape;
      int xid = tape.leaf(start);
      nn::ForwardIds ids = nn::record_forward(tape, out.surrogate, xid);
      int diff = tape.sub(ids.logits, tape.leaf(target.reshaped(tape.value(ids.logits).shape())));
      int sq = tape.mul(diff, diff);
      int loss = tape.scale(tape.sum(sq), 1.0 / static_cast<double>(tape.value(sq).size()));
      total += tape.value(loss)[0] * static_cast<double>(batch.size());
      if (train) {
        GradMap grads = tape.backward(loss);
        std::map<std::string, Tensor> gmap;
        for (size_t i = 0; i < out.surrogate.params.size(); ++i)
          gmap[out.surrogate.params[i].first] = grads.wrt(ids.params[i]);
        nn::sgd_step(out.surrogate, gmap, *state, surrogate_train);
      }
    }
    return total / static_cast<double>(split.size());
  };

  nn::SGDState state;
  for (int epoch = 0; epoch < surrogate_train.epochs; ++epoch) {
    out.train_loss.push_back(mse_epoch(train_split, uint64_t(epoch), true, &state));
    out.validation_loss.push_back(mse_epoch(val_split, uint64_t(epoch), false, nullptr));
  }

  // PGD through the differentiable f_a(clip(h(x))).
  GradientRule rule = [&](const Tensor& xt, const std::vector<int>& yt, int) {
    Tape tape;
    int xid = tape.leaf(xt);
    nn::ForwardIds h_ids = nn::record_forward(tape, out.surrogate, xid);
    int img = tape.clamp(tape.reshape(h_ids.logits, xt.shape()), 0.0, 1.0);
    nn::ForwardIds fa_ids = nn::record_forward(tape, p.fa, img);
    int loss = tape.cross_entropy(fa_ids.logits, yt, /*mean_reduce=*/false);
    return tape.backward(loss).wrt(xid);
  };

  const data::Dataset& ds = val_split;
  AttackOutcome pgd = pgd_over_dataset(p, ds, cfg, eval,
                                       [&](int64_t) -> GradientRule { return rule; });
  out.result = std::move(pgd.result);
  out.robust_accuracy = pgd.robust_accuracy;
  return out;
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "pgd") return AttackKind::Pgd;
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "bpda") return AttackKind::BpdaUnrolled;
  if (s == "bpda-identity") return AttackKind::BpdaIdentity;
  if (s == "transfer-wt") return AttackKind::TransferWT;
  if (s == "transfer-blackbox") return AttackKind::TransferBlackbox;
  if (s == "transfer-smalln") return AttackKind::TransferSmallN;
  if (s == "query-genetic") return AttackKind::QueryGenetic;
  if (s == "reparam") return AttackKind::Reparam;
  throw ConfigError("unknown attack kind: " + s);
}

const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::BpdaUnrolled: return "bpda";
    case AttackKind::BpdaIdentity: return "bpda-identity";
    case AttackKind::TransferWT: return "transfer-wt";
    case AttackKind::TransferBlackbox: return "transfer-blackbox";
    case AttackKind::TransferSmallN: return "transfer-smalln";
    case AttackKind::QueryGenetic: return "query-genetic";
    case AttackKind::Reparam: return "reparam";
  }
  return "?";
}

bool is_bpda_kind(AttackKind k) {
  return k == AttackKind::BpdaUnrolled || k == AttackKind::BpdaIdentity;
}

SuiteReport worst_case_eval(const defense::DefensePipeline& p, const data::Dataset& ds,
                            const std::vector<AttackSpec>& suite, const SuiteContext& ctx) {
  if (suite.empty()) throw ArgumentError("worst_case_eval: empty attack suite");
  SuiteReport report;
  report.standard_accuracy = pipeline_accuracy(p, ds, ctx.eval);

  const bool degenerate = p.transform.steps == 0 && !p.transform.random_start;
  for (const AttackSpec& spec : suite) {
    double acc = 0.0;
    switch (spec.kind) {
      case AttackKind::Pgd: {
        if (!degenerate)
          throw ConfigError("attack '" + spec.name +
                            "': direct pgd is undefined on a non-degenerate defense; use bpda");
        AttackOutcome o = bpda_identity_attack(p, ds, spec.cfg, ctx.eval);
        acc = o.robust_accuracy;
        break;
      }
      case AttackKind::Fgsm: {
        if (!degenerate)
          throw ConfigError("attack '" + spec.name +
                            "': direct fgsm is undefined on a non-degenerate defense");
        AttackResult r = fgsm(p.fa, ds.images, ds.labels, spec.cfg.epsilon);
        int64_t correct = 0;
        std::vector<int> pred;
        for (int64_t lo = 0; lo < ds.size(); lo += kChunk) {
          int64_t hi = std::min(ds.size(), lo + kChunk);
          pred = pipeline_predict(p, rows_of(r.adversarial, lo, hi), lo, ctx.eval);
          for (int64_t i = 0; i < hi - lo; ++i)
            if (pred[static_cast<size_t>(i)] == ds.labels[static_cast<size_t>(lo + i)])
              ++correct;
        }
        acc = static_cast<double>(correct) / static_cast<double>(ds.size());
        break;
      }
      case AttackKind::BpdaUnrolled:
        acc = bpda_unrolled_attack(p, ds, spec.cfg, ctx.eval).robust_accuracy;
        break;
      case AttackKind::BpdaIdentity:
        acc = bpda_identity_attack(p, ds, spec.cfg, ctx.eval).robust_accuracy;
        break;
      case AttackKind::TransferWT:
        acc = transfer_attack(p.fa, p, ds, spec.cfg, ctx.eval).robust_accuracy;
        break;
      case AttackKind::TransferBlackbox:
        if (!ctx.blackbox_source)
          throw ConfigError("attack '" + spec.name + "': no independently trained source model");
        acc = transfer_attack(*ctx.blackbox_source, p, ds, spec.cfg, ctx.eval).robust_accuracy;
        break;
      case AttackKind::TransferSmallN: {
        auto it = ctx.smalln_sources.find(spec.smalln_steps);
        if (it == ctx.smalln_sources.end() || !it->second)
          throw ConfigError("attack '" + spec.name + "': no small-N source pipeline for N=" +
                            std::to_string(spec.smalln_steps));
        acc = transfer_attack(*it->second, p, ds, spec.cfg, ctx.eval).robust_accuracy;
        break;
      }
      case AttackKind::QueryGenetic: {
        AttackResult r = blackbox_query_attack(make_pipeline_oracle(p, ctx.eval), ds, spec.cfg,
                                               spec.population, spec.generations);
        int64_t fooled = 0;
        for (uint8_t s : r.success) fooled += s;
        acc = 1.0 - static_cast<double>(fooled) / static_cast<double>(ds.size());
        break;
      }
      case AttackKind::Reparam: {
        if (!ctx.reparam_train_split || !ctx.reparam_val_split)
          throw ConfigError("attack '" + spec.name + "': reparam needs train/val splits");
        data::Dataset h_train =
            data::take(*ctx.reparam_train_split, spec.reparam_train_count);
        ReparamOutcome o =
            reparameterization_attack(p, h_train, ds, spec.reparam_spec, spec.reparam_train,
                                      spec.cfg, ctx.eval, spec.cfg.rng_seed);
        acc = o.robust_accuracy;
        break;
      }
    }
    report.per_attack.emplace_back(spec.name, acc);
  }

  auto pick_min = [](const std::vector<std::pair<std::string, double>>& entries, double* acc,
                     std::string* name) {
    *acc = entries.front().second;
    *name = entries.front().first;
    for (const auto& [n, a] : entries) {
      if (a < *acc || (a == *acc && n < *name)) {
        *acc = a;
        *name = n;
      }
    }
  };
  pick_min(report.per_attack, &report.worst_case, &report.best_attack);

  std::vector<std::pair<std::string, double>> bpda_entries;
  for (size_t i = 0; i < suite.size(); ++i)
    if (is_bpda_kind(suite[i].kind)) bpda_entries.push_back(report.per_attack[i]);
  report.has_bpda = !bpda_entries.empty();
  if (report.has_bpda)
    pick_min(bpda_entries, &report.worst_case_bpda, &report.best_bpda_attack);
  return report;
}

}  // namespace advt::attacks
