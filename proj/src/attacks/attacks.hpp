#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "defense/transform.hpp"
#include "nn/model.hpp"
#include "nn/train.hpp"

namespace advt::attacks {

struct AttackConfig {
  double epsilon = 0.3;
  int steps = 50;
  double stepsize = 0.01;
  int eot_samples = 1;
  SurrogateMode surrogate = SurrogateMode::SoftSign;
  uint64_t rng_seed = 0;
  void validate() const;
};

struct AttackResult {
  Tensor adversarial;                 // same shape as the clean batch
  std::vector<uint8_t> success;       // per example: target misclassifies it
  std::vector<int64_t> queries_used;  // query attacks only
};

// How a randomized pipeline is sampled when grading attack outputs: one
// fixed transform sample per example index (seed, index), or a fresh sample
// per call (salted by a caller-advanced counter).
struct EvalPolicy {
  uint64_t seed = 0xE7A1;
  bool resample_per_call = false;
  const char* name() const { return resample_per_call ? "resample-per-call" : "fixed-per-example"; }
};

std::vector<int> pipeline_predict(const defense::DefensePipeline& p, const Tensor& batch,
                                  int64_t index_base, const EvalPolicy& eval,
                                  uint64_t call_salt = 0);
double pipeline_accuracy(const defense::DefensePipeline& p, const data::Dataset& ds,
                         const EvalPolicy& eval);

// dL/dx of the batch for the current PGD iterate; `iter` identifies the
// PGD step, `index_base` the global index of row 0.
using GradientRule =
    std::function<Tensor(const Tensor& x, const std::vector<int>& y, int iter)>;
using Predictor = std::function<std::vector<int>(const Tensor& x)>;

AttackResult fgsm(const nn::Model& model, const Tensor& x, const std::vector<int>& y,
                  double epsilon);

// Untargeted L-inf PGD driven by an arbitrary gradient rule. One uniform
// random start inside the epsilon ball, keyed by (cfg.rng_seed, global row).
AttackResult pgd_attack(const GradientRule& grad, const Predictor& predict, const Tensor& x,
                        const std::vector<int>& y, const AttackConfig& cfg,
                        int64_t index_base = 0);
AttackResult pgd_attack(const nn::Model& model, const Tensor& x, const std::vector<int>& y,
                        const AttackConfig& cfg);

// Records the full N-step transformation of `x0_id` as tape operations with
// exact forward values and surrogate backward for sgn and the projection.
// The inner f_b gradient appears as explicit forward ops, so the returned
// node is differentiable end to end. start_deltas, when non-null, supplies
// the (constant) random start offsets.
int record_unrolled_transform(Tape& tape, const defense::DefensePipeline& p, int x0_id,
                              SurrogateMode surrogate, const Tensor* start_deltas);

// BPDA: d loss(f_a(g(x)), y) / dx via the unrolled tape. With random_start
// on, per-row start seeds must be supplied (one transformation sample).
Tensor bpda_gradient(const defense::DefensePipeline& p, const Tensor& x,
                     const std::vector<int>& y, SurrogateMode surrogate,
                     const std::vector<uint64_t>* start_seeds = nullptr);

struct AttackOutcome {
  AttackResult result;
  double robust_accuracy = 0.0;
};

// PGD with BPDA gradients; wraps them in EOT over cfg.eot_samples when the
// defense has a random start.
AttackOutcome bpda_unrolled_attack(const defense::DefensePipeline& p, const data::Dataset& ds,
                                   const AttackConfig& cfg, const EvalPolicy& eval);

// BPDA-I: forward through a sampled g, backward treating g as the identity;
// averaged over cfg.eot_samples transformation samples.
AttackOutcome bpda_identity_attack(const defense::DefensePipeline& p, const data::Dataset& ds,
                                   const AttackConfig& cfg, const EvalPolicy& eval);

// Mean of `rule` over K independently seeded transformation samples.
using SeededGradientRule =
    std::function<Tensor(const Tensor& x, const std::vector<int>& y, uint64_t sample_seed)>;
Tensor eot_gradient(const SeededGradientRule& rule, const Tensor& x, const std::vector<int>& y,
                    int K, uint64_t seed);

// Central-difference probe of one Jacobian entry of a black-box g.
double finite_difference_entry(const std::function<Tensor(const Tensor&)>& g, const Tensor& x,
                               int64_t i, int64_t j, double h);

// Adversarial examples crafted on `source`, graded on `target`.
AttackOutcome transfer_attack(const nn::Model& source, const defense::DefensePipeline& target,
                              const data::Dataset& ds, const AttackConfig& cfg,
                              const EvalPolicy& eval);
// BPDA-crafted variant (the small-N transfer study).
AttackOutcome transfer_attack(const defense::DefensePipeline& source,
                              const defense::DefensePipeline& target, const data::Dataset& ds,
                              const AttackConfig& cfg, const EvalPolicy& eval);

// Label/logit queries only; no gradient entry point exists on this surface.
using QueryOracle = std::function<Tensor(const Tensor& candidates, int64_t example_index)>;
AttackResult blackbox_query_attack(const QueryOracle& oracle, const data::Dataset& ds,
                                   const AttackConfig& cfg, int population, int generations);
QueryOracle make_pipeline_oracle(const defense::DefensePipeline& p, const EvalPolicy& eval);

struct ReparamOutcome {
  nn::Model surrogate;
  std::vector<double> train_loss;       // per-epoch mean squared error
  std::vector<double> validation_loss;  // same, on the held-out split
  AttackResult result;
  double robust_accuracy = 0.0;
};

// Trains h to mimic the transformation (h(x + delta) ~ g_delta(x)), then
// runs PGD through the differentiable f_a(h(x)).
ReparamOutcome reparameterization_attack(const defense::DefensePipeline& p,
                                         const data::Dataset& train_split,
                                         const data::Dataset& val_split,
                                         const nn::ModelSpec& surrogate_spec,
                                         const nn::SGDConfig& surrogate_train,
                                         const AttackConfig& cfg, const EvalPolicy& eval,
                                         uint64_t seed);

enum class AttackKind {
  Pgd,
  Fgsm,
  BpdaUnrolled,
  BpdaIdentity,
  TransferWT,
  TransferBlackbox,
  TransferSmallN,
  QueryGenetic,
  Reparam,
};
AttackKind attack_kind_from_string(const std::string& s);
const char* to_string(AttackKind k);
bool is_bpda_kind(AttackKind k);

struct AttackSpec {
  std::string name;
  AttackKind kind = AttackKind::BpdaUnrolled;
  AttackConfig cfg;
  int population = 12;   // query attack
  int generations = 30;  // query attack
  int smalln_steps = 1;  // transfer-smalln source defense
  nn::ModelSpec reparam_spec;
  nn::SGDConfig reparam_train;
  int reparam_train_count = 128;
};

struct SuiteContext {
  const nn::Model* blackbox_source = nullptr;  // independently trained model
  // small-N source defenses, keyed by their transform step count
  std::map<int, const defense::DefensePipeline*> smalln_sources;
  const data::Dataset* reparam_train_split = nullptr;
  const data::Dataset* reparam_val_split = nullptr;
  EvalPolicy eval;
};

struct SuiteReport {
  double standard_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_attack;
  double worst_case = 0.0;
  std::string best_attack;
  bool has_bpda = false;
  double worst_case_bpda = 0.0;
  std::string best_bpda_attack;
};

// Runs every attack in the suite and aggregates worst cases (overall and
// BPDA-only). Ties on the minimum go to the lexicographically first name.
SuiteReport worst_case_eval(const defense::DefensePipeline& p, const data::Dataset& ds,
                            const std::vector<AttackSpec>& suite, const SuiteContext& ctx);

}  // namespace advt::attacks
