#pragma once

#include <map>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "nn/model.hpp"

namespace advt::nn {

struct SGDConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  int epochs = 1;
  int batch_size = 64;
  void validate() const;
};

struct SGDState {
  std::map<std::string, Tensor> velocity;
};

// Classic momentum: v <- momentum * v + g; theta <- theta - lr * v.
// Grads must carry one entry per parameter, keyed by name.
void sgd_step(Model& model, const std::map<std::string, Tensor>& grads, SGDState& state,
              const SGDConfig& cfg);

struct TrainTrace {
  std::vector<double> epoch_loss;
};

TrainTrace train_standard(Model& model, const data::Dataset& ds, const SGDConfig& cfg,
                          uint64_t seed);

struct PgdParams {
  double epsilon = 0.3;
  int steps = 7;
  double stepsize = 0.075;
  bool random_start = true;
};

// Untargeted PGD on a plain model; one seed per batch row drives the random
// start. epsilon == 0 degenerates to the identity.
Tensor craft_pgd_batch(const Model& model, const Tensor& x, const std::vector<int>& y,
                       const PgdParams& p, const std::vector<uint64_t>& seeds);

// Standard loop, except each minibatch is replaced by PGD adversarial
// examples crafted on the current parameters before the step.
TrainTrace adversarial_train(Model& model, const data::Dataset& ds, const SGDConfig& cfg,
                             const PgdParams& attack, uint64_t seed);

double evaluate_accuracy(const Model& model, const data::Dataset& ds);

}  // namespace advt::nn
