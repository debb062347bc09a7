#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace advt::nn {

enum class LayerKind { Dense, Conv, Relu, Flatten };

struct Layer {
  LayerKind kind = LayerKind::Relu;
  // Dense
  int64_t in = 0, out = 0;
  // Conv
  int64_t in_ch = 0, out_ch = 0;
  int k = 0, stride = 1, padding = 0;

  static Layer dense(int64_t in, int64_t out);
  static Layer conv(int64_t in_ch, int64_t out_ch, int k, int stride, int padding);
  static Layer relu();
  static Layer flatten();
};

struct InputShape {
  int64_t channels = 1, height = 28, width = 28;
  int64_t flat() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

// Ordered layer stack. class_count > 0 declares a classifier whose final
// output length must equal class_count; class_count == 0 declares an
// image-to-image network (used by the reparameterization surrogate).
struct ModelSpec {
  InputShape input;
  std::vector<Layer> layers;
  int class_count = 0;

  void validate() const;  // throws ConfigError on inconsistent dimensions
  // Shape after each layer, starting with the input shape (CHW / flat as
  // {n} entries). Also the validator's work horse.
  std::vector<std::vector<int64_t>> shape_trace() const;
  std::vector<int64_t> output_shape() const;

  std::string to_json() const;
  static ModelSpec from_json(const std::string& json_text);
  bool operator==(const ModelSpec&) const;
};

struct Model {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> params;  // spec order
  uint64_t param_seed = 0;

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  int64_t param_count() const;
};

// He-style fan-in normal init for weights, zero biases; fully determined by
// (spec, seed) through the counter RNG.
Model init_params(const ModelSpec& spec, uint64_t seed);

struct ForwardIds {
  int input = -1;
  int logits = -1;
  std::vector<int> params;  // leaf ids, aligned with model.params
};

// Records the model's forward pass on the tape; batch enters as node
// input_id (shape N x C x H x W, or N x flat for dense-only stacks).
ForwardIds record_forward(Tape& tape, const Model& model, int input_id);

// Plain forward without keeping a caller-visible tape.
Tensor model_forward(const Model& model, const Tensor& batch);

// Records, as *forward* tape operations, the gradient of the summed
// cross-entropy loss of this model at `input_id` toward `targets`, and
// returns the node holding d loss / d input. This is what lets an attack
// unroll an iterative transformation that internally consumes model
// gradients: the returned node is itself differentiable by Tape::backward
// (ReLU gates appear as zero-derivative Heaviside masks, matching the
// almost-everywhere second derivative).
int record_input_gradient(Tape& tape, const Model& model, int input_id,
                          const std::vector<int>& targets);

// Ensures a 4-D batch matches the spec input (throws DimensionError).
void check_batch_shape(const ModelSpec& spec, const Tensor& batch);

}  // namespace advt::nn
