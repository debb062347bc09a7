#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace advt {

// Selects the backward derivative recorded for the non-smooth operators
// (sign, L-inf projection). Forward outputs never depend on the mode.
enum class SurrogateMode { Exact, SoftSign, Tanh, Identity };

SurrogateMode surrogate_from_string(const std::string& s);
const char* to_string(SurrogateMode m);

enum class UnaryKind { Relu, Sign, SoftSign, Tanh, Heaviside };

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Matmul,
  AddBias,
  Conv2d,
  Conv2dInputVjp,
  Unary,
  ProjectLinf,
  Clamp,
  Reshape,
  Sum,
  Softmax,
  CrossEntropy,
};

struct TapeNode {
  OpKind kind = OpKind::Leaf;
  int a = -1;
  int b = -1;
  Tensor value;                 // recorded forward output
  Tensor saved;                 // extra forward value kept for backward (CE: probabilities)
  double scalar = 0.0;          // Scale factor; CrossEntropy reduction scale
  double lo = 0.0, hi = 0.0;    // Clamp bounds; ProjectLinf stores delta in hi
  int stride = 1, padding = 0;  // conv parameters
  int64_t in_h = 0, in_w = 0;   // Conv2dInputVjp target spatial size
  UnaryKind unary = UnaryKind::Relu;
  SurrogateMode mode = SurrogateMode::Exact;
  std::vector<int> targets;  // CrossEntropy per-row target classes
};

// Gradients of one backward sweep, indexed by node id. Nodes the sweep never
// reached report a zero tensor of the node's shape.
class GradMap {
 public:
  GradMap(std::vector<Tensor> grads, std::vector<std::vector<int64_t>> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}
  Tensor wrt(int id) const;

 private:
  std::vector<Tensor> grads_;
  std::vector<std::vector<int64_t>> shapes_;
};

// Append-only record of a computation. Node inputs always precede the node,
// so one reverse sweep accumulates every gradient. Values are stored, not
// recomputed: replay_matches() can verify the record bit-exactly.
class Tape {
 public:
  int leaf(Tensor value);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double s);
  int matmul(int a, int b);
  int add_bias(int x, int bias);  // N x M plus length-M vector, or NCHW plus per-channel
  int conv2d(int x, int kernel, int stride, int padding);
  // Forward op computing the conv2d input gradient (transposed convolution).
  // Needed to express a model's input-gradient itself as taped computation.
  int conv2d_input_vjp(int gy, int kernel, int stride, int padding, int64_t in_h, int64_t in_w);
  int unary(UnaryKind kind, int x, SurrogateMode mode = SurrogateMode::Exact);
  int project_linf(int x, int center, double delta, SurrogateMode mode = SurrogateMode::Exact);
  int clamp(int x, double lo, double hi);
  int reshape(int x, std::vector<int64_t> shape);
  int sum(int x);
  int softmax(int x);  // row-wise over N x C
  // Mean (mean_reduce=true) or sum of per-row stable cross entropies.
  int cross_entropy(int logits, std::vector<int> targets, bool mean_reduce = true);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const TapeNode& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Reverse accumulation from a scalar root; throws ArgumentError otherwise.
  GradMap backward(int root) const;

  // Recomputes every non-leaf from its inputs and compares bit-exactly.
  bool replay_matches() const;

 private:
  int push(TapeNode n);
  void check_id(int id, const char* what) const;
  std::vector<TapeNode> nodes_;
  std::vector<std::vector<int64_t>> shapes_;  // mirrored for GradMap
};

// Elementwise forward kernels shared by record and replay.
Tensor eval_node(const TapeNode& n, const Tensor* va, const Tensor* vb);

// Convolution kernels (also used directly by replay and tests).
Tensor conv2d_forward(const Tensor& x, const Tensor& k, int stride, int padding);
Tensor conv2d_input_vjp_kernel(const Tensor& gy, const Tensor& k, int stride, int padding,
                               int64_t in_h, int64_t in_w);
Tensor conv2d_kernel_vjp_kernel(const Tensor& x, const Tensor& gy, int stride, int padding,
                                int64_t kh, int64_t kw);

Tensor matmul_values(const Tensor& a, const Tensor& b);

// argmax/argmin over the last axis of an N x C matrix; ties -> lowest index.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> argmin_rows(const Tensor& logits);

}  // namespace advt
