#include "core/tape.hpp"

#include <cmath>
#include <cstring>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace advt {

SurrogateMode surrogate_from_string(const std::string& s) {
  if (s == "exact") return SurrogateMode::Exact;
  if (s == "soft-sign" || s == "softsign") return SurrogateMode::SoftSign;
  if (s == "tanh") return SurrogateMode::Tanh;
  if (s == "identity") return SurrogateMode::Identity;
  throw ConfigError("unknown surrogate mode: " + s);
}

const char* to_string(SurrogateMode m) {
  switch (m) {
    case SurrogateMode::Exact: return "exact";
    case SurrogateMode::SoftSign: return "soft-sign";
    case SurrogateMode::Tanh: return "tanh";
    case SurrogateMode::Identity: return "identity";
  }
  return "?";
}

namespace {

double unary_fwd(UnaryKind k, double x) {
  switch (k) {
    case UnaryKind::Relu: return x > 0.0 ? x : 0.0;
    case UnaryKind::Sign: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    case UnaryKind::SoftSign: return x / (1.0 + std::fabs(x));
    case UnaryKind::Tanh: return std::tanh(x);
    case UnaryKind::Heaviside: return x > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

// Derivative recorded for the backward pass, evaluated at the forward input.
double unary_bwd(UnaryKind k, SurrogateMode m, double x) {
  switch (k) {
    case UnaryKind::Relu: return x > 0.0 ? 1.0 : 0.0;
    case UnaryKind::SoftSign: {
      double d = 1.0 + std::fabs(x);
      return 1.0 / (d * d);
    }
    case UnaryKind::Tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case UnaryKind::Heaviside: return 0.0;
    case UnaryKind::Sign:
      switch (m) {
        case SurrogateMode::Exact: return 0.0;  // a.e. derivative of the step
        case SurrogateMode::SoftSign: {
          double d = 1.0 + std::fabs(x);
          return 1.0 / (d * d);
        }
        case SurrogateMode::Tanh: {
          double t = std::tanh(x);
          return 1.0 - t * t;
        }
        case SurrogateMode::Identity: return 1.0;
      }
  }
  return 0.0;
}

// Projection derivative factor for the input being projected. The exact
// clamp derivative is the interior indicator; every surrogate mode uses the
// 1/(1+|u|)^2 tail outside the ball.
double project_bwd_factor(SurrogateMode m, double u, double delta) {
  if (m == SurrogateMode::Exact) return std::fabs(u) <= delta ? 1.0 : 0.0;
  if (std::fabs(u) < delta) return 1.0;
  double d = 1.0 + std::fabs(u);
  return 1.0 / (d * d);
}

struct Rows {
  int64_t rows, cols;
};

Rows as_rows(const Tensor& t, const char* what) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError(std::string(what) + " expects a vector or matrix, got " +
                       shape_str(t.shape()));
}

void softmax_row(const double* x, double* out, int64_t c) {
  double m = x[0];
  for (int64_t j = 1; j < c; ++j) m = std::max(m, x[j]);
  double denom = 0.0;
  for (int64_t j = 0; j < c; ++j) {
    out[j] = std::exp(x[j] - m);
    denom += out[j];
  }
  for (int64_t j = 0; j < c; ++j) out[j] /= denom;
}

}  // namespace

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  auto row = [&](int64_t i) {
    const double* ai = pa + i * k;
    double* oi = po + i * n;
    for (int64_t t = 0; t < k; ++t) {
      double av = ai[t];
      const double* bt = pb + t * n;
      for (int64_t j = 0; j < n; ++j) oi[j] += av * bt[j];
    }
  };
  if (m * k * n >= (1 << 20)) {
    parallel_for(m, row);
  } else {
    for (int64_t i = 0; i < m; ++i) row(i);
  }
  return out;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& k, int stride, int padding) {
  if (x.rank() != 4 || k.rank() != 4) {
    throw DimensionError("conv2d expects NCHW input and FCkk kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(k.shape()));
  }
  if (x.dim(1) != k.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                         ", kernel expects " + std::to_string(k.dim(1)));
  }
  if (stride < 1 || padding < 0) throw ArgumentError("conv2d needs stride >= 1 and padding >= 0");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t F = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const int64_t OH = (H + 2 * padding - KH) / stride + 1;
  const int64_t OW = (W + 2 * padding - KW) / stride + 1;
  if (H + 2 * padding < KH || W + 2 * padding < KW || OH < 1 || OW < 1) {
    throw DimensionError("conv2d non-positive output size for input " + shape_str(x.shape()) +
                         " kernel " + shape_str(k.shape()));
  }
  Tensor out({N, F, OH, OW});
  auto one = [&](int64_t n) {
    const double* xn = x.data() + n * C * H * W;
    double* on = out.data() + n * F * OH * OW;
    for (int64_t f = 0; f < F; ++f) {
      const double* kf = k.data() + f * C * KH * KW;
      for (int64_t oi = 0; oi < OH; ++oi) {
        for (int64_t oj = 0; oj < OW; ++oj) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            const double* xc = xn + c * H * W;
            const double* kc = kf + c * KH * KW;
            for (int64_t u = 0; u < KH; ++u) {
              int64_t i = oi * stride - padding + u;
              if (i < 0 || i >= H) continue;
              for (int64_t v = 0; v < KW; ++v) {
                int64_t j = oj * stride - padding + v;
                if (j < 0 || j >= W) continue;
                acc += xc[i * W + j] * kc[u * KW + v];
              }
            }
          }
          on[(f * OH + oi) * OW + oj] = acc;
        }
      }
    }
  };
  parallel_for(N, one);
  return out;
}

Tensor conv2d_input_vjp_kernel(const Tensor& gy, const Tensor& k, int stride, int padding,
                               int64_t in_h, int64_t in_w) {
  const int64_t N = gy.dim(0), F = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
  const int64_t C = k.dim(1), KH = k.dim(2), KW = k.dim(3);
  if (k.dim(0) != F) {
    throw DimensionError("conv input-vjp: kernel filter count " + std::to_string(k.dim(0)) +
                         " does not match gradient channels " + std::to_string(F));
  }
  Tensor gx({N, C, in_h, in_w});
  auto one = [&](int64_t n) {
    double* gxn = gx.data() + n * C * in_h * in_w;
    const double* gyn = gy.data() + n * F * OH * OW;
    for (int64_t f = 0; f < F; ++f) {
      const double* kf = k.data() + f * C * KH * KW;
      for (int64_t oi = 0; oi < OH; ++oi) {
        for (int64_t oj = 0; oj < OW; ++oj) {
          double g = gyn[(f * OH + oi) * OW + oj];
          for (int64_t c = 0; c < C; ++c) {
            double* gxc = gxn + c * in_h * in_w;
            const double* kc = kf + c * KH * KW;
            for (int64_t u = 0; u < KH; ++u) {
              int64_t i = oi * stride - padding + u;
              if (i < 0 || i >= in_h) continue;
              for (int64_t v = 0; v < KW; ++v) {
                int64_t j = oj * stride - padding + v;
                if (j < 0 || j >= in_w) continue;
                gxc[i * in_w + j] += g * kc[u * KW + v];
              }
            }
          }
        }
      }
    }
  };
  parallel_for(N, one);
  return gx;
}

Tensor conv2d_kernel_vjp_kernel(const Tensor& x, const Tensor& gy, int stride, int padding,
                                int64_t kh, int64_t kw) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t F = gy.dim(1), OH = gy.dim(2), OW = gy.dim(3);
  Tensor gk({F, C, kh, kw});
  auto one_filter = [&](int64_t f) {
    double* gkf = gk.data() + f * C * kh * kw;
    for (int64_t n = 0; n < N; ++n) {
      const double* xn = x.data() + n * C * H * W;
      const double* gyn = gy.data() + (n * F + f) * OH * OW;
      for (int64_t oi = 0; oi < OH; ++oi) {
        for (int64_t oj = 0; oj < OW; ++oj) {
          double g = gyn[oi * OW + oj];
          for (int64_t c = 0; c < C; ++c) {
            const double* xc = xn + c * H * W;
            double* gkc = gkf + c * kh * kw;
            for (int64_t u = 0; u < kh; ++u) {
              int64_t i = oi * stride - padding + u;
              if (i < 0 || i >= H) continue;
              for (int64_t v = 0; v < kw; ++v) {
                int64_t j = oj * stride - padding + v;
                if (j < 0 || j >= W) continue;
                gkc[u * kw + v] += xc[i * W + j] * g;
              }
            }
          }
        }
      }
    }
  };
  parallel_for(F, one_filter);
  return gk;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  Rows rc = as_rows(logits, "argmax");
  std::vector<int> out(static_cast<size_t>(rc.rows));
  for (int64_t r = 0; r < rc.rows; ++r) {
    const double* row = logits.data() + r * rc.cols;
    int best = 0;
    for (int64_t c = 1; c < rc.cols; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

std::vector<int> argmin_rows(const Tensor& logits) {
  Rows rc = as_rows(logits, "argmin");
  std::vector<int> out(static_cast<size_t>(rc.rows));
  for (int64_t r = 0; r < rc.rows; ++r) {
    const double* row = logits.data() + r * rc.cols;
    int best = 0;
    for (int64_t c = 1; c < rc.cols; ++c)
      if (row[c] < row[best]) best = static_cast<int>(c);
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

Tensor eval_node(const TapeNode& n, const Tensor* va, const Tensor* vb) {
  switch (n.kind) {
    case OpKind::Leaf:
      return n.value;
    case OpKind::Add: {
      Tensor out = *va;
      for (int64_t i = 0; i < out.size(); ++i) out[i] += (*vb)[i];
      return out;
    }
    case OpKind::Sub: {
      Tensor out = *va;
      for (int64_t i = 0; i < out.size(); ++i) out[i] -= (*vb)[i];
      return out;
    }
    case OpKind::Mul: {
      Tensor out = *va;
      for (int64_t i = 0; i < out.size(); ++i) out[i] *= (*vb)[i];
      return out;
    }
    case OpKind::Scale: {
      Tensor out = *va;
      for (int64_t i = 0; i < out.size(); ++i) out[i] *= n.scalar;
      return out;
    }
    case OpKind::Matmul:
      return matmul_values(*va, *vb);
    case OpKind::AddBias: {
      Tensor out = *va;
      if (out.rank() == 2) {
        const int64_t rows = out.dim(0), cols = out.dim(1);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) out.at2(r, c) += (*vb)[c];
      } else {  // N x C x H x W plus per-channel bias
        const int64_t n = out.dim(0), c = out.dim(1), hw = out.dim(2) * out.dim(3);
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t ci = 0; ci < c; ++ci) {
            double b = (*vb)[ci];
            double* p = out.data() + (ni * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += b;
          }
      }
      return out;
    }
    case OpKind::Conv2d:
      return conv2d_forward(*va, *vb, n.stride, n.padding);
    case OpKind::Conv2dInputVjp:
      return conv2d_input_vjp_kernel(*va, *vb, n.stride, n.padding, n.in_h, n.in_w);
    case OpKind::Unary: {
      Tensor out = *va;
      for (int64_t i = 0; i < out.size(); ++i) out[i] = unary_fwd(n.unary, out[i]);
      return out;
    }
    case OpKind::ProjectLinf: {
      Tensor out = *va;
      const double delta = n.hi;
      for (int64_t i = 0; i < out.size(); ++i) {
        double u = out[i] - (*vb)[i];
        if (u > delta) u = delta;
        if (u < -delta) u = -delta;
        out[i] = (*vb)[i] + u;
      }
      return out;
    }
    case OpKind::Clamp: {
      Tensor out = *va;
      for (int64_t i = 0; i < out.size(); ++i) {
        if (out[i] < n.lo) out[i] = n.lo;
        if (out[i] > n.hi) out[i] = n.hi;
      }
      return out;
    }
    case OpKind::Reshape:
      return va->reshaped(n.value.shape());
    case OpKind::Sum: {
      double acc = 0.0;
      for (int64_t i = 0; i < va->size(); ++i) acc += (*va)[i];
      return Tensor::scalar(acc);
    }
    case OpKind::Softmax: {
      Rows rc = as_rows(*va, "softmax");
      Tensor out = *va;
      for (int64_t r = 0; r < rc.rows; ++r)
        softmax_row(va->data() + r * rc.cols, out.data() + r * rc.cols, rc.cols);
      return out;
    }
    case OpKind::CrossEntropy: {
      Rows rc = as_rows(*va, "cross_entropy");
      double total = 0.0;
      for (int64_t r = 0; r < rc.rows; ++r) {
        const double* row = va->data() + r * rc.cols;
        double m = row[0];
        for (int64_t c = 1; c < rc.cols; ++c) m = std::max(m, row[c]);
        double denom = 0.0;
        for (int64_t c = 0; c < rc.cols; ++c) denom += std::exp(row[c] - m);
        total += m + std::log(denom) - row[n.targets[static_cast<size_t>(r)]];
      }
      return Tensor::scalar(total * n.scalar);
    }
  }
  throw Error("unreachable op kind");
}

int Tape::push(TapeNode n) {
  shapes_.push_back(n.value.shape());
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_id(int id, const char* what) const {
  if (id < 0 || id >= size()) {
    throw ArgumentError(std::string(what) + ": node id " + std::to_string(id) +
                        " not on this tape");
  }
}

int Tape::leaf(Tensor value) {
  TapeNode n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check_id(a, "add");
  check_id(b, "add");
  if (!value(a).same_shape(value(b)))
    throw DimensionError("add shape mismatch: " + shape_str(value(a).shape()) + " vs " +
                         shape_str(value(b).shape()));
  TapeNode n;
  n.kind = OpKind::Add;
  n.a = a;
  n.b = b;
  n.value = eval_node(n, &value(a), &value(b));
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  check_id(a, "sub");
  check_id(b, "sub");
  if (!value(a).same_shape(value(b)))
    throw DimensionError("sub shape mismatch: " + shape_str(value(a).shape()) + " vs " +
                         shape_str(value(b).shape()));
  TapeNode n;
  n.kind = OpKind::Sub;
  n.a = a;
  n.b = b;
  n.value = eval_node(n, &value(a), &value(b));
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  check_id(a, "mul");
  check_id(b, "mul");
  if (!value(a).same_shape(value(b)))
    throw DimensionError("mul shape mismatch: " + shape_str(value(a).shape()) + " vs " +
                         shape_str(value(b).shape()));
  TapeNode n;
  n.kind = OpKind::Mul;
  n.a = a;
  n.b = b;
  n.value = eval_node(n, &value(a), &value(b));
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  check_id(a, "scale");
  TapeNode n;
  n.kind = OpKind::Scale;
  n.a = a;
  n.scalar = s;
  n.value = eval_node(n, &value(a), nullptr);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  check_id(a, "matmul");
  check_id(b, "matmul");
  TapeNode n;
  n.kind = OpKind::Matmul;
  n.a = a;
  n.b = b;
  n.value = eval_node(n, &value(a), &value(b));
  return push(std::move(n));
}

int Tape::add_bias(int x, int bias) {
  check_id(x, "add_bias");
  check_id(bias, "add_bias");
  const Tensor& vx = value(x);
  const Tensor& vb = value(bias);
  bool ok = vb.rank() == 1 && (vx.rank() == 2 || vx.rank() == 4) && vb.dim(0) == vx.dim(1);
  if (!ok) {
    throw DimensionError("add_bias expects NxM (or NCHW) plus a bias over dim 1, got " +
                         shape_str(vx.shape()) + " and " + shape_str(vb.shape()));
  }
  TapeNode n;
  n.kind = OpKind::AddBias;
  n.a = x;
  n.b = bias;
  n.value = eval_node(n, &vx, &vb);
  return push(std::move(n));
}

int Tape::conv2d(int x, int kernel, int stride, int padding) {
  check_id(x, "conv2d");
  check_id(kernel, "conv2d");
  TapeNode n;
  n.kind = OpKind::Conv2d;
  n.a = x;
  n.b = kernel;
  n.stride = stride;
  n.padding = padding;
  n.value = eval_node(n, &value(x), &value(kernel));
  return push(std::move(n));
}

int Tape::conv2d_input_vjp(int gy, int kernel, int stride, int padding, int64_t in_h,
                           int64_t in_w) {
  check_id(gy, "conv2d_input_vjp");
  check_id(kernel, "conv2d_input_vjp");
  TapeNode n;
  n.kind = OpKind::Conv2dInputVjp;
  n.a = gy;
  n.b = kernel;
  n.stride = stride;
  n.padding = padding;
  n.in_h = in_h;
  n.in_w = in_w;
  n.value = eval_node(n, &value(gy), &value(kernel));
  return push(std::move(n));
}

int Tape::unary(UnaryKind kind, int x, SurrogateMode mode) {
  check_id(x, "unary");
  TapeNode n;
  n.kind = OpKind::Unary;
  n.a = x;
  n.unary = kind;
  n.mode = mode;
  n.value = eval_node(n, &value(x), nullptr);
  return push(std::move(n));
}

int Tape::project_linf(int x, int center, double delta, SurrogateMode mode) {
  check_id(x, "project_linf");
  check_id(center, "project_linf");
  if (delta <= 0.0) throw ArgumentError("project_linf needs delta > 0");
  if (!value(x).same_shape(value(center)))
    throw DimensionError("project_linf shape mismatch: " + shape_str(value(x).shape()) +
                         " vs " + shape_str(value(center).shape()));
  TapeNode n;
  n.kind = OpKind::ProjectLinf;
  n.a = x;
  n.b = center;
  n.hi = delta;
  n.lo = -delta;
  n.mode = mode;
  n.value = eval_node(n, &value(x), &value(center));
  return push(std::move(n));
}

int Tape::clamp(int x, double lo, double hi) {
  check_id(x, "clamp");
  if (!(lo < hi)) throw ArgumentError("clamp needs lo < hi");
  TapeNode n;
  n.kind = OpKind::Clamp;
  n.a = x;
  n.lo = lo;
  n.hi = hi;
  n.value = eval_node(n, &value(x), nullptr);
  return push(std::move(n));
}

int Tape::reshape(int x, std::vector<int64_t> shape) {
  check_id(x, "reshape");
  TapeNode n;
  n.kind = OpKind::Reshape;
  n.a = x;
  n.value = value(x).reshaped(std::move(shape));
  return push(std::move(n));
}

int Tape::sum(int x) {
  check_id(x, "sum");
  TapeNode n;
  n.kind = OpKind::Sum;
  n.a = x;
  n.value = eval_node(n, &value(x), nullptr);
  return push(std::move(n));
}

int Tape::softmax(int x) {
  check_id(x, "softmax");
  TapeNode n;
  n.kind = OpKind::Softmax;
  n.a = x;
  n.value = eval_node(n, &value(x), nullptr);
  return push(std::move(n));
}

int Tape::cross_entropy(int logits, std::vector<int> targets, bool mean_reduce) {
  check_id(logits, "cross_entropy");
  Rows rc = as_rows(value(logits), "cross_entropy");
  if (static_cast<int64_t>(targets.size()) != rc.rows) {
    throw ArgumentError("cross_entropy: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(rc.rows) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= rc.cols) {
      throw ArgumentError("cross_entropy target " + std::to_string(t) + " out of range [0," +
                          std::to_string(rc.cols) + ")");
    }
  }
  TapeNode n;
  n.kind = OpKind::CrossEntropy;
  n.a = logits;
  n.targets = std::move(targets);
  n.scalar = mean_reduce ? 1.0 / static_cast<double>(rc.rows) : 1.0;
  n.value = eval_node(n, &value(logits), nullptr);
  // probabilities saved for backward
  Tensor probs = value(logits);
  for (int64_t r = 0; r < rc.rows; ++r)
    softmax_row(value(logits).data() + r * rc.cols, probs.data() + r * rc.cols, rc.cols);
  n.saved = std::move(probs);
  return push(std::move(n));
}

Tensor GradMap::wrt(int id) const {
  const Tensor& g = grads_[static_cast<size_t>(id)];
  if (!g.empty()) return g;
  return Tensor(shapes_[static_cast<size_t>(id)]);
}

GradMap Tape::backward(int root) const {
  check_id(root, "backward");
  if (nodes_[static_cast<size_t>(root)].value.size() != 1) {
    throw ArgumentError("backward root must be scalar-valued, got shape " +
                        shape_str(nodes_[static_cast<size_t>(root)].value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  auto slot = [&](int id) -> Tensor& {
    Tensor& g = grads[static_cast<size_t>(id)];
    if (g.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].value.shape());
    return g;
  };
  slot(root)[0] = 1.0;

  for (int id = root; id >= 0; --id) {
    const Tensor& g = grads[static_cast<size_t>(id)];
    if (g.empty()) continue;
    const TapeNode& n = nodes_[static_cast<size_t>(id)];
    switch (n.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::Add: {
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        for (int64_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case OpKind::Sub: {
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        for (int64_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case OpKind::Mul: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        for (int64_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * vb[i];
          gb[i] += g[i] * va[i];
        }
        break;
      }
      case OpKind::Scale: {
        Tensor& ga = slot(n.a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
        break;
      }
      case OpKind::Matmul: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
        Tensor bt = transpose2d(vb);
        Tensor at = transpose2d(va);
        Tensor da = matmul_values(g, bt);
        Tensor db = matmul_values(at, g);
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        for (int64_t i = 0; i < da.size(); ++i) ga[i] += da[i];
        for (int64_t i = 0; i < db.size(); ++i) gb[i] += db[i];
        break;
      }
      case OpKind::AddBias: {
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        if (g.rank() == 2) {
          const int64_t rows = g.dim(0), cols = g.dim(1);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) {
              ga[r * cols + c] += g[r * cols + c];
              gb[c] += g[r * cols + c];
            }
        } else {
          const int64_t nn = g.dim(0), cc = g.dim(1), hw = g.dim(2) * g.dim(3);
          for (int64_t ni = 0; ni < nn; ++ni)
            for (int64_t ci = 0; ci < cc; ++ci) {
              const double* gp = g.data() + (ni * cc + ci) * hw;
              double* gap = ga.data() + (ni * cc + ci) * hw;
              double acc = 0.0;
              for (int64_t i = 0; i < hw; ++i) {
                gap[i] += gp[i];
                acc += gp[i];
              }
              gb[ci] += acc;
            }
        }
        break;
      }
      case OpKind::Conv2d: {
        const Tensor& vx = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vk = nodes_[static_cast<size_t>(n.b)].value;
        Tensor dx = conv2d_input_vjp_kernel(g, vk, n.stride, n.padding, vx.dim(2), vx.dim(3));
        Tensor dk = conv2d_kernel_vjp_kernel(vx, g, n.stride, n.padding, vk.dim(2), vk.dim(3));
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        for (int64_t i = 0; i < dx.size(); ++i) ga[i] += dx[i];
        for (int64_t i = 0; i < dk.size(); ++i) gb[i] += dk[i];
        break;
      }
      case OpKind::Conv2dInputVjp: {
        // y = T(a; K) is bilinear; reverse through both arguments.
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vk = nodes_[static_cast<size_t>(n.b)].value;
        Tensor da = conv2d_forward(g, vk, n.stride, n.padding);
        Tensor dk = conv2d_kernel_vjp_kernel(g, va, n.stride, n.padding, vk.dim(2), vk.dim(3));
        Tensor& ga = slot(n.a);
        Tensor& gb = slot(n.b);
        for (int64_t i = 0; i < da.size(); ++i) ga[i] += da[i];
        for (int64_t i = 0; i < dk.size(); ++i) gb[i] += dk[i];
        break;
      }
      case OpKind::Unary: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& ga = slot(n.a);
        for (int64_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * unary_bwd(n.unary, n.mode, va[i]);
        break;
      }
      case OpKind::ProjectLinf: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vc = nodes_[static_cast<size_t>(n.b)].value;
        Tensor& ga = slot(n.a);
        Tensor& gc = slot(n.b);
        const double delta = n.hi;
        for (int64_t i = 0; i < g.size(); ++i) {
          double f = project_bwd_factor(n.mode, va[i] - vc[i], delta);
          ga[i] += g[i] * f;
          gc[i] += g[i] * (1.0 - f);
        }
        break;
      }
      case OpKind::Clamp: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor& ga = slot(n.a);
        for (int64_t i = 0; i < g.size(); ++i)
          if (va[i] >= n.lo && va[i] <= n.hi) ga[i] += g[i];
        break;
      }
      case OpKind::Reshape: {
        Tensor& ga = slot(n.a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case OpKind::Sum: {
        Tensor& ga = slot(n.a);
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        break;
      }
      case OpKind::Softmax: {
        const Tensor& y = n.value;
        Rows rc = as_rows(y, "softmax");
        Tensor& ga = slot(n.a);
        for (int64_t r = 0; r < rc.rows; ++r) {
          const double* yr = y.data() + r * rc.cols;
          const double* gr = g.data() + r * rc.cols;
          double dot = 0.0;
          for (int64_t c = 0; c < rc.cols; ++c) dot += gr[c] * yr[c];
          for (int64_t c = 0; c < rc.cols; ++c)
            ga[r * rc.cols + c] += yr[c] * (gr[c] - dot);
        }
        break;
      }
      case OpKind::CrossEntropy: {
        const Tensor& probs = n.saved;
        Rows rc = as_rows(probs, "cross_entropy");
        Tensor& ga = slot(n.a);
        const double gs = g[0] * n.scalar;
        for (int64_t r = 0; r < rc.rows; ++r) {
          const double* pr = probs.data() + r * rc.cols;
          int t = n.targets[static_cast<size_t>(r)];
          for (int64_t c = 0; c < rc.cols; ++c) {
            double d = pr[c] - (c == t ? 1.0 : 0.0);
            ga[r * rc.cols + c] += gs * d;
          }
        }
        break;
      }
    }
  }
  return GradMap(std::move(grads), shapes_);
}

bool Tape::replay_matches() const {
  for (const TapeNode& n : nodes_) {
    if (n.kind == OpKind::Leaf) continue;
    const Tensor* va = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)].value : nullptr;
    const Tensor* vb = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)].value : nullptr;
    Tensor redo = eval_node(n, va, vb);
    if (!redo.same_shape(n.value)) return false;
    if (std::memcmp(redo.data(), n.value.data(), sizeof(double) * redo.size()) != 0)
      return false;
  }
  return true;
}

}  // namespace advt
