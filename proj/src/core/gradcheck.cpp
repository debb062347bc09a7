#include "core/gradcheck.hpp"

#include <cmath>

#include "core/error.hpp"

namespace advt {

namespace {

double eval_scalar(const TapedScalarFn& fn, const Tensor& point) {
  Tape tape;
  int x = tape.leaf(point);
  int root = fn(tape, x);
  const Tensor& v = tape.value(root);
  if (v.size() != 1) throw ArgumentError("grad_check function must be scalar-valued");
  return v[0];
}

}  // namespace

double grad_check(const TapedScalarFn& fn, const Tensor& point, double step) {
  if (step <= 0.0) throw ArgumentError("grad_check needs step > 0");

  Tape tape;
  int x = tape.leaf(point);
  int root = fn(tape, x);
  Tensor g_ad = tape.backward(root).wrt(x);

  double worst = 0.0;
  Tensor probe = point;
  for (int64_t i = 0; i < point.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + step;
    double up = eval_scalar(fn, probe);
    probe[i] = orig - step;
    double down = eval_scalar(fn, probe);
    probe[i] = orig;
    double g_fd = (up - down) / (2.0 * step);
    double err = std::fabs(g_ad[i] - g_fd) / std::max(1.0, std::fabs(g_fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace advt
