#pragma once

#include <functional>

#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace advt {

// A scalar function under test: given a tape and the id of the input leaf,
// build the computation and return the root node id.
using TapedScalarFn = std::function<int(Tape&, int)>;

// Central-difference check of reverse-mode gradients.
// Returns max over coordinates of |g_ad - g_fd| / max(1, |g_fd|).
double grad_check(const TapedScalarFn& fn, const Tensor& point, double step);

}  // namespace advt
