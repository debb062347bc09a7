#pragma once

#include <cstdint>
#include <functional>

namespace advt {

// Process-wide worker count used by parallel_for. 1 disables threading.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker, so writes to disjoint per-index slots need no synchronization.
// Nested calls from inside a worker run serially. Exceptions propagate.
// Callers are responsible for making fn(i) independent of execution order;
// everything in this project keys randomness by index, so results are
// identical at any thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace advt
