#pragma once

#include <cstdint>

namespace advt {

// SplitMix64 finalizer. Statistically solid and cheap; the whole project
// derives every random value from (key, counter) pairs so any stream can be
// re-addressed without replaying history.
inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives a child stream key. derive(k, a) != derive(k, b) for a != b in
// practice, and child streams do not collide with the parent.
inline uint64_t rng_derive(uint64_t key, uint64_t stream) {
  return mix64(mix64(key) ^ (stream + 0xA3EC4E5B36C1F9D7ULL));
}

// Counter-based generator: next value = mix64(key + counter). No hidden
// state beyond the counter, so identical (key, draw index) always yields the
// identical value regardless of thread or call site.
class Rng {
 public:
  explicit Rng(uint64_t key) : key_(key) {}

  uint64_t next_u64() { return mix64(key_ ^ mix64(++counter_)); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. Always consumes two draws.
  double normal();

  // [0, n). Modulo bias is negligible for the sizes used here.
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace advt
