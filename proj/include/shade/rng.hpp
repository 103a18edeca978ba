#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "shade/error.hpp"

namespace shade {

// Deterministic random source. Distributions are implemented on top of raw
// mt19937_64 draws so the serializable state is the engine state and nothing
// else (std::*_distribution objects carry hidden caches that would break
// bit-exact checkpoint resume).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  // Independent stream derived from (seed, stream) without advancing any
  // shared state. Used for per-image / per-domain / per-layer substreams.
  static Rng derived(uint64_t seed, uint64_t stream) { return Rng(mix(seed, stream)); }
  static uint64_t mix(uint64_t seed, uint64_t stream);

  uint64_t u64() { return eng_(); }
  double uniform();                    // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();                     // standard normal, stateless Box-Muller
  double gamma(double shape);          // Gamma(shape, scale=1), shape > 0
  double beta(double a, double b);
  int randint(int n);                  // uniform over [0, n), n >= 1

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = randint(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<int> sample_indices(int n, int k);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
};

}  // namespace shade
