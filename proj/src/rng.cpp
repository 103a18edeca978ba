#include "shade/rng.hpp"

#include <cmath>
#include <sstream>

namespace shade {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t Rng::mix(uint64_t seed, uint64_t stream) {
  uint64_t x = seed ^ (0x632BE59BD9B4E019ULL + stream * 0x9E3779B97F4A7C15ULL);
  uint64_t a = splitmix64(x);
  uint64_t b = splitmix64(x);
  return a ^ (b << 1);
}

double Rng::uniform() {
  // 53-bit mantissa in [0, 1).
  return static_cast<double>(u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller without the cached second variate.
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw contract_error("Rng::gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a+1) * U^(1/a).
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze method.
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = uniform();
    double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::beta(double a, double b) {
  double ga = gamma(a);
  double gb = gamma(b);
  double s = ga + gb;
  while (s <= 0.0) {  // both underflowed; essentially probability zero
    ga = gamma(a);
    gb = gamma(b);
    s = ga + gb;
  }
  return ga / s;
}

int Rng::randint(int n) {
  if (n <= 0) throw contract_error("Rng::randint: n must be >= 1");
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x = u64();
  while (x >= limit) x = u64();
  return static_cast<int>(x % un);
}

std::vector<int> Rng::sample_indices(int n, int k) {
  if (k > n) throw contract_error("Rng::sample_indices: k > n");
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  // Partial Fisher-Yates: first k entries are the sample.
  for (int i = 0; i < k; ++i) {
    int j = i + randint(n - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
  if (is.fail()) throw data_error("Rng::set_state: malformed engine state");
}

}  // namespace shade
