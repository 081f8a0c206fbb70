#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace augbc {

/// Seeded, portable PRNG with explicit sub-stream derivation.
///
/// Draws come from a splitmix64 sequence. `child(i)` derives an independent
/// stream from the parent's identity (not from its consumed position), so the
/// derivation path (seed, i0, i1, ...) fully determines every draw sequence
/// on every platform. Augmentation code derives one stream per
/// (clone, trajectory, transition, spec) and never shares streams across
/// work items.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(scramble(seed ^ kPhi)), state_(key_) {}

  /// Independent stream for sub-task `index`. Unaffected by draws made on
  /// this stream before or after the call.
  RngStream child(std::uint64_t index) const {
    return RngStream(FromKey{}, scramble(key_ ^ scramble(index + kGolden)));
  }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return scramble(state_);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Normal(mu, sigma) via Box-Muller (two uniforms per draw).
  double normal(double mu, double sigma) {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * kPi * u2);
  }

  /// Gamma(shape, 1) via Marsaglia-Tsang, with the u^(1/a) boost for shape < 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      const double u = 1.0 - uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal(0.0, 1.0);
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = 1.0 - uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Beta(a, b) as gamma(a) / (gamma(a) + gamma(b)).
  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    const double s = x + y;
    if (s <= 0.0) return 0.5;  // joint underflow, vanishingly rare
    return x / s;
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n must be >= 1");
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  /// k distinct indices drawn uniformly from [0, n), via partial Fisher-Yates.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("sample_indices: k > n");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key) : key_(key), state_(key) {}

  static std::uint64_t scramble(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kPhi = 0x6A09E667F3BCC909ULL;
  static constexpr double kPi = 3.14159265358979323846;

  std::uint64_t key_;    // stream identity, fixed at derivation
  std::uint64_t state_;  // draw position
};

}  // namespace augbc
