#pragma once

#include <cmath>
#include <cstdint>

namespace icrsel {

// Counter-based generator: every draw is addressed by (stream, role, index)
// and hashed independently, so results do not depend on evaluation order or
// thread schedule.  The mixer is the splitmix64 finalizer applied to the
// combined key.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Deterministic sub-seed, e.g. one per replication.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    return mix(mix(seed) ^ salt);
  }

  std::uint64_t bits(std::uint64_t stream, std::uint32_t role, std::uint32_t index) const {
    const std::uint64_t ri = (static_cast<std::uint64_t>(role) << 32) | index;
    return mix(mix(mix(seed_) ^ stream) ^ ri);
  }

  // Uniform on [0, 1).
  double uniform(std::uint64_t stream, std::uint32_t role, std::uint32_t index) const {
    return static_cast<double>(bits(stream, role, index) >> 11) * 0x1.0p-53;
  }

  // Uniform on the open interval (0, 1).
  double uniform_open(std::uint64_t stream, std::uint32_t role, std::uint32_t index) const {
    return (static_cast<double>(bits(stream, role, index) >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(std::uint64_t stream, std::uint32_t role, std::uint32_t index, double lo,
                 double hi) const {
    return lo + (hi - lo) * uniform(stream, role, index);
  }

  // Standard normal via the inverse CDF (Acklam's rational approximation,
  // ~1e-9 relative accuracy — far below every tolerance used here).
  double normal(std::uint64_t stream, std::uint32_t role, std::uint32_t index) const {
    return normal_quantile(uniform_open(stream, role, index));
  }

  static double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;

    if (p < plow) {
      const double q = std::sqrt(-2.0 * std::log(p));
      return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
             ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - plow) {
      const double q = std::sqrt(-2.0 * std::log(1.0 - p));
      return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
             ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

 private:
  std::uint64_t seed_;
};

}  // namespace icrsel
