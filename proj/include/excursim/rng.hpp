#ifndef EXCURSIM_RNG_HPP
#define EXCURSIM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace excursim {

// splitmix64 finalizer; the basis of all seed derivation.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive a child seed from a parent seed and a tag.  Chained calls give the
// per-(replicate, stream, window, ...) streams; every consumer of randomness
// owns a seed derived this way, so adding or removing one consumer never
// shifts the draws of another.
inline std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t tag) {
  return splitmix64(splitmix64(parent) + tag);
}

template <class... Tags>
inline std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t tag, Tags... rest) {
  return mix_seed(mix_seed(parent, tag), rest...);
}

// Named stream tags for one trajectory replicate.
inline constexpr std::uint64_t kTagFlow = 0x464c4f57;         // "FLOW"
inline constexpr std::uint64_t kTagMass = 0x4d415353;         // "MASS"
inline constexpr std::uint64_t kTagImmigration = 0x494d4d49;  // "IMMI"
inline constexpr std::uint64_t kTagThinning = 0x5448494e;     // "THIN"
inline constexpr std::uint64_t kTagInitial = 0x494e4954;      // "INIT"
inline constexpr std::uint64_t kTagAtom = 0x41544f4d;         // "ATOM"
inline constexpr std::uint64_t kTagStep = 0x53544550;         // "STEP"

// All sampling goes through this wrapper.  The generator is xoshiro256++
// (32 bytes of state, cheap to construct per atom or per step) and every
// distribution below is implemented here, so a (seed, call sequence) pair
// reproduces bit-identical values on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : s_) word = (x = splitmix64(x));
  }

  std::uint64_t raw() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on (0, 1]; never returns 0 so logs are safe.
  double uniform() { return static_cast<double>((raw() >> 11) + 1) * 0x1.0p-53; }

  // Uniform on [0, 1).
  double uniform_co() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform_co(); }

  // Box-Muller, cosine branch only.  Wastes half a pair but keeps the
  // consumption pattern fixed at two uniforms per variate.
  double normal() {
    const double u = uniform();
    const double v = uniform_co();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925286766559 * v);
  }

  double exponential(double mean) { return -mean * std::log(uniform()); }

  // Exact Poisson sampler: Knuth's product method below 10, the PTRS
  // transformed-rejection sampler of Hormann (1993) above.  Both are exact;
  // the final PTRS acceptance test is the true density ratio.
  std::uint64_t poisson(double mean) {
    if (mean < 0.0 || !std::isfinite(mean)) throw std::domain_error("poisson: bad mean");
    if (mean == 0.0) return 0;
    if (mean < 10.0) {
      const double limit = std::exp(-mean);
      std::uint64_t k = 0;
      double prod = uniform();
      while (prod > limit) {
        ++k;
        prod *= uniform();
      }
      return k;
    }
    const double log_mean = std::log(mean);
    const double b = 0.931 + 2.53 * std::sqrt(mean);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      double u = uniform_co() - 0.5;
      double v = uniform_co();
      const double us = 0.5 - std::fabs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
      if (us >= 0.07 && v <= vr && kf >= 0.0) return static_cast<std::uint64_t>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
      const double rhs = -mean + kf * log_mean - std::lgamma(kf + 1.0);
      if (lhs <= rhs) return static_cast<std::uint64_t>(kf);
    }
  }

  // Gamma with integer shape: sum of exponentials up to shape 16 (the common
  // near-extinction regime), Marsaglia-Tsang beyond.
  double gamma_integer(std::uint64_t shape, double scale) {
    if (shape == 0) return 0.0;
    if (shape <= 16) {
      double log_prod = 0.0;
      for (std::uint64_t i = 0; i < shape; ++i) log_prod += std::log(uniform());
      return -scale * log_prod;
    }
    return gamma(static_cast<double>(shape), scale);
  }

  // Marsaglia-Tsang squeeze for shape >= 1.
  double gamma(double shape, double scale) {
    if (shape < 1.0) throw std::domain_error("gamma: shape < 1 unsupported");
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      const double x = normal();
      const double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      const double v = t * t * t;
      const double u = uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return scale * d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

  // Index in [0, n) for discrete sampling.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_co() * static_cast<double>(n)) % n;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t s_[4];
};

}  // namespace excursim

#endif  // EXCURSIM_RNG_HPP
