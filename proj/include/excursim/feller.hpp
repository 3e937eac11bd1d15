#ifndef EXCURSIM_FELLER_HPP
#define EXCURSIM_FELLER_HPP

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "excursim/rng.hpp"

namespace excursim {

// Masses this small are snapped to the trap at zero so atom pruning
// terminates bit-exactly.
inline constexpr double kAbsorptionFloor = 1e-300;

// E[exp(-z xi_t) | xi_0 = x] = exp{-x z / (1 + beta t z / 2)} for the
// branching diffusion d xi = sqrt(beta xi) dB.
inline double feller_laplace(double x, double t, double beta, double z) {
  if (x < 0.0 || t < 0.0 || z < 0.0 || !(beta > 0.0))
    throw std::domain_error("feller_laplace: negative input");
  if (t == 0.0) return std::exp(-x * z);
  return std::exp(-x * z / (1.0 + 0.5 * beta * t * z));
}

// P(xi_t = 0 | xi_0 = x) = exp{-2x / beta t}; zero is absorbing.
inline double feller_extinction_prob(double x, double t, double beta) {
  if (x < 0.0 || t < 0.0 || !(beta > 0.0))
    throw std::domain_error("feller_extinction_prob: negative input");
  if (t == 0.0) return x == 0.0 ? 1.0 : 0.0;
  return std::exp(-2.0 * x / (beta * t));
}

// Exact transition sampling via the Poisson-Gamma mixture implied by the
// Laplace transform: N ~ Poisson(2x / beta t), then Gamma(N, beta t / 2).
// N = 0 hits the trap, with probability exactly feller_extinction_prob.
inline double feller_exact_step(double x, double t, double beta, Rng& rng) {
  if (x < 0.0 || !(t > 0.0) || !(beta > 0.0))
    throw std::domain_error("feller_exact_step: bad input");
  if (x == 0.0) return 0.0;
  const double scale = 0.5 * beta * t;
  const std::uint64_t n = rng.poisson(x / scale);
  if (n == 0) return 0.0;
  const double y = rng.gamma_integer(n, scale);
  return y < kAbsorptionFloor ? 0.0 : y;
}

// Euler-Maruyama path for d xi = sqrt(sigma(t) xi) dB, clamped and absorbed
// at zero.  Kept as an independent cross-check of the exact sampler; the
// engine itself never uses it.
inline std::vector<double> feller_euler_path(double x0, const std::vector<double>& sigma_path,
                                             double dt, Rng& rng) {
  if (x0 < 0.0 || !(dt > 0.0)) throw std::domain_error("feller_euler_path: bad input");
  std::vector<double> path;
  path.reserve(sigma_path.size() + 1);
  path.push_back(x0);
  double x = x0;
  for (double sigma : sigma_path) {
    if (x == 0.0) {
      path.push_back(0.0);
      continue;
    }
    x += std::sqrt(x * sigma * dt) * rng.normal();
    if (x < kAbsorptionFloor) x = 0.0;
    path.push_back(x);
  }
  return path;
}

// Branching density sigma(.), bounded below by eps > 0.
struct SigmaField {
  double constant = 1.0;
  bool is_constant = true;
  std::function<double(double)> fn;

  static SigmaField constant_rate(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("SigmaField: rate must be positive");
    SigmaField s;
    s.constant = c;
    s.is_constant = true;
    return s;
  }

  static SigmaField varying(std::function<double(double)> f) {
    SigmaField s;
    s.is_constant = false;
    s.fn = std::move(f);
    return s;
  }

  double operator()(double x) const { return is_constant ? constant : fn(x); }
};

// The time change psi(t) = beta^{-1} int_0^t sigma(x(s)) ds turning a
// beta-branching diffusion into one with branching density sigma(.).
struct TimeChange {
  double beta = 1.0;
  SigmaField sigma;
  double epsilon = 0.0;  // lower bound on sigma, for the psi >= eps t / beta guard
  std::vector<std::pair<double, double>> accumulated{{0.0, 0.0}};  // (t, psi)

  double psi() const { return accumulated.back().second; }
  double time() const { return accumulated.back().first; }
};

// Left-endpoint rule: psi(t + dt) = psi(t) + sigma(x(t)) dt / beta.
inline void advance_time_change(TimeChange& tc, double position_at_t, double dt) {
  const double s = tc.sigma(position_at_t);
  if (tc.epsilon > 0.0 && s < tc.epsilon)
    throw std::runtime_error("advance_time_change: sigma below its configured lower bound");
  if (!(s > 0.0)) throw std::runtime_error("advance_time_change: sigma must be positive");
  tc.accumulated.emplace_back(tc.time() + dt, tc.psi() + s * dt / tc.beta);
}

}  // namespace excursim

#endif  // EXCURSIM_FELLER_HPP
