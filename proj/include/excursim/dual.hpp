#ifndef EXCURSIM_DUAL_HPP
#define EXCURSIM_DUAL_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include "excursim/measures.hpp"
#include "excursim/rng.hpp"

namespace excursim {

// State of the constant-test-function dual jump chain: M particles and a
// scalar coefficient c.  Restricted to f == 1 the generator term G^n f
// vanishes, so the chain is pure jumps: a pair merge multiplies c by sigma,
// an immigration jump by <1, m>, and either decrements M.
struct DualState {
  int particle_count = 0;
  double coefficient = 1.0;
  double clock = 0.0;
  double accumulated_exponent = 0.0;  // int_0^t M_s (M_s + 1) / 2 ds
};

// One unbiased draw of the duality estimator for E[<1, Y_t>^n]:
//   c_t * <1, mu>^{M_t} * exp( int_0^t M_s(M_s+1)/2 ds ).
// Total jump rate at M is M(M-1)/2 + M = M(M+1)/2, which the exponent offsets
// in expectation; use the full M(M+1)/2 there, not a bare survival weight.
inline double dual_chain_sample(int n, double t, double sigma, double m_mass, double mu_mass,
                                Rng& rng) {
  if (n < 1) throw std::domain_error("dual_chain_sample: n must be >= 1");
  if (t < 0.0 || sigma < 0.0 || m_mass < 0.0 || mu_mass < 0.0)
    throw std::domain_error("dual_chain_sample: negative input");
  DualState s;
  s.particle_count = n;
  for (;;) {
    const double m = static_cast<double>(s.particle_count);
    const double rate = 0.5 * m * (m + 1.0);
    if (rate == 0.0) break;
    const double wait = rng.exponential(1.0 / rate);
    if (s.clock + wait >= t) {
      s.accumulated_exponent += rate * (t - s.clock);
      s.clock = t;
      break;
    }
    s.accumulated_exponent += rate * wait;
    s.clock += wait;
    const double pair_prob = (m - 1.0) / (m + 1.0);  // M(M-1)/2 over M(M+1)/2
    if (rng.uniform_co() < pair_prob)
      s.coefficient *= sigma;
    else
      s.coefficient *= m_mass;
    --s.particle_count;
  }
  return s.coefficient * std::pow(mu_mass, s.particle_count) * std::exp(s.accumulated_exponent);
}

// Total-mass moments m_1(t)..m_n(t) of the immigration process: <1, Y_t> is a
// diffusion with generator (sigma/2) x d^2/dx^2 + <1, m> d/dx, so
//   dm_k/dt = [ sigma k(k-1)/2 + k <1, m> ] m_{k-1},   m_k(0) = <1, mu>^k,
// a triangular system whose solutions are degree-k polynomials in t.
inline std::vector<double> moment_ode(int n, double t, double sigma, double m_mass,
                                      double mu_mass) {
  if (n < 1) throw std::domain_error("moment_ode: n must be >= 1");
  if (n > 8) throw std::invalid_argument("moment_ode: n > 8 unsupported");
  std::vector<double> prev{1.0};  // coefficients of m_0 == 1
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k) {
    const double ck = 0.5 * sigma * k * (k - 1.0) + k * m_mass;
    std::vector<double> cur(prev.size() + 1, 0.0);
    cur[0] = std::pow(mu_mass, k);
    for (std::size_t j = 0; j < prev.size(); ++j)
      cur[j + 1] = ck * prev[j] / static_cast<double>(j + 1);
    double v = 0.0;
    for (std::size_t j = cur.size(); j-- > 0;) v = v * t + cur[j];
    values.push_back(v);
    prev = std::move(cur);
  }
  return values;
}

// Closed-form heat evolution P_tau phi(x) at diffusivity rho0 (generator
// rho0/2 d^2/dx^2) for the analytic test-function suite.
inline double heat_evolve(const TestFunction& phi, double x, double tau, double rho0) {
  if (tau < 0.0) throw std::domain_error("heat_evolve: negative time");
  switch (phi.form) {
    case TestFunction::Form::constant:
      return phi.p0;
    case TestFunction::Form::cosine:
      return std::exp(-0.5 * rho0 * phi.p0 * phi.p0 * tau) * std::cos(phi.p0 * x + phi.p1);
    case TestFunction::Form::gaussian_bump: {
      const double v = phi.p1 * phi.p1 + rho0 * tau;
      return phi.p1 / std::sqrt(v) * std::exp(-0.5 * (x - phi.p0) * (x - phi.p0) / v);
    }
    case TestFunction::Form::poly_capped:
      break;
  }
  throw std::invalid_argument("heat_evolve: no closed form for " + phi.name());
}

namespace detail {

template <class F>
double simpson_segment(const F& f, double a, double fa, double b, double fb, double fm,
                       double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_segment(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1) +
         simpson_segment(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1);
}

template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_segment(f, a, fa, b, fb, fm, whole, tol, 48);
}

}  // namespace detail

// First-moment formula for the deterministic-rate immigration process:
//   E <phi, Y_t> = <P_t phi, mu> + q int_0^t <P_s phi, m> ds,
// with the s-integral done by adaptive Simpson to 1e-10.
inline double first_moment_field(const TestFunction& phi, double t, double rho0,
                                 const AtomicMeasure& mu, const AtomicMeasure& m,
                                 double q_const) {
  double head = 0.0;
  for (const auto& a : mu.atoms) head += a.mass * heat_evolve(phi, a.location, t, rho0);
  if (m.empty() || q_const == 0.0) return head;
  auto integrand = [&](double s) {
    double v = 0.0;
    for (const auto& a : m.atoms) v += a.mass * heat_evolve(phi, a.location, s, rho0);
    return v;
  };
  return head + q_const * detail::adaptive_simpson(integrand, 0.0, t, 1e-10);
}

}  // namespace excursim

#endif  // EXCURSIM_DUAL_HPP
