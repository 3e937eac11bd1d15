#ifndef EXCURSIM_MEASURES_HPP
#define EXCURSIM_MEASURES_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "excursim/kernels.hpp"

namespace excursim {

// Finite purely atomic measure.  Atoms at identical locations are kept
// separate; every observable below is mass-additive, so merging is a
// presentation concern only.
struct AtomicMeasure {
  struct Atom {
    double location = 0.0;
    double mass = 0.0;
  };

  std::vector<Atom> atoms;

  AtomicMeasure() = default;
  explicit AtomicMeasure(std::vector<Atom> a) : atoms(std::move(a)) {}

  static AtomicMeasure point(double location, double mass) {
    AtomicMeasure m;
    m.add(location, mass);
    return m;
  }

  void add(double location, double mass) {
    if (mass < 0.0) throw std::invalid_argument("AtomicMeasure: negative mass");
    if (mass > 0.0) atoms.push_back({location, mass});
  }

  double total_mass() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.mass;
    return s;
  }

  bool empty() const { return atoms.empty(); }
};

// Bounded C^2 test functions with analytic first and second derivatives.
struct TestFunction {
  enum class Form { constant, poly_capped, cosine, gaussian_bump };

  Form form = Form::constant;
  double p0 = 1.0;  // constant c | cosine freq | bump center
  double p1 = 0.0;  // cosine phase | bump width

  static TestFunction constant(double c) { return {Form::constant, c, 0.0}; }
  // x^2 / (1 + x^2): bounded, with bounded derivatives of all orders
  static TestFunction poly_capped() { return {Form::poly_capped, 0.0, 0.0}; }
  static TestFunction cosine(double freq, double phase = 0.0) {
    return {Form::cosine, freq, phase};
  }
  static TestFunction gaussian_bump(double center, double width) {
    if (!(width > 0.0)) throw std::invalid_argument("gaussian_bump: width must be positive");
    return {Form::gaussian_bump, center, width};
  }

  double value(double x) const {
    switch (form) {
      case Form::constant: return p0;
      case Form::poly_capped: return x * x / (1.0 + x * x);
      case Form::cosine: return std::cos(p0 * x + p1);
      case Form::gaussian_bump: {
        const double u = (x - p0) / p1;
        return std::exp(-0.5 * u * u);
      }
    }
    return 0.0;
  }

  double d1(double x) const {
    switch (form) {
      case Form::constant: return 0.0;
      case Form::poly_capped: {
        const double d = 1.0 + x * x;
        return 2.0 * x / (d * d);
      }
      case Form::cosine: return -p0 * std::sin(p0 * x + p1);
      case Form::gaussian_bump: {
        const double u = (x - p0) / p1;
        return -u / p1 * std::exp(-0.5 * u * u);
      }
    }
    return 0.0;
  }

  double d2(double x) const {
    switch (form) {
      case Form::constant: return 0.0;
      case Form::poly_capped: {
        const double d = 1.0 + x * x;
        return (2.0 - 6.0 * x * x) / (d * d * d);
      }
      case Form::cosine: return -p0 * p0 * std::cos(p0 * x + p1);
      case Form::gaussian_bump: {
        const double u = (x - p0) / p1;
        return (u * u - 1.0) / (p1 * p1) * std::exp(-0.5 * u * u);
      }
    }
    return 0.0;
  }

  std::string name() const {
    switch (form) {
      case Form::constant: return "const(" + std::to_string(p0) + ")";
      case Form::poly_capped: return "poly_capped";
      case Form::cosine: return "cos(" + std::to_string(p0) + "x+" + std::to_string(p1) + ")";
      case Form::gaussian_bump:
        return "bump(" + std::to_string(p0) + "," + std::to_string(p1) + ")";
    }
    return "?";
  }
};

// <phi, mu>
inline double integrate(const AtomicMeasure& mu, const TestFunction& phi) {
  double s = 0.0;
  for (const auto& a : mu.atoms) s += a.mass * phi.value(a.location);
  return s;
}

// The spatial-interaction quadratic-variation term:
//   sum_ij m_i m_j phi'(x_i) phi'(x_j) rho(x_i - x_j),
// the closed double-sum form of int <h(z - .) phi', mu>^2 dz.
inline double quadratic_variation_density(const AtomicMeasure& mu, const TestFunction& phi,
                                          const CorrelationFunction& rho) {
  const std::size_t n = mu.atoms.size();
  double s = 0.0;
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i)
    weight[i] = mu.atoms[i].mass * phi.d1(mu.atoms[i].location);
  for (std::size_t i = 0; i < n; ++i) {
    s += weight[i] * weight[i] * rho.rho0;
    for (std::size_t j = i + 1; j < n; ++j)
      s += 2.0 * weight[i] * weight[j] * rho(mu.atoms[i].location - mu.atoms[j].location);
  }
  return s;
}

// Total variation of mu - nu; exact for atomic measures (atoms grouped by
// bit-identical location).  The two sides are accumulated separately in their
// original atom order, so identical measures give exactly zero.
inline double tv_distance(const AtomicMeasure& mu, const AtomicMeasure& nu) {
  struct Entry {
    double location;
    double mass;
    bool from_nu;
  };
  std::vector<Entry> diff;
  diff.reserve(mu.atoms.size() + nu.atoms.size());
  for (const auto& a : mu.atoms) diff.push_back({a.location, a.mass, false});
  for (const auto& a : nu.atoms) diff.push_back({a.location, a.mass, true});
  std::stable_sort(diff.begin(), diff.end(),
                   [](const Entry& x, const Entry& y) { return x.location < y.location; });
  double total = 0.0;
  std::size_t i = 0;
  while (i < diff.size()) {
    const double loc = diff[i].location;
    double pos = 0.0, neg = 0.0;
    for (; i < diff.size() && diff[i].location == loc; ++i)
      (diff[i].from_nu ? neg : pos) += diff[i].mass;
    total += std::fabs(pos - neg);
  }
  return total;
}

}  // namespace excursim

#endif  // EXCURSIM_MEASURES_HPP
