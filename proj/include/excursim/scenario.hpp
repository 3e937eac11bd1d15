#ifndef EXCURSIM_SCENARIO_HPP
#define EXCURSIM_SCENARIO_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "excursim/feller.hpp"
#include "excursim/kernels.hpp"
#include "excursim/measures.hpp"
#include "excursim/rng.hpp"

namespace excursim {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A finite measure given either as an atom list or as a piecewise-linear
// density table.  Both support <f, .>, location sampling and total mass.
struct MeasureSpec {
  bool is_density = false;
  AtomicMeasure atoms;
  PiecewiseLinear density;
  std::vector<double> node_cdf;  // cumulative mass at density grid nodes
  double mass = 0.0;

  static MeasureSpec zero() { return MeasureSpec{}; }

  static MeasureSpec from_atoms(AtomicMeasure a) {
    MeasureSpec s;
    s.atoms = std::move(a);
    s.mass = s.atoms.total_mass();
    return s;
  }

  static MeasureSpec from_density(std::vector<double> grid, std::vector<double> values,
                                  std::optional<double> rescale_to = std::nullopt) {
    if (grid.size() < 2 || grid.size() != values.size())
      throw ConfigError("measure density: need >= 2 aligned grid points");
    if (!std::is_sorted(grid.begin(), grid.end()))
      throw ConfigError("measure density: grid must be sorted");
    for (double v : values)
      if (v < 0.0 || !std::isfinite(v)) throw ConfigError("measure density: values must be >= 0");
    MeasureSpec s;
    s.is_density = true;
    s.density = PiecewiseLinear{std::move(grid), std::move(values)};
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < s.density.grid.size(); ++i)
      total += 0.5 * (s.density.values[i] + s.density.values[i + 1]) *
               (s.density.grid[i + 1] - s.density.grid[i]);
    if (!(total > 0.0)) throw ConfigError("measure density: zero total mass");
    if (rescale_to) {
      const double f = *rescale_to / total;
      for (double& v : s.density.values) v *= f;
      total = *rescale_to;
    }
    s.mass = total;
    s.node_cdf.resize(s.density.grid.size(), 0.0);
    for (std::size_t i = 0; i + 1 < s.density.grid.size(); ++i)
      s.node_cdf[i + 1] = s.node_cdf[i] + 0.5 * (s.density.values[i] + s.density.values[i + 1]) *
                                              (s.density.grid[i + 1] - s.density.grid[i]);
    s.node_cdf.back() = total;
    return s;
  }

  double total_mass() const { return mass; }
  bool empty() const { return mass == 0.0; }

  // <f, .>: atom sum, or per-cell composite Simpson against the density (the
  // density is linear inside each cell, so only f limits the accuracy).
  template <class F>
  double integrate_fn(const F& f) const {
    if (!is_density) {
      double s = 0.0;
      for (const auto& a : atoms.atoms) s += a.mass * f(a.location);
      return s;
    }
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < density.grid.size(); ++i) {
      const double a = density.grid[i];
      const double b = density.grid[i + 1];
      const int sub = 64;
      const double h = (b - a) / sub;
      double cell = 0.0;
      for (int k = 0; k < sub; ++k) {
        const double x0 = a + k * h;
        const double x1 = x0 + h;
        const double xm = 0.5 * (x0 + x1);
        cell += h / 6.0 *
                (f(x0) * density(x0) + 4.0 * f(xm) * density(xm) + f(x1) * density(x1));
      }
      s += cell;
    }
    return s;
  }

  double integrate(const TestFunction& phi) const {
    return integrate_fn([&phi](double x) { return phi.value(x); });
  }

  // int int rho(x - y) phi'(x) phi'(y) d.(x) d.(y); the t = 0 value of the
  // spatial quadratic-variation term.  The density is piecewise linear, so
  // refining its grid for the double quadrature adds no modeling error.
  double qv_self(const TestFunction& phi, const CorrelationFunction& rho) const {
    if (!is_density) return quadratic_variation_density(atoms, phi, rho);
    const std::size_t n = 512;
    const double lo = density.grid.front();
    const double hi = density.grid.back();
    const double h = (hi - lo) / static_cast<double>(n);
    std::vector<double> node(n + 1), w(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
      node[i] = lo + static_cast<double>(i) * h;
      const double trap = (i == 0 || i == n) ? 0.5 * h : h;
      w[i] = trap * density(node[i]) * phi.d1(node[i]);
    }
    double s = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      s += w[i] * w[i] * rho.rho0;
      for (std::size_t j = i + 1; j <= n; ++j) s += 2.0 * w[i] * w[j] * rho(node[i] - node[j]);
    }
    return s;
  }

  double sample_location(Rng& rng) const {
    if (empty()) throw std::logic_error("MeasureSpec: sampling from the zero measure");
    if (!is_density) {
      double u = rng.uniform_co() * mass;
      for (const auto& a : atoms.atoms) {
        if (u < a.mass) return a.location;
        u -= a.mass;
      }
      return atoms.atoms.back().location;
    }
    const double target = rng.uniform_co() * mass;
    const auto it = std::upper_bound(node_cdf.begin(), node_cdf.end(), target);
    std::size_t cell = it == node_cdf.begin()
                           ? 0
                           : static_cast<std::size_t>(it - node_cdf.begin()) - 1;
    cell = std::min(cell, density.grid.size() - 2);
    const double x0 = density.grid[cell];
    const double h = density.grid[cell + 1] - x0;
    const double f0 = density.values[cell];
    const double f1 = density.values[cell + 1];
    const double rem = target - node_cdf[cell];
    const double slope = (f1 - f0) / h;
    // invert f0 xi + slope xi^2 / 2 = rem on the cell
    const double disc = f0 * f0 + 2.0 * slope * rem;
    double xi;
    if (std::fabs(slope) < 1e-14 * std::max(f0, f1)) {
      xi = f0 > 0.0 ? rem / f0 : 0.5 * h;
    } else {
      xi = 2.0 * rem / (f0 + std::sqrt(std::max(disc, 0.0)));
    }
    return x0 + std::min(std::max(xi, 0.0), h);
  }
};

// Immigration rate functional q(nu, a).  The enum keeps exactly the forms the
// moment oracles cover; every form depends on nu only through <1, nu>, and
// satisfies the linear-growth and Lipschitz conditions by construction.
struct QSpec {
  enum class Form { zero, one, constant, affine_total_mass };

  Form form = Form::zero;
  double c0 = 0.0;
  double c1 = 0.0;

  static QSpec zero() { return {Form::zero, 0.0, 0.0}; }
  static QSpec one() { return {Form::one, 1.0, 0.0}; }
  static QSpec constant(double c) {
    if (c < 0.0) throw ConfigError("q constant: rate must be >= 0");
    return {Form::constant, c, 0.0};
  }
  static QSpec affine_total_mass(double c0, double c1) {
    if (c0 < 0.0 || c1 < 0.0) throw ConfigError("q affine: coefficients must be >= 0");
    return {Form::affine_total_mass, c0, c1};
  }

  bool is_zero() const { return form == Form::zero; }
  bool state_dependent() const { return form == Form::affine_total_mass && c1 > 0.0; }

  double value(double total_mass) const {
    switch (form) {
      case Form::zero: return 0.0;
      case Form::one: return 1.0;
      case Form::constant: return c0;
      case Form::affine_total_mass: return c0 + c1 * total_mass;
    }
    return 0.0;
  }

  // Coefficient K with sup_a q(nu, a) <= K (1 + <1, nu>).
  double growth_bound() const {
    switch (form) {
      case Form::zero: return 0.0;
      case Form::one: return 1.0;
      case Form::constant: return c0;
      case Form::affine_total_mass: return std::max(c0, c1);
    }
    return 0.0;
  }
};

// Full scenario description; the single source of truth for a run.
struct ScenarioConfig {
  SmoothingKernel kernel = SmoothingKernel::gaussian(1.0);
  double sigma = 1.0;  // constant branching rate
  double beta = 1.0;   // excursion-law clock rate; equals sigma unless sigma varies
  std::optional<PiecewiseLinear> sigma_of_x;  // variable branching density (no immigration)
  double sigma_lower_bound = 0.0;

  MeasureSpec mu;
  bool mu_direct = false;  // atomic start evolved directly, no initial excursion cloud
  MeasureSpec m;
  QSpec q = QSpec::zero();

  double horizon = 1.0;
  double dt = 1e-3;
  double delta = 1e-2;
  std::uint64_t replicates = 1000;
  std::uint64_t seed = 1;
  std::vector<double> checkpoints;  // defaults to {T/4, T/2, T}

  SigmaField sigma_field() const {
    if (!sigma_of_x) return SigmaField::constant_rate(sigma);
    const PiecewiseLinear table = *sigma_of_x;
    return SigmaField::varying([table](double x) {
      if (x <= table.grid.front()) return table.values.front();
      if (x >= table.grid.back()) return table.values.back();
      return table(x);
    });
  }

  int n_steps() const { return static_cast<int>(std::llround(horizon / dt)); }
  int delta_steps() const { return static_cast<int>(std::llround(delta / dt)); }

  std::vector<int> checkpoint_steps() const {
    std::vector<int> out;
    for (double c : checkpoints) out.push_back(static_cast<int>(std::llround(c / dt)));
    return out;
  }

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(dt > 0.0) || !(horizon > 0.0)) throw ConfigError("dt and T must be positive");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    const double steps = horizon / dt;
    if (std::fabs(steps - std::llround(steps)) > 1e-9 * std::max(1.0, steps))
      throw ConfigError("T must be an integer multiple of dt");
    const double dsteps = delta / dt;
    if (std::fabs(dsteps - std::llround(dsteps)) > 1e-9 * std::max(1.0, dsteps))
      throw ConfigError("delta must be an integer multiple of dt");
    if (delta_steps() < 1) throw ConfigError("delta must be >= dt");
    if (replicates == 0) throw ConfigError("replicates must be >= 1");
    if (mu_direct && mu.is_density) throw ConfigError("direct initial mode needs an atomic mu");
    if (sigma_of_x) {
      if (!m.empty() || !q.is_zero())
        throw ConfigError("variable sigma is supported without immigration only");
      double lo = sigma_lower_bound;
      for (double v : sigma_of_x->values)
        if (!(v > 0.0) || (lo > 0.0 && v < lo))
          throw ConfigError("sigma_of_x must stay positive and above its lower bound");
    }
    if (!q.is_zero() && m.empty()) throw ConfigError("nonzero q needs a nontrivial m");
    for (double c : checkpoints) {
      const double cs = c / dt;
      if (c < 0.0 || c > horizon + 1e-12 ||
          std::fabs(cs - std::llround(cs)) > 1e-9 * std::max(1.0, cs))
        throw ConfigError("checkpoints must lie on the time grid inside [0, T]");
    }
  }
};

namespace detail {

inline MeasureSpec measure_from_json(const json& j, const std::string& field) {
  if (j.is_null()) return MeasureSpec::zero();
  if (j.contains("atoms")) {
    AtomicMeasure a;
    for (const auto& row : j.at("atoms")) {
      if (!row.is_array() || row.size() != 2)
        throw ConfigError(field + ".atoms rows must be [location, mass]");
      a.add(row[0].get<double>(), row[1].get<double>());
    }
    return MeasureSpec::from_atoms(std::move(a));
  }
  if (j.contains("density")) {
    const auto& d = j.at("density");
    std::optional<double> rescale;
    if (d.contains("mass")) rescale = d.at("mass").get<double>();
    return MeasureSpec::from_density(d.at("grid").get<std::vector<double>>(),
                                     d.at("values").get<std::vector<double>>(), rescale);
  }
  throw ConfigError(field + ": expected \"atoms\" or \"density\"");
}

inline json measure_to_json(const MeasureSpec& s) {
  json j;
  if (!s.is_density) {
    json rows = json::array();
    for (const auto& a : s.atoms.atoms) rows.push_back({a.location, a.mass});
    j["atoms"] = rows;
  } else {
    j["density"] = {{"grid", s.density.grid}, {"values", s.density.values}};
  }
  return j;
}

}  // namespace detail

inline ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  try {
    const auto& k = j.at("kernel");
    if (k.contains("gaussian")) {
      c.kernel = SmoothingKernel::gaussian(k.at("gaussian").at("width").get<double>());
    } else if (k.contains("table")) {
      c.kernel = SmoothingKernel::tabulated(k.at("table").at("grid").get<std::vector<double>>(),
                                            k.at("table").at("values").get<std::vector<double>>());
    } else {
      throw ConfigError("kernel: expected \"gaussian\" or \"table\"");
    }
    c.sigma = j.at("sigma").get<double>();
    c.beta = j.contains("beta") ? j.at("beta").get<double>() : c.sigma;
    if (j.contains("sigma_of_x")) {
      const auto& s = j.at("sigma_of_x");
      c.sigma_of_x = PiecewiseLinear{s.at("grid").get<std::vector<double>>(),
                                     s.at("values").get<std::vector<double>>()};
      if (s.contains("lower_bound")) c.sigma_lower_bound = s.at("lower_bound").get<double>();
    }
    if (j.contains("mu")) {
      c.mu = detail::measure_from_json(j.at("mu"), "mu");
      if (j.at("mu").contains("mode")) {
        const std::string mode = j.at("mu").at("mode").get<std::string>();
        if (mode == "direct")
          c.mu_direct = true;
        else if (mode == "excursions")
          c.mu_direct = false;
        else
          throw ConfigError("mu.mode: expected \"excursions\" or \"direct\"");
      }
    }
    if (j.contains("m")) c.m = detail::measure_from_json(j.at("m"), "m");
    if (j.contains("q")) {
      const auto& q = j.at("q");
      if (q.contains("zero"))
        c.q = QSpec::zero();
      else if (q.contains("one"))
        c.q = QSpec::one();
      else if (q.contains("constant"))
        c.q = QSpec::constant(q.at("constant").at("c").get<double>());
      else if (q.contains("affine_total_mass"))
        c.q = QSpec::affine_total_mass(q.at("affine_total_mass").at("c0").get<double>(),
                                       q.at("affine_total_mass").at("c1").get<double>());
      else
        throw ConfigError("q: unknown rate form");
    }
    c.horizon = j.at("T").get<double>();
    c.dt = j.at("dt").get<double>();
    c.delta = j.at("delta").get<double>();
    c.replicates = j.at("replicates").get<std::uint64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoints"))
      c.checkpoints = j.at("checkpoints").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.checkpoints.empty()) {
    // Default checkpoints T/4, T/2, T snapped to the step grid.
    const double steps = std::llround(c.horizon / c.dt);
    for (double frac : {0.25, 0.5, 1.0}) {
      const double k = std::max(1.0, std::round(steps * frac));
      const double t = k * c.dt;
      if (c.checkpoints.empty() || c.checkpoints.back() != t) c.checkpoints.push_back(t);
    }
  }
  c.validate();
  return c;
}

inline json config_to_json(const ScenarioConfig& c) {
  json j;
  if (c.kernel.form == SmoothingKernel::Form::gaussian)
    j["kernel"] = {{"gaussian", {{"width", c.kernel.width}}}};
  else
    j["kernel"] = {
        {"table", {{"grid", c.kernel.table.grid}, {"values", c.kernel.table.values}}}};
  j["sigma"] = c.sigma;
  j["beta"] = c.beta;
  if (c.sigma_of_x) {
    j["sigma_of_x"] = {{"grid", c.sigma_of_x->grid}, {"values", c.sigma_of_x->values}};
    if (c.sigma_lower_bound > 0.0) j["sigma_of_x"]["lower_bound"] = c.sigma_lower_bound;
  }
  j["mu"] = detail::measure_to_json(c.mu);
  if (!c.mu.is_density) j["mu"]["mode"] = c.mu_direct ? "direct" : "excursions";
  if (!c.m.empty()) j["m"] = detail::measure_to_json(c.m);
  switch (c.q.form) {
    case QSpec::Form::zero: j["q"] = {{"zero", json::object()}}; break;
    case QSpec::Form::one: j["q"] = {{"one", json::object()}}; break;
    case QSpec::Form::constant: j["q"] = {{"constant", {{"c", c.q.c0}}}}; break;
    case QSpec::Form::affine_total_mass:
      j["q"] = {{"affine_total_mass", {{"c0", c.q.c0}, {"c1", c.q.c1}}}};
      break;
  }
  j["T"] = c.horizon;
  j["dt"] = c.dt;
  j["delta"] = c.delta;
  j["replicates"] = c.replicates;
  j["seed"] = c.seed;
  j["checkpoints"] = c.checkpoints;
  return j;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error in ") + path + ": " + e.what());
  }
  return config_from_json(j);
}

// FNV-1a over the canonical serialization; identifies a scenario in
// manifests and reports.
inline std::uint64_t config_hash(const ScenarioConfig& c) {
  const std::string dump = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace excursim

#endif  // EXCURSIM_SCENARIO_HPP
