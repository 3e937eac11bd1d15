#ifndef EXCURSIM_SUPERPROCESS_HPP
#define EXCURSIM_SUPERPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "excursim/excursions.hpp"
#include "excursim/feller.hpp"
#include "excursim/flow.hpp"
#include "excursim/kernels.hpp"
#include "excursim/measures.hpp"
#include "excursim/rng.hpp"
#include "excursim/scenario.hpp"

namespace excursim {

// One atom at one grid time.  Pending atoms (born, not yet past the chop) are
// carried with matured = false and zero mass; the measure Y_t consists of the
// matured entries only.
struct AtomSnapshot {
  std::uint64_t id = 0;
  double birth_time = 0.0;
  double location = 0.0;
  double mass = 0.0;
  bool matured = false;
};

struct StepSnapshot {
  double time = 0.0;
  // Total matured mass after the window's flow and mass evolution but before
  // any birth or maturation jump at this instant: the left limit the
  // thinning rate is evaluated at.
  double pre_birth_total_mass = 0.0;
  std::vector<AtomSnapshot> atoms;
};

inline AtomicMeasure to_measure(const StepSnapshot& s) {
  AtomicMeasure m;
  for (const auto& a : s.atoms)
    if (a.matured && a.mass > 0.0) m.add(a.location, a.mass);
  return m;
}

struct RecordedPath {
  std::vector<StepSnapshot> steps;  // index k <-> time k dt
  std::uint64_t initial_excursions = 0;
  std::uint64_t accepted_births = 0;

  std::vector<double> pre_birth_mass() const {
    std::vector<double> out(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) out[k] = steps[k].pre_birth_total_mass;
    return out;
  }
};

namespace detail {

// One live excursion atom: its mass path (an ExcursionRecord from the chop
// onward), its flow handle, and its private mass stream.
struct EngineAtom {
  std::uint64_t id = 0;
  ExcursionRecord record;
  int birth_step = 0;
  int mature_step = -1;  // grid step of the maturation jump (constant sigma)
  std::uint64_t flow_id = 0;
  double psi = 0.0;  // excursion-clock age (variable sigma)
  Rng mass_rng;
  bool matured = false;
  bool alive = true;

  EngineAtom(std::uint64_t id_, double birth_time, double location, int birth_step_,
             std::uint64_t rng_seed, double chop, double grid_dt)
      : id(id_), birth_step(birth_step_), mass_rng(rng_seed) {
    record.birth_time = birth_time;
    record.birth_location = location;
    record.chop = chop;
    record.grid_dt = grid_dt;
  }

  double mass() const { return matured ? record.current_mass() : 0.0; }
};

}  // namespace detail

// One trajectory of the construction: excursion atoms carried by the
// discretized flow.  `frozen_rate_mass` replaces the self-evaluated pre-birth
// total mass in the thinning rate; the Picard iteration passes the previous
// iterate's path here while all randomness replays from derived streams.
// `extra_steps` extends the grid past the horizon (the chop study evaluates
// clock-shifted variants that need masses beyond T).  `thinning_salt`
// re-keys only the thinning-mark stream; the harness uses it as a negative
// control for pathwise uniqueness.
inline RecordedPath simulate_trajectory(const ScenarioConfig& cfg, std::uint64_t replicate,
                                        const std::vector<double>* frozen_rate_mass = nullptr,
                                        int extra_steps = 0, std::uint64_t thinning_salt = 0) {
  const int n_steps = cfg.n_steps() + extra_steps;
  const int delta_steps = cfg.delta_steps();
  const double dt = cfg.dt;
  const double beta = cfg.beta;
  const double delta = cfg.delta;
  const SigmaField sigma = cfg.sigma_field();
  const bool variable_sigma = cfg.sigma_of_x.has_value();
  const CorrelationFunction rho = CorrelationFunction::from_kernel(cfg.kernel);
  const std::uint64_t rep_seed = mix_seed(cfg.seed, replicate);

  const double mu_bar = cfg.mu.total_mass();
  const double m_bar = cfg.m.total_mass();
  const bool immigration = !cfg.q.is_zero() && m_bar > 0.0;
  // Thinning mark cap; layer l carries marks in (l cap, (l+1) cap].  Layers
  // are opened on demand, each from its own derived stream, so raising the
  // cap never disturbs draws already made.
  const double cap = 2.0 * cfg.q.growth_bound() * (1.0 + mu_bar);

  FlowEnsemble flow(rho);
  std::vector<detail::EngineAtom> atoms;
  std::uint64_t next_atom_id = 0;

  RecordedPath path;
  path.steps.resize(static_cast<std::size_t>(n_steps) + 1);

  // Initial state.
  if (!cfg.mu.empty()) {
    if (cfg.mu_direct) {
      // Atomic start: deterministic masses evolving from t = 0, no chop.
      for (const auto& a : cfg.mu.atoms.atoms) {
        detail::EngineAtom atom(next_atom_id++, 0.0, a.location, 0,
                                mix_seed(rep_seed, kTagMass, kTagInitial, kTagAtom, atoms.size()),
                                0.0, dt);
        atom.matured = true;
        atom.record.masses.push_back(a.mass);
        atom.flow_id = flow.insert_atom(a.location);
        atoms.push_back(std::move(atom));
      }
    } else {
      Rng init_rng(mix_seed(rep_seed, kTagMass, kTagInitial));
      const std::uint64_t count = sample_excursion_count(mu_bar, delta, beta, init_rng);
      path.initial_excursions = count;
      for (std::uint64_t i = 0; i < count; ++i) {
        const double loc = cfg.mu.sample_location(init_rng);
        detail::EngineAtom atom(next_atom_id++, 0.0, loc, 0,
                                mix_seed(rep_seed, kTagMass, kTagInitial, kTagAtom, i), delta,
                                dt);
        atom.mature_step = variable_sigma ? -1 : delta_steps;
        atom.flow_id = flow.insert_atom(loc);
        atoms.push_back(std::move(atom));
      }
    }
  }

  // Registry-order list of live atom indices, compacted stably as atoms die:
  // every loop below sums in registry order, so the compaction changes no
  // floating-point result, only the amount of dead weight scanned.
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < atoms.size(); ++i) live.push_back(i);

  auto snapshot_into = [&](int k, double t, double pre_birth_total) {
    StepSnapshot& snap = path.steps[static_cast<std::size_t>(k)];
    snap.time = t;
    snap.pre_birth_total_mass = pre_birth_total;
    snap.atoms.clear();
    snap.atoms.reserve(live.size());
    for (std::size_t i : live) {
      const auto& a = atoms[i];
      snap.atoms.push_back(
          {a.id, a.record.birth_time, flow.position(a.flow_id), a.mass(), a.matured});
    }
  };

  snapshot_into(0, 0.0, mu_bar);

  std::vector<double> left_pos;
  std::vector<std::size_t> to_mature;
  for (int k = 1; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;

    // Left-endpoint positions fix the step's branching densities before the
    // flow moves anyone.
    left_pos.resize(atoms.size());
    for (std::size_t i : live) left_pos[i] = flow.position(atoms[i].flow_id);

    Rng flow_rng(mix_seed(rep_seed, kTagFlow, kTagStep, static_cast<std::uint64_t>(k)));
    flow.step(dt, flow_rng);

    // Mass evolution of matured atoms over (t - dt, t].
    bool any_death = false;
    for (std::size_t i : live) {
      auto& a = atoms[i];
      if (!a.matured) continue;
      const double duration = variable_sigma ? sigma(left_pos[i]) * dt / beta : dt;
      evolve_excursion(a.record, duration, beta, a.mass_rng);
      if (a.record.absorbed) {
        a.alive = false;
        any_death = true;
        flow.remove_atom(a.flow_id);
      }
    }

    // Pending atoms age on their own excursion clocks.
    to_mature.clear();
    for (std::size_t i : live) {
      auto& a = atoms[i];
      if (!a.alive || a.matured) continue;
      if (variable_sigma) {
        a.psi += sigma(left_pos[i]) * dt / beta;
        if (a.psi >= delta) to_mature.push_back(i);
      } else if (a.mature_step == k) {
        a.psi = delta;
        to_mature.push_back(i);
      }
    }

    double pre_birth_total = 0.0;
    for (std::size_t i : live)
      if (atoms[i].matured && atoms[i].alive) pre_birth_total += atoms[i].record.current_mass();

    // Immigration window (t - dt, t]: layered thinning against the rate
    // evaluated at the pre-birth state (or the frozen previous iterate).
    if (immigration) {
      const double rate_mass =
          frozen_rate_mass ? (*frozen_rate_mass)[std::min<std::size_t>(
                                 static_cast<std::size_t>(k), frozen_rate_mass->size() - 1)]
                           : pre_birth_total;
      const double qval = cfg.q.value(rate_mass);
      const double layer_mean = cap * m_bar * dt * 2.0 / (beta * delta);
      for (int layer = 0; cap > 0.0 && static_cast<double>(layer) * cap < qval; ++layer) {
        Rng cand_rng(mix_seed(rep_seed, kTagImmigration, static_cast<std::uint64_t>(k),
                              static_cast<std::uint64_t>(layer)));
        Rng mark_rng(mix_seed(rep_seed, kTagThinning, thinning_salt,
                              static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(layer)));
        const std::uint64_t count = cand_rng.poisson(layer_mean);
        for (std::uint64_t j = 0; j < count; ++j) {
          const double loc = cfg.m.sample_location(cand_rng);
          const double mark = (static_cast<double>(layer) + mark_rng.uniform()) * cap;
          if (mark <= qval) {
            detail::EngineAtom atom(next_atom_id++, t, loc, k,
                                    mix_seed(rep_seed, kTagMass, kTagAtom,
                                             static_cast<std::uint64_t>(k),
                                             static_cast<std::uint64_t>(layer), j),
                                    delta, dt);
            atom.mature_step = k + delta_steps;
            atom.flow_id = flow.insert_atom(loc);
            live.push_back(atoms.size());
            atoms.push_back(std::move(atom));
            ++path.accepted_births;
          }
        }
      }
    }

    // Maturation jumps at t: entrance mass from kappa_delta, plus an exact
    // catch-up step when a variable-sigma clock overshot the chop.
    for (std::size_t i : to_mature) {
      auto& a = atoms[i];
      double mass = a.mass_rng.exponential(0.5 * beta * delta);
      if (a.psi > delta) mass = feller_exact_step(mass, a.psi - delta, beta, a.mass_rng);
      if (mass == 0.0) {
        a.alive = false;
        any_death = true;
        flow.remove_atom(a.flow_id);
      } else {
        a.matured = true;
        a.record.masses.push_back(mass);
      }
    }

    if (any_death)
      live.erase(std::remove_if(live.begin(), live.end(),
                                [&](std::size_t i) { return !atoms[i].alive; }),
                 live.end());

    snapshot_into(k, t, pre_birth_total);
  }

  return path;
}

// SDSM without immigration (general or atomic start, optionally variable
// branching density).
inline RecordedPath simulate_sdsm(const ScenarioConfig& cfg, std::uint64_t replicate) {
  if (!cfg.m.empty() || !cfg.q.is_zero())
    throw std::invalid_argument("simulate_sdsm: scenario has immigration configured");
  return simulate_trajectory(cfg, replicate);
}

// Deterministic-rate immigration (q == 1 or a constant).  The rate ignores
// the state, so the thinning acceptance set never depends on the path and a
// single pass is exact.
inline RecordedPath simulate_immigration_deterministic(const ScenarioConfig& cfg,
                                                       std::uint64_t replicate) {
  if (cfg.q.form != QSpec::Form::one && cfg.q.form != QSpec::Form::constant)
    throw std::invalid_argument("simulate_immigration_deterministic: q must be One or Constant");
  if (!(cfg.m.total_mass() > 0.0))
    throw std::invalid_argument("simulate_immigration_deterministic: <1, m> must be positive");
  if (cfg.sigma_of_x)
    throw std::invalid_argument("immigration requires constant branching density");
  return simulate_trajectory(cfg, replicate);
}

enum class PicardStart { zero, deterministic_rate };

struct PicardResult {
  RecordedPath path;
  int runs = 0;                    // trajectory evaluations performed
  std::vector<double> distances;   // sup-tv between consecutive iterates
};

struct PicardError : std::runtime_error {
  std::vector<double> distances;
  explicit PicardError(std::vector<double> d)
      : std::runtime_error(render(d)), distances(std::move(d)) {}

  static std::string render(const std::vector<double>& d) {
    std::ostringstream msg;
    msg << "picard iteration did not converge; distances:";
    for (double x : d) msg << ' ' << x;
    return msg.str();
  }
};

inline double sup_tv_distance(const RecordedPath& a, const RecordedPath& b) {
  const std::size_t n = std::min(a.steps.size(), b.steps.size());
  double sup = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    sup = std::max(sup, tv_distance(to_measure(a.steps[k]), to_measure(b.steps[k])));
  return sup;
}

inline constexpr int kPicardMax = 50;

inline double picard_tolerance(const ScenarioConfig& cfg) {
  return 1e-12 * (1.0 + cfg.mu.total_mass());
}

// Interactive immigration: successive substitution of the rate path under
// frozen driving randomness.  Each iterate re-runs the thinning with rates
// read off the previous iterate; convergence is sup-tv below tolerance,
// which under frozen streams means the accepted candidate set stabilized and
// consecutive paths are bit-identical.
inline PicardResult simulate_immigration_interactive(const ScenarioConfig& cfg,
                                                     std::uint64_t replicate,
                                                     PicardStart start = PicardStart::zero,
                                                     std::uint64_t thinning_salt = 0) {
  if (cfg.q.is_zero())
    throw std::invalid_argument("simulate_immigration_interactive: q is zero");
  if (cfg.sigma_of_x)
    throw std::invalid_argument("immigration requires constant branching density");
  const std::size_t n = static_cast<std::size_t>(cfg.n_steps()) + 1;
  std::vector<double> rate_mass(n, 0.0);
  if (start == PicardStart::deterministic_rate)
    rate_mass.assign(n, cfg.mu.total_mass());

  PicardResult result;
  std::optional<RecordedPath> prev;
  for (int iter = 0; iter < kPicardMax; ++iter) {
    RecordedPath cur = simulate_trajectory(cfg, replicate, &rate_mass, 0, thinning_salt);
    ++result.runs;
    if (prev) {
      const double d = sup_tv_distance(cur, *prev);
      result.distances.push_back(d);
      if (d < picard_tolerance(cfg)) {
        result.path = std::move(cur);
        return result;
      }
    }
    rate_mass = cur.pre_birth_mass();
    prev = std::move(cur);
  }
  throw PicardError(result.distances);
}

// Per-phi martingale bookkeeping along one path:
//   M_t(phi) = <phi, Y_t> - <phi, Y_0> - rho(0)/2 int <phi'', Y_s> ds
//              - int <q(Y_s, .) phi, m> ds
// and the predicted quadratic-variation integrand
//   <sigma phi^2, Y_s> + sum_ij m_i m_j phi'(x_i) phi'(x_j) rho(x_i - x_j),
// with every time integral done by the trapezoid rule on the step grid.
class MartingaleAccumulator {
 public:
  MartingaleAccumulator(const ScenarioConfig& cfg, const CorrelationFunction& rho,
                        std::vector<TestFunction> suite)
      : cfg_(cfg), rho_(rho), suite_(std::move(suite)), per_phi_(suite_.size()) {
    phi_m_.resize(suite_.size(), 0.0);
    for (std::size_t p = 0; p < suite_.size(); ++p) {
      const auto& phi = suite_[p];
      auto& acc = per_phi_[p];
      acc.phi0 = cfg.mu.integrate(phi);
      acc.prev_d2 = cfg.mu.integrate_fn([&phi](double x) { return phi.d2(x); });
      acc.prev_qv = cfg.sigma * cfg.mu.integrate_fn([&phi](double x) {
        const double v = phi.value(x);
        return v * v;
      }) + cfg.mu.qv_self(phi, rho_);
      acc.observable = acc.phi0;
      acc.qv_integrand = acc.prev_qv;
      if (!cfg.m.empty()) phi_m_[p] = cfg.m.integrate(phi);
      acc.prev_comp = cfg.q.value(cfg.mu.total_mass()) * phi_m_[p];
    }
    prev_time_ = 0.0;
  }

  void feed(const StepSnapshot& snap) {
    const double h = snap.time - prev_time_;
    prev_time_ = snap.time;

    std::size_t n = 0;
    locs_.clear();
    weights_.clear();
    for (const auto& a : snap.atoms)
      if (a.matured && a.mass > 0.0) {
        locs_.push_back(a.location);
        ++n;
      }

    double total = 0.0;
    std::vector<PhiStep> step(suite_.size());
    weights_.assign(suite_.size() * n, 0.0);
    std::size_t idx = 0;
    for (const auto& a : snap.atoms) {
      if (!(a.matured && a.mass > 0.0)) continue;
      total += a.mass;
      for (std::size_t p = 0; p < suite_.size(); ++p) {
        const auto& phi = suite_[p];
        const double v = phi.value(a.location);
        step[p].obs += a.mass * v;
        step[p].d2 += a.mass * phi.d2(a.location);
        step[p].qv += cfg_.sigma * a.mass * v * v;
        weights_[p * n + idx] = a.mass * phi.d1(a.location);
      }
      ++idx;
    }
    // Shared rho evaluations across the suite.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < suite_.size(); ++p)
        step[p].qv += weights_[p * n + i] * weights_[p * n + i] * rho_.rho0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double r = 2.0 * rho_(locs_[i] - locs_[j]);
        for (std::size_t p = 0; p < suite_.size(); ++p)
          step[p].qv += r * weights_[p * n + i] * weights_[p * n + j];
      }
    }

    const double qv_rate = cfg_.q.value(total);
    for (std::size_t p = 0; p < suite_.size(); ++p) {
      auto& acc = per_phi_[p];
      const double comp = qv_rate * phi_m_[p];
      acc.int_d2 += 0.5 * h * (acc.prev_d2 + step[p].d2);
      acc.int_qv += 0.5 * h * (acc.prev_qv + step[p].qv);
      acc.int_comp += 0.5 * h * (acc.prev_comp + comp);
      acc.prev_d2 = step[p].d2;
      acc.prev_qv = step[p].qv;
      acc.prev_comp = comp;
      acc.observable = step[p].obs;
      acc.qv_integrand = step[p].qv;
    }
  }

  double observable(std::size_t p) const { return per_phi_[p].observable; }
  double martingale(std::size_t p) const {
    const auto& acc = per_phi_[p];
    return acc.observable - acc.phi0 - 0.5 * rho_.rho0 * acc.int_d2 - acc.int_comp;
  }
  double qv_integral(std::size_t p) const { return per_phi_[p].int_qv; }
  double qv_integrand(std::size_t p) const { return per_phi_[p].qv_integrand; }
  std::size_t size() const { return suite_.size(); }

 private:
  struct PhiStep {
    double obs = 0.0;
    double d2 = 0.0;
    double qv = 0.0;
  };
  struct PhiAccum {
    double phi0 = 0.0;
    double prev_d2 = 0.0, prev_qv = 0.0, prev_comp = 0.0;
    double int_d2 = 0.0, int_qv = 0.0, int_comp = 0.0;
    double observable = 0.0;
    double qv_integrand = 0.0;
  };

  const ScenarioConfig& cfg_;
  const CorrelationFunction& rho_;
  std::vector<TestFunction> suite_;
  std::vector<PhiAccum> per_phi_;
  std::vector<double> phi_m_;
  std::vector<double> locs_;
  std::vector<double> weights_;
  double prev_time_ = 0.0;
};

struct MartingaleSeries {
  std::vector<double> times;
  std::vector<double> observable;
  std::vector<double> martingale;
  std::vector<double> qv_integrand;
  std::vector<double> qv_integral;
};

inline MartingaleSeries run_martingale_functionals(const RecordedPath& path,
                                                   const ScenarioConfig& cfg,
                                                   const TestFunction& phi,
                                                   const CorrelationFunction& rho) {
  MartingaleAccumulator acc(cfg, rho, {phi});
  MartingaleSeries out;
  const std::size_t n = path.steps.size();
  out.times.reserve(n);
  out.observable.reserve(n);
  out.martingale.reserve(n);
  out.qv_integrand.reserve(n);
  out.qv_integral.reserve(n);
  auto push = [&](double time) {
    out.times.push_back(time);
    out.observable.push_back(acc.observable(0));
    out.martingale.push_back(acc.martingale(0));
    out.qv_integrand.push_back(acc.qv_integrand(0));
    out.qv_integral.push_back(acc.qv_integral(0));
  };
  if (!path.steps.empty()) push(path.steps.front().time);
  for (std::size_t k = 1; k < n; ++k) {
    acc.feed(path.steps[k]);
    push(path.steps[k].time);
  }
  return out;
}

}  // namespace excursim

#endif  // EXCURSIM_SUPERPROCESS_HPP
