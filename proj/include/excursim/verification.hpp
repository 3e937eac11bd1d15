#ifndef EXCURSIM_VERIFICATION_HPP
#define EXCURSIM_VERIFICATION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "excursim/dual.hpp"
#include "excursim/excursions.hpp"
#include "excursim/feller.hpp"
#include "excursim/flow.hpp"
#include "excursim/harness.hpp"
#include "excursim/measures.hpp"
#include "excursim/scenario.hpp"
#include "excursim/superprocess.hpp"

namespace excursim {

inline constexpr std::uint64_t kDefaultSeed = 0x5eed5eedULL;

// ---------------------------------------------------------------------------
// Pinned verification scenarios.  All desk scale: dt = 1e-3, T = 1.
// ---------------------------------------------------------------------------

// SDSM without immigration, spread atomic start (the atomic construction is
// exact: no chop, so the martingale functionals carry no warmup defect).
inline ScenarioConfig scenario_sdsm_spatial(std::uint64_t seed = kDefaultSeed) {
  ScenarioConfig c;
  c.kernel = SmoothingKernel::gaussian(1.0);
  c.sigma = 1.0;
  c.beta = 1.0;
  AtomicMeasure mu;
  for (double x : {-1.0, -0.5, 0.0, 0.5, 1.0}) mu.add(x, 0.2);
  c.mu = MeasureSpec::from_atoms(mu);
  c.mu_direct = true;
  c.q = QSpec::zero();
  c.horizon = 1.0;
  c.dt = 1e-3;
  c.delta = 1e-2;
  c.replicates = 10000;
  c.seed = seed;
  c.checkpoints = {0.25, 0.5, 1.0};
  c.validate();
  return c;
}

// SDSM with a Poissonized density start: the general-measure construction,
// used for looser-count statistical gates and structural checks.
inline ScenarioConfig scenario_sdsm_poissonized(std::uint64_t seed = kDefaultSeed) {
  ScenarioConfig c;
  c.kernel = SmoothingKernel::gaussian(1.0);
  c.sigma = 1.0;
  c.beta = 1.0;
  c.mu = MeasureSpec::from_density({-1.0, 1.0}, {0.5, 0.5});
  c.q = QSpec::zero();
  c.horizon = 1.0;
  c.dt = 1e-3;
  c.delta = 1e-2;
  c.replicates = 2000;
  c.seed = seed;
  c.checkpoints = {0.25, 0.5, 1.0};
  c.validate();
  return c;
}

// Deterministic immigration, atomic start, mass and field statistics.
inline ScenarioConfig scenario_immigration(std::uint64_t seed = kDefaultSeed) {
  ScenarioConfig c;
  c.kernel = SmoothingKernel::gaussian(1.0);
  c.sigma = 1.0;
  c.beta = 1.0;
  c.mu = MeasureSpec::from_atoms(AtomicMeasure::point(0.0, 1.0));
  c.mu_direct = true;
  c.m = MeasureSpec::from_atoms(AtomicMeasure::point(0.0, 1.0));
  c.q = QSpec::one();
  c.horizon = 1.0;
  c.dt = 1e-3;
  c.delta = 2e-3;
  c.replicates = 10000;
  c.seed = seed;
  c.checkpoints = {0.25, 0.5, 1.0};
  c.validate();
  return c;
}

// Interactive immigration with the affine total-mass rate.
inline ScenarioConfig scenario_interactive(std::uint64_t seed = kDefaultSeed) {
  ScenarioConfig c = scenario_immigration(seed);
  c.q = QSpec::affine_total_mass(1.0, 0.5);
  c.replicates = 10000;
  c.validate();
  return c;
}

// Chop-convergence study; delta here is the coarsest level, the engine runs
// at delta / 4.
inline ScenarioConfig scenario_chop(std::uint64_t seed = kDefaultSeed) {
  ScenarioConfig c = scenario_immigration(seed);
  c.delta = 4e-3;
  c.replicates = 300;
  c.validate();
  return c;
}

// Atom census: Poissonized point start plus immigration.
inline ScenarioConfig scenario_census(std::uint64_t seed = kDefaultSeed) {
  ScenarioConfig c = scenario_immigration(seed);
  c.mu_direct = false;
  c.delta = 1e-2;
  c.replicates = 2000;
  c.validate();
  return c;
}

inline std::vector<TestFunction> default_phi_suite() {
  return {TestFunction::constant(1.0), TestFunction::cosine(1.0), TestFunction::poly_capped(),
          TestFunction::gaussian_bump(0.5, 1.0)};
}

namespace detail {

inline std::string fmt(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feller exact-sampler checks (transition Laplace transform, extinction).
// ---------------------------------------------------------------------------

inline std::vector<TestReport> test_feller_laplace(std::uint64_t seed = kDefaultSeed,
                                                   std::uint64_t draws = 100000, int jobs = 1) {
  const std::vector<double> grid = {0.5, 1.0, 2.0};
  const std::vector<double> zs = {0.1, 0.5, 1.0, 2.0, 5.0};
  struct Triple {
    double x, t, beta;
  };
  std::vector<Triple> triples;
  for (double x : grid)
    for (double t : grid)
      for (double b : grid) triples.push_back({x, t, b});

  WallClock clock;
  auto rows = run_replicates<std::vector<TestReport>>(
      triples.size(), jobs, [&](std::uint64_t i) {
        const auto [x, t, beta] = triples[i];
        Rng rng(mix_seed(seed, 0x4c41, i));
        std::vector<double> sum(zs.size(), 0.0), sum2(zs.size(), 0.0);
        for (std::uint64_t d = 0; d < draws; ++d) {
          const double y = feller_exact_step(x, t, beta, rng);
          for (std::size_t k = 0; k < zs.size(); ++k) {
            const double e = std::exp(-zs[k] * y);
            sum[k] += e;
            sum2[k] += e * e;
          }
        }
        std::vector<TestReport> out;
        for (std::size_t k = 0; k < zs.size(); ++k) {
          const double n = static_cast<double>(draws);
          const double mean = sum[k] / n;
          const double var = std::max(sum2[k] / n - mean * mean, 0.0);
          out.push_back(TestReport::mc("feller_laplace/x=" + detail::fmt(x) +
                                           ",t=" + detail::fmt(t) + ",b=" + detail::fmt(beta) +
                                           ",z=" + detail::fmt(zs[k]),
                                       mean, feller_laplace(x, t, beta, zs[k]),
                                       std::sqrt(var / n), draws));
        }
        return out;
      });
  std::vector<TestReport> reports;
  for (auto& row : rows)
    for (auto& r : row) reports.push_back(std::move(r));
  stamp(reports, 0, clock.ms());
  return reports;
}

inline std::vector<TestReport> test_feller_extinction(std::uint64_t seed = kDefaultSeed,
                                                      std::uint64_t draws = 100000,
                                                      int jobs = 1) {
  const std::vector<double> grid = {0.5, 1.0, 2.0};
  struct Triple {
    double x, t, beta;
  };
  std::vector<Triple> triples;
  for (double x : grid)
    for (double t : grid)
      for (double b : grid) triples.push_back({x, t, b});

  WallClock clock;
  auto rows = run_replicates<TestReport>(triples.size(), jobs, [&](std::uint64_t i) {
    const auto [x, t, beta] = triples[i];
    Rng rng(mix_seed(seed, 0x4558, i));
    std::uint64_t zeros = 0;
    for (std::uint64_t d = 0; d < draws; ++d)
      if (feller_exact_step(x, t, beta, rng) == 0.0) ++zeros;
    const double p = feller_extinction_prob(x, t, beta);
    const double n = static_cast<double>(draws);
    return TestReport::mc("feller_extinction/x=" + detail::fmt(x) + ",t=" + detail::fmt(t) +
                              ",b=" + detail::fmt(beta),
                          static_cast<double>(zeros) / n, p, std::sqrt(p * (1.0 - p) / n), draws);
  });
  stamp(rows, 0, clock.ms());
  return rows;
}

// ---------------------------------------------------------------------------
// Excursion-law checks: Poisson counts, lifetime tail, entrance consistency.
// ---------------------------------------------------------------------------

inline std::vector<TestReport> test_excursion_law(std::uint64_t seed = kDefaultSeed,
                                                  std::uint64_t replicates = 10000) {
  WallClock clock;
  std::vector<TestReport> reports;

  // Counts at two chop levels, mean and variance against Poisson.
  for (const auto& [weight, delta, beta] : std::vector<std::array<double, 3>>{
           {1.0, 0.5, 1.0}, {1.0, 0.1, 1.0}}) {
    Rng rng(mix_seed(seed, 0x4558c0, static_cast<std::uint64_t>(delta * 1e6)));
    std::vector<double> counts(replicates);
    for (auto& c : counts)
      c = static_cast<double>(sample_excursion_count(weight, delta, beta, rng));
    const SampleStats s = sample_stats(counts);
    const double lambda = weight * 2.0 / (beta * delta);
    const std::string tag = "w=" + detail::fmt(weight) + ",delta=" + detail::fmt(delta);
    reports.push_back(TestReport::mc("excursion_count_mean/" + tag, s.mean, lambda,
                                     std::sqrt(lambda / static_cast<double>(replicates)),
                                     replicates));
    reports.push_back(
        TestReport::mc("excursion_count_var/" + tag, s.var, lambda, s.stderr_var, replicates));
  }

  // Lifetime tail: P(life > r | life > delta) = delta / r, exact on the grid
  // because the transition sampling is exact.
  {
    const double delta = 0.05, beta = 1.0, dt = 0.05;
    const std::vector<double> rs = {0.1, 0.25, 0.5, 1.0};
    Rng rng(mix_seed(seed, 0x4c4946));
    std::vector<std::uint64_t> alive(rs.size(), 0);
    const EntranceLaw law(beta, delta);
    for (std::uint64_t i = 0; i < replicates; ++i) {
      ExcursionRecord rec;
      rec.birth_time = 0.0;
      rec.chop = delta;
      rec.grid_dt = dt;
      rec.masses.push_back(entrance_law_sample(law, rng));
      while (rec.alive() && rec.age() < rs.back()) evolve_excursion(rec, dt, beta, rng);
      for (std::size_t k = 0; k < rs.size(); ++k)
        if (rec.lifetime_exceeds(rs[k])) ++alive[k];
    }
    for (std::size_t k = 0; k < rs.size(); ++k) {
      const double p = delta / rs[k];
      const double n = static_cast<double>(replicates);
      reports.push_back(TestReport::mc("excursion_lifetime_tail/r=" + detail::fmt(rs[k]),
                                       static_cast<double>(alive[k]) / n, p,
                                       std::sqrt(p * (1.0 - p) / n), replicates));
    }
  }
  stamp(reports, 0, clock.ms());
  return reports;
}

inline std::vector<TestReport> test_entrance_consistency(std::uint64_t seed = kDefaultSeed,
                                                         std::uint64_t draws = 20000) {
  WallClock clock;
  std::vector<TestReport> reports;
  const double delta = 0.05, beta = 1.0;
  const std::vector<double> ts = {2.0 * delta, 5.0 * delta, 10.0 * delta};
  Rng rng(mix_seed(seed, 0x454e54));
  std::vector<std::uint64_t> alive(ts.size(), 0);
  const EntranceLaw law(beta, delta);
  for (std::uint64_t i = 0; i < draws; ++i) {
    double mass = entrance_law_sample(law, rng);
    double age = delta;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      if (mass > 0.0 && ts[k] > age) {
        mass = feller_exact_step(mass, ts[k] - age, beta, rng);
        age = ts[k];
      }
      if (mass > 0.0) ++alive[k];
    }
  }
  // Survival-mass flow of the entrance family: (2 / beta delta) P(alive at t)
  // must equal kappa_t(0, inf) = 2 / beta t.
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double scale = 2.0 / (beta * delta);
    const double p = delta / ts[k];
    const double n = static_cast<double>(draws);
    reports.push_back(TestReport::mc("entrance_consistency/t=" + detail::fmt(ts[k]),
                                     scale * static_cast<double>(alive[k]) / n, 2.0 / (beta * ts[k]),
                                     scale * std::sqrt(p * (1.0 - p) / n), draws));
  }
  stamp(reports, 0, clock.ms());
  return reports;
}

// ---------------------------------------------------------------------------
// Dual oracle agreement.
// ---------------------------------------------------------------------------

inline std::vector<TestReport> test_dual_agreement(std::uint64_t seed = kDefaultSeed,
                                                   std::uint64_t chains = 100000, int jobs = 1,
                                                   double t = 1.0) {
  struct Design {
    double sigma, m_mass, mu_mass;
  };
  const std::vector<Design> design = {{1.0, 1.0, 1.0}, {0.5, 2.0, 1.0}, {2.0, 0.5, 2.0}};
  struct Job {
    Design d;
    int n;
  };
  std::vector<Job> jobs_list;
  for (const auto& d : design)
    for (int n = 1; n <= 3; ++n) jobs_list.push_back({d, n});

  WallClock clock;
  auto reports = run_replicates<TestReport>(jobs_list.size(), jobs, [&](std::uint64_t i) {
    const auto& [d, n] = jobs_list[i];
    Rng rng(mix_seed(seed, 0x4455414c, i));
    std::vector<double> draws(chains);
    for (auto& v : draws) v = dual_chain_sample(n, t, d.sigma, d.m_mass, d.mu_mass, rng);
    const SampleStats s = sample_stats(draws);
    const double expected = moment_ode(n, t, d.sigma, d.m_mass, d.mu_mass).back();
    return TestReport::mc("dual_vs_ode/n=" + std::to_string(n) + ",sigma=" + detail::fmt(d.sigma) +
                              ",m=" + detail::fmt(d.m_mass) + ",mu=" + detail::fmt(d.mu_mass),
                          s.mean, expected, s.stderr_mean, chains);
  });
  stamp(reports, 0, clock.ms());
  return reports;
}

// ---------------------------------------------------------------------------
// Flow statistics: marginal variance, pair covariance, coalescence,
// exchangeability, non-crossing convergence.
// ---------------------------------------------------------------------------

inline std::vector<TestReport> test_flow_statistics(std::uint64_t seed = kDefaultSeed,
                                                    int jobs = 1) {
  WallClock clock;
  std::vector<TestReport> reports;
  const CorrelationFunction rho = CorrelationFunction::from_kernel(SmoothingKernel::gaussian(1.0));
  const double dt = 0.01;

  // (a) single-atom increments along one path are i.i.d. N(0, rho(0) dt).
  {
    const std::uint64_t n = 100000;
    FlowEnsemble flow(rho);
    const auto id = flow.insert_atom(0.3);
    Rng rng(mix_seed(seed, 0x464c01));
    std::vector<double> incs(n);
    double prev = flow.position(id);
    for (auto& v : incs) {
      flow.step(dt, rng);
      const double cur = flow.position(id);
      v = cur - prev;
      prev = cur;
    }
    const SampleStats s = sample_stats(incs);
    reports.push_back(TestReport::mc("flow_increment_mean", s.mean, 0.0, s.stderr_mean, n));
    reports.push_back(
        TestReport::mc("flow_increment_var", s.var, rho.rho0 * dt, s.stderr_var, n));
  }

  // (b) pair covariance at fixed distance d: one-step ensembles.
  for (double d : {0.5, 2.0}) {
    const std::uint64_t n = 100000;
    Rng rng(mix_seed(seed, 0x464c02, static_cast<std::uint64_t>(d * 100)));
    std::vector<double> products(n);
    for (auto& v : products) {
      FlowEnsemble flow(rho);
      const auto a = flow.insert_atom(0.0);
      const auto b = flow.insert_atom(d);
      flow.step(dt, rng);
      v = flow.position(a) * (flow.position(b) - d);
    }
    const SampleStats s = sample_stats(products);
    reports.push_back(TestReport::mc("flow_pair_cov/d=" + detail::fmt(d), s.mean, rho(d) * dt,
                                     s.stderr_mean, n));
  }

  // (c) coalescence is structural: co-located atoms share one slot.
  {
    FlowEnsemble flow(rho);
    const auto a = flow.insert_atom(0.25);
    const auto b = flow.insert_atom(0.25);
    flow.insert_atom(-1.0);
    Rng rng(mix_seed(seed, 0x464c03));
    double max_gap = 0.0;
    for (int k = 0; k < 200; ++k) {
      flow.step(dt, rng);
      max_gap = std::max(max_gap, std::fabs(flow.position(a) - flow.position(b)));
    }
    reports.push_back(TestReport::bound("flow_coalescence_gap", max_gap, 0.0, 200));
  }

  // (d) exchangeability: insertion order does not change the increment law.
  {
    const std::uint64_t n = 20000;
    const std::vector<double> pos = {0.0, 0.7, -1.3};
    const std::vector<std::vector<std::size_t>> orders = {{0, 1, 2}, {2, 0, 1}};
    std::vector<std::vector<double>> cov(2);
    for (int o = 0; o < 2; ++o) {
      Rng rng(mix_seed(seed, 0x464c04));  // same driving stream for both orders
      std::vector<double> prods(n);
      for (auto& v : prods) {
        FlowEnsemble flow(rho);
        std::vector<std::uint64_t> ids(3);
        for (std::size_t i : orders[o]) ids[i] = flow.insert_atom(pos[i]);
        flow.step(dt, rng);
        v = flow.position(ids[0]) * (flow.position(ids[1]) - pos[1]);
      }
      const SampleStats s = sample_stats(prods);
      cov[o] = {s.mean, s.stderr_mean};
    }
    const double se = std::hypot(cov[0][1], cov[1][1]);
    reports.push_back(
        TestReport::mc("flow_exchangeability_cov01", cov[0][0] - cov[1][0], 0.0, se, n));
  }

  // (e) non-crossing: the discretized paths of distinct atoms cross less and
  // less often as dt shrinks.
  {
    const std::vector<int> steps_per_T = {64, 256, 1024};
    const std::uint64_t n = 2000;
    std::vector<double> freq;
    for (std::size_t lvl = 0; lvl < steps_per_T.size(); ++lvl) {
      const int m = steps_per_T[lvl];
      auto crossings = run_replicates<int>(n, jobs, [&](std::uint64_t r) {
        FlowEnsemble flow(rho);
        const auto a = flow.insert_atom(-0.25);
        const auto b = flow.insert_atom(0.25);
        Rng rng(mix_seed(seed, 0x464c05, lvl, r));
        for (int k = 0; k < m; ++k) {
          flow.step(1.0 / m, rng);
          if (flow.position(a) >= flow.position(b)) return 1;
        }
        return 0;
      });
      double f = 0.0;
      for (int c : crossings) f += c;
      freq.push_back(f / static_cast<double>(n));
    }
    reports.push_back(TestReport::bound(
        "flow_noncrossing_monotone/f64=" + detail::fmt(freq[0]) + ",f256=" + detail::fmt(freq[1]) +
            ",f1024=" + detail::fmt(freq[2]),
        std::max(freq[1] - freq[0], freq[2] - freq[1]), 0.0, n));
  }

  stamp(reports, 0, clock.ms());
  return reports;
}

// ---------------------------------------------------------------------------
// Scenario panel: one batch of trajectory replicates with all per-replicate
// statistics the engine-level tests need.
// ---------------------------------------------------------------------------

struct ScenarioPanel {
  ScenarioConfig cfg;
  std::vector<TestFunction> suite;
  std::vector<int> cp_steps;
  std::vector<double> cp_times;
  std::uint64_t replicates = 0;
  // flattened [rep][phi][checkpoint]
  std::vector<double> martingale;
  std::vector<double> qv_integral;
  std::vector<double> observable;
  // flattened [rep][checkpoint]
  std::vector<double> total_mass;
  std::vector<double> initial_counts;  // [rep]
  std::vector<double> age_grid;
  std::vector<double> census;  // flattened [rep][age]; lived-longer-than-r counts by T
  double wall_ms = 0.0;
};

inline RecordedPath dispatch_simulation(const ScenarioConfig& cfg, std::uint64_t rep) {
  switch (cfg.q.form) {
    case QSpec::Form::zero:
      return simulate_sdsm(cfg, rep);
    case QSpec::Form::one:
    case QSpec::Form::constant:
      return simulate_immigration_deterministic(cfg, rep);
    case QSpec::Form::affine_total_mass:
      // The self-evaluated pass: acceptance at each window reads the path's
      // own pre-birth state, which is exactly the unique fixed point the
      // Picard iteration converges to under frozen streams (asserted
      // bit-exactly by the unit suite).
      return simulate_trajectory(cfg, rep);
  }
  throw std::logic_error("dispatch_simulation: unknown q form");
}

inline ScenarioPanel run_scenario_panel(const ScenarioConfig& cfg,
                                        std::vector<TestFunction> suite, int jobs,
                                        std::vector<double> age_grid = {}) {
  WallClock clock;
  ScenarioPanel panel;
  panel.cfg = cfg;
  panel.suite = std::move(suite);
  panel.cp_steps = cfg.checkpoint_steps();
  panel.cp_times = cfg.checkpoints;
  panel.replicates = cfg.replicates;
  panel.age_grid = std::move(age_grid);
  const std::size_t n_phi = panel.suite.size();
  const std::size_t n_cp = panel.cp_steps.size();
  const std::size_t n_age = panel.age_grid.size();
  const CorrelationFunction rho = CorrelationFunction::from_kernel(cfg.kernel);

  struct Row {
    std::vector<double> mart, qv, obs, mass, census;
    double initial = 0.0;
  };
  auto rows = run_replicates<Row>(cfg.replicates, jobs, [&](std::uint64_t rep) {
    const RecordedPath path = dispatch_simulation(cfg, rep);
    Row row;
    row.mart.resize(n_phi * n_cp);
    row.qv.resize(n_phi * n_cp);
    row.obs.resize(n_phi * n_cp);
    row.mass.resize(n_cp);
    row.initial = static_cast<double>(path.initial_excursions);

    MartingaleAccumulator acc(cfg, rho, panel.suite);
    std::size_t cp = 0;
    auto capture = [&](int step) {
      while (cp < n_cp && panel.cp_steps[cp] == step) {
        for (std::size_t p = 0; p < n_phi; ++p) {
          row.mart[p * n_cp + cp] = acc.martingale(p);
          row.qv[p * n_cp + cp] = acc.qv_integral(p);
          row.obs[p * n_cp + cp] = acc.observable(p);
        }
        row.mass[cp] = to_measure(path.steps[static_cast<std::size_t>(step)]).total_mass();
        ++cp;
      }
    };
    capture(0);
    for (std::size_t k = 1; k < path.steps.size(); ++k) {
      acc.feed(path.steps[k]);
      capture(static_cast<int>(k));
    }

    if (n_age > 0) {
      // Lived-longer-than-r census by the horizon: an atom counts for r iff
      // it was alive (matured, positive mass) at excursion age r.
      std::map<std::uint64_t, std::pair<int, int>> alive_span;  // id -> [first, last] step
      std::map<std::uint64_t, int> birth_step;
      for (std::size_t k = 0; k < path.steps.size(); ++k) {
        for (const auto& a : path.steps[k].atoms) {
          if (!birth_step.count(a.id))
            birth_step[a.id] = static_cast<int>(std::llround(a.birth_time / cfg.dt));
          if (a.matured && a.mass > 0.0) {
            auto it = alive_span.find(a.id);
            if (it == alive_span.end())
              alive_span[a.id] = {static_cast<int>(k), static_cast<int>(k)};
            else
              it->second.second = static_cast<int>(k);
          }
        }
      }
      row.census.assign(n_age, 0.0);
      const int last_step = static_cast<int>(path.steps.size()) - 1;
      for (const auto& [id, span] : alive_span) {
        const int b = birth_step[id];
        for (std::size_t g = 0; g < n_age; ++g) {
          const int target = b + static_cast<int>(std::llround(panel.age_grid[g] / cfg.dt));
          if (target <= last_step && span.first <= target && target <= span.second)
            row.census[g] += 1.0;
        }
      }
    }
    return row;
  });

  panel.martingale.resize(cfg.replicates * n_phi * n_cp);
  panel.qv_integral.resize(cfg.replicates * n_phi * n_cp);
  panel.observable.resize(cfg.replicates * n_phi * n_cp);
  panel.total_mass.resize(cfg.replicates * n_cp);
  panel.initial_counts.resize(cfg.replicates);
  panel.census.resize(cfg.replicates * n_age);
  for (std::uint64_t r = 0; r < cfg.replicates; ++r) {
    std::copy(rows[r].mart.begin(), rows[r].mart.end(),
              panel.martingale.begin() + static_cast<std::ptrdiff_t>(r * n_phi * n_cp));
    std::copy(rows[r].qv.begin(), rows[r].qv.end(),
              panel.qv_integral.begin() + static_cast<std::ptrdiff_t>(r * n_phi * n_cp));
    std::copy(rows[r].obs.begin(), rows[r].obs.end(),
              panel.observable.begin() + static_cast<std::ptrdiff_t>(r * n_phi * n_cp));
    std::copy(rows[r].mass.begin(), rows[r].mass.end(),
              panel.total_mass.begin() + static_cast<std::ptrdiff_t>(r * n_cp));
    panel.initial_counts[r] = rows[r].initial;
    std::copy(rows[r].census.begin(), rows[r].census.end(),
              panel.census.begin() + static_cast<std::ptrdiff_t>(r * n_age));
  }
  panel.wall_ms = clock.ms();
  return panel;
}

namespace detail {

inline std::vector<double> panel_slice(const std::vector<double>& flat, std::uint64_t reps,
                                       std::size_t stride, std::size_t offset) {
  std::vector<double> out(reps);
  for (std::uint64_t r = 0; r < reps; ++r) out[r] = flat[r * stride + offset];
  return out;
}

}  // namespace detail

// Ensemble mean of every martingale functional must vanish.
inline std::vector<TestReport> test_martingale_mean(const ScenarioPanel& panel) {
  std::vector<TestReport> reports;
  const std::size_t n_phi = panel.suite.size();
  const std::size_t n_cp = panel.cp_steps.size();
  for (std::size_t p = 0; p < n_phi; ++p)
    for (std::size_t c = 0; c < n_cp; ++c) {
      const auto xs =
          detail::panel_slice(panel.martingale, panel.replicates, n_phi * n_cp, p * n_cp + c);
      const SampleStats s = sample_stats(xs);
      auto r = TestReport::mc("martingale_mean/" + panel.suite[p].name() +
                                  "/t=" + detail::fmt(panel.cp_times[c]),
                              s.mean, 0.0, s.stderr_mean, panel.replicates);
      r.wall_ms = panel.wall_ms;
      reports.push_back(std::move(r));
    }
  return reports;
}

// E[M_t(phi)^2] against the mean integrated predicted quadratic variation,
// paired per replicate.
inline std::vector<TestReport> test_quadratic_variation(const ScenarioPanel& panel) {
  std::vector<TestReport> reports;
  const std::size_t n_phi = panel.suite.size();
  const std::size_t n_cp = panel.cp_steps.size();
  for (std::size_t p = 0; p < n_phi; ++p)
    for (std::size_t c = 0; c < n_cp; ++c) {
      std::vector<double> diff(panel.replicates);
      for (std::uint64_t r = 0; r < panel.replicates; ++r) {
        const double m = panel.martingale[r * n_phi * n_cp + p * n_cp + c];
        diff[r] = m * m - panel.qv_integral[r * n_phi * n_cp + p * n_cp + c];
      }
      const SampleStats s = sample_stats(diff);
      auto r = TestReport::mc("quadratic_variation/" + panel.suite[p].name() +
                                  "/t=" + detail::fmt(panel.cp_times[c]),
                              s.mean, 0.0, s.stderr_mean, panel.replicates);
      r.wall_ms = panel.wall_ms;
      reports.push_back(std::move(r));
    }
  return reports;
}

// Total-mass mean and variance against the closed moment system, plus the
// dual-chain cross check.
inline std::vector<TestReport> test_immigration_moments(const ScenarioPanel& panel,
                                                        std::uint64_t seed = kDefaultSeed,
                                                        std::uint64_t dual_chains = 100000) {
  std::vector<TestReport> reports;
  const auto& cfg = panel.cfg;
  const double mu_bar = cfg.mu.total_mass();
  const double flux = cfg.q.value(0.0) * cfg.m.total_mass();  // q constant here
  const std::size_t n_cp = panel.cp_steps.size();
  for (std::size_t c = 0; c < n_cp; ++c) {
    const double t = panel.cp_times[c];
    const auto moments = moment_ode(2, t, cfg.sigma, flux, mu_bar);
    const auto xs = detail::panel_slice(panel.total_mass, panel.replicates, n_cp, c);
    const SampleStats s = sample_stats(xs);
    auto mean_rep = TestReport::mc("mass_mean/t=" + detail::fmt(t), s.mean, moments[0],
                                   s.stderr_mean, panel.replicates);
    mean_rep.wall_ms = panel.wall_ms;
    reports.push_back(std::move(mean_rep));
    auto var_rep = TestReport::mc("mass_var/t=" + detail::fmt(t), s.var,
                                  moments[1] - moments[0] * moments[0], s.stderr_var,
                                  panel.replicates);
    var_rep.wall_ms = panel.wall_ms;
    reports.push_back(std::move(var_rep));
  }
  // Dual chain against the same moment system at the horizon.
  {
    WallClock clock;
    const double t = cfg.horizon;
    Rng rng(mix_seed(seed, 0x4d4f4d));
    for (int n = 1; n <= 2; ++n) {
      std::vector<double> draws(dual_chains);
      for (auto& v : draws) v = dual_chain_sample(n, t, cfg.sigma, flux, mu_bar, rng);
      const SampleStats s = sample_stats(draws);
      const double expected = moment_ode(n, t, cfg.sigma, flux, mu_bar).back();
      auto r = TestReport::mc("mass_dual_cross/n=" + std::to_string(n), s.mean, expected,
                              s.stderr_mean, dual_chains);
      r.wall_ms = clock.ms();
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

// Ensemble mean of <phi, Y_t> against the heat-semigroup first-moment
// formula (deterministic rate, analytic phi).
inline std::vector<TestReport> test_first_moment_field(const ScenarioPanel& panel) {
  std::vector<TestReport> reports;
  const auto& cfg = panel.cfg;
  const CorrelationFunction rho = CorrelationFunction::from_kernel(cfg.kernel);
  const std::size_t n_phi = panel.suite.size();
  const std::size_t n_cp = panel.cp_steps.size();
  const double q_const = cfg.q.value(0.0);
  for (std::size_t p = 0; p < n_phi; ++p)
    for (std::size_t c = 0; c < n_cp; ++c) {
      const double expected = first_moment_field(panel.suite[p], panel.cp_times[c], rho.rho0,
                                                 cfg.mu.atoms, cfg.m.atoms, q_const);
      const auto xs =
          detail::panel_slice(panel.observable, panel.replicates, n_phi * n_cp, p * n_cp + c);
      const SampleStats s = sample_stats(xs);
      auto r = TestReport::mc("first_moment_field/" + panel.suite[p].name() +
                                  "/t=" + detail::fmt(panel.cp_times[c]),
                              s.mean, expected, s.stderr_mean, panel.replicates);
      r.wall_ms = panel.wall_ms;
      reports.push_back(std::move(r));
    }
  return reports;
}

// Interactive scenario: total-mass mean against the scalar rate ODE
// dm/dt = <1, m> (c0 + c1 m), integrated by RK4 on a fine grid.
inline std::vector<TestReport> test_affine_mean(const ScenarioPanel& panel) {
  std::vector<TestReport> reports;
  const auto& cfg = panel.cfg;
  const double m_bar = cfg.m.total_mass();
  auto rhs = [&](double m) { return m_bar * (cfg.q.c0 + cfg.q.c1 * m); };
  const std::size_t n_cp = panel.cp_steps.size();
  double m = cfg.mu.total_mass();
  double t = 0.0;
  const double h = cfg.dt / 4.0;
  std::size_t c = 0;
  std::vector<double> ode(n_cp, 0.0);
  while (c < n_cp) {
    if (t >= panel.cp_times[c] - 1e-12) {
      ode[c] = m;
      ++c;
      continue;
    }
    const double k1 = rhs(m);
    const double k2 = rhs(m + 0.5 * h * k1);
    const double k3 = rhs(m + 0.5 * h * k2);
    const double k4 = rhs(m + h * k3);
    m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += h;
  }
  for (std::size_t k = 0; k < n_cp; ++k) {
    const auto xs = detail::panel_slice(panel.total_mass, panel.replicates, n_cp, k);
    const SampleStats s = sample_stats(xs);
    auto r = TestReport::mc("affine_mass_mean/t=" + detail::fmt(panel.cp_times[k]), s.mean,
                            ode[k], s.stderr_mean, panel.replicates);
    r.wall_ms = panel.wall_ms;
    reports.push_back(std::move(r));
  }
  return reports;
}

// Atom census: initial-excursion Poisson counts and the lived-longer-than-r
// bound 2 (mu + sup q . m T) / (sigma r).
inline std::vector<TestReport> test_atom_census(const ScenarioPanel& panel) {
  std::vector<TestReport> reports;
  const auto& cfg = panel.cfg;
  if (!cfg.mu_direct) {
    const SampleStats s = sample_stats(panel.initial_counts);
    const double lambda = cfg.mu.total_mass() * 2.0 / (cfg.beta * cfg.delta);
    reports.push_back(TestReport::mc("census_initial_count_mean", s.mean, lambda,
                                     std::sqrt(lambda / static_cast<double>(panel.replicates)),
                                     panel.replicates));
    reports.push_back(
        TestReport::mc("census_initial_count_var", s.var, lambda, s.stderr_var,
                       panel.replicates));
  }
  const double sup_rate = cfg.q.value(0.0);  // constant-rate census scenarios
  const double weight = cfg.mu.total_mass() + sup_rate * cfg.m.total_mass() * cfg.horizon;
  for (std::size_t g = 0; g < panel.age_grid.size(); ++g) {
    const auto xs = detail::panel_slice(panel.census, panel.replicates, panel.age_grid.size(), g);
    const SampleStats s = sample_stats(xs);
    const double bound = 2.0 * weight / (cfg.sigma * panel.age_grid[g]);
    auto r = TestReport::bound("census_age_bound/r=" + detail::fmt(panel.age_grid[g]),
                               s.mean - 3.0 * s.stderr_mean, bound, panel.replicates, bound);
    r.wall_ms = panel.wall_ms;
    reports.push_back(std::move(r));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Chop convergence: one fine trajectory per replicate, coarser chops read off
// it by lifetime filtering (nested coupling).
// ---------------------------------------------------------------------------

inline std::vector<TestReport> test_chop_convergence(const ScenarioConfig& coarse_cfg, int jobs) {
  WallClock clock;
  ScenarioConfig cfg = coarse_cfg;
  cfg.delta = coarse_cfg.delta / 4.0;
  cfg.validate();
  const int fine_steps = cfg.delta_steps();
  const std::vector<int> levels = {4 * fine_steps, 2 * fine_steps, fine_steps};
  const int n_steps = cfg.n_steps();
  const int extra = levels.front();
  const std::vector<TestFunction> phis = {TestFunction::constant(1.0),
                                          TestFunction::gaussian_bump(0.5, 1.0)};

  struct Row {
    bool monotone = true;
    std::vector<double> sup_dist;  // [phi][level]
  };
  auto rows = run_replicates<Row>(cfg.replicates, jobs, [&](std::uint64_t rep) {
    const RecordedPath path = simulate_trajectory(cfg, rep, nullptr, extra);

    // Per-atom arrays reconstructed from the snapshots.
    struct AtomTrack {
      int birth_step = 0;
      int first_step = 1 << 30;  // first snapshot the atom appears in
      std::vector<double> pos, mass;
      bool direct = false;
    };
    std::map<std::uint64_t, AtomTrack> atoms;
    for (std::size_t k = 0; k < path.steps.size(); ++k) {
      for (const auto& a : path.steps[k].atoms) {
        auto& tr = atoms[a.id];
        if (tr.first_step == (1 << 30)) {
          tr.first_step = static_cast<int>(k);
          tr.birth_step = static_cast<int>(std::llround(a.birth_time / cfg.dt));
          tr.direct = cfg.mu_direct && tr.birth_step == 0 && a.matured && k == 0;
        }
        tr.pos.push_back(a.location);
        tr.mass.push_back(a.matured ? a.mass : 0.0);
      }
    }
    auto mass_at = [&](const AtomTrack& tr, int step) {
      const int idx = step - tr.first_step;
      if (idx < 0 || idx >= static_cast<int>(tr.mass.size())) return 0.0;
      return tr.mass[static_cast<std::size_t>(idx)];
    };
    auto pos_at = [&](const AtomTrack& tr, int step) {
      const int idx = step - tr.first_step;
      if (idx < 0) return tr.pos.empty() ? 0.0 : tr.pos.front();
      if (idx >= static_cast<int>(tr.pos.size())) return tr.pos.back();
      return tr.pos[static_cast<std::size_t>(idx)];
    };

    Row row;
    row.sup_dist.assign(phis.size() * levels.size(), 0.0);
    for (int k = 0; k <= n_steps; ++k) {
      for (std::size_t p = 0; p < phis.size(); ++p) {
        std::vector<double> y_level(levels.size(), 0.0), x_level(levels.size(), 0.0);
        for (const auto& [id, tr] : atoms) {
          const double m_here = mass_at(tr, k);
          if (tr.direct) {
            // The atomic-start cohort is never chopped; it contributes
            // identically to every level and to both variants.
            if (m_here > 0.0) {
              const double v = m_here * phis[p].value(pos_at(tr, k));
              for (std::size_t l = 0; l < levels.size(); ++l) {
                y_level[l] += v;
                x_level[l] += v;
              }
            }
            continue;
          }
          for (std::size_t l = 0; l < levels.size(); ++l) {
            const bool survives = mass_at(tr, tr.birth_step + levels[l]) > 0.0;
            if (!survives) continue;
            if (k >= tr.birth_step + levels[l] && m_here > 0.0)
              y_level[l] += m_here * phis[p].value(pos_at(tr, k));
            if (k >= tr.birth_step) {
              const double m_shift = mass_at(tr, k + levels[l]);
              if (m_shift > 0.0) x_level[l] += m_shift * phis[p].value(pos_at(tr, k));
            }
          }
        }
        const double y_ref = y_level.back();  // finest level is the reference path
        for (std::size_t l = 0; l + 1 < levels.size(); ++l)
          if (y_level[l] > y_level[l + 1]) row.monotone = false;
        for (std::size_t l = 0; l < levels.size(); ++l)
          row.sup_dist[p * levels.size() + l] =
              std::max(row.sup_dist[p * levels.size() + l], std::fabs(x_level[l] - y_ref));
      }
    }
    return row;
  });

  std::uint64_t monotone = 0;
  std::vector<std::uint64_t> decreasing(phis.size(), 0);
  for (const auto& row : rows) {
    if (row.monotone) ++monotone;
    for (std::size_t p = 0; p < phis.size(); ++p) {
      const double d0 = row.sup_dist[p * levels.size() + 0];
      const double d1 = row.sup_dist[p * levels.size() + 1];
      const double d2 = row.sup_dist[p * levels.size() + 2];
      // A degenerate path with no immigrants has every distance exactly 0.
      if ((d0 > d1 && d1 > d2) || (d0 == 0.0 && d1 == 0.0 && d2 == 0.0)) ++decreasing[p];
    }
  }
  const double n = static_cast<double>(cfg.replicates);
  std::vector<TestReport> reports;
  reports.push_back(TestReport::bound("chop_monotone_fraction",
                                      1.0 - static_cast<double>(monotone) / n, 0.0,
                                      cfg.replicates, 1.0));
  for (std::size_t p = 0; p < phis.size(); ++p)
    reports.push_back(TestReport::bound(
        "chop_shift_distance_decreasing/" + phis[p].name(),
        0.95 - static_cast<double>(decreasing[p]) / n, 0.0, cfg.replicates, 0.95));
  stamp(reports, 0, clock.ms());
  return reports;
}

// ---------------------------------------------------------------------------
// Pathwise uniqueness of the interactive equation under frozen noise.
// ---------------------------------------------------------------------------

inline std::vector<TestReport> test_pathwise_uniqueness(const ScenarioConfig& cfg,
                                                        std::uint64_t replicates, int jobs) {
  WallClock clock;
  struct Row {
    double dist = 0.0;
    int runs_a = 0, runs_b = 0;
    bool control_differs = false;
  };
  auto rows = run_replicates<Row>(replicates, jobs, [&](std::uint64_t rep) {
    Row row;
    const PicardResult a = simulate_immigration_interactive(cfg, rep, PicardStart::zero);
    const PicardResult b =
        simulate_immigration_interactive(cfg, rep, PicardStart::deterministic_rate);
    row.dist = sup_tv_distance(a.path, b.path);
    row.runs_a = a.runs;
    row.runs_b = b.runs;
    if (rep < 20) {
      const PicardResult c =
          simulate_immigration_interactive(cfg, rep, PicardStart::zero, /*thinning_salt=*/1);
      row.control_differs = sup_tv_distance(a.path, c.path) > 0.0;
    }
    return row;
  });

  double max_dist = 0.0;
  int max_runs = 0;
  std::uint64_t control_total = 0, control_differs = 0;
  for (std::uint64_t r = 0; r < rows.size(); ++r) {
    max_dist = std::max(max_dist, rows[r].dist);
    max_runs = std::max({max_runs, rows[r].runs_a, rows[r].runs_b});
    if (r < 20) {
      ++control_total;
      if (rows[r].control_differs) ++control_differs;
    }
  }
  std::vector<TestReport> reports;
  reports.push_back(
      TestReport::bound("picard_two_starts_sup_tv", max_dist, 0.0, replicates, 0.0));
  reports.push_back(TestReport::bound("picard_max_runs", static_cast<double>(max_runs),
                                      static_cast<double>(kPicardMax), replicates));
  reports.push_back(TestReport::bound(
      "picard_thinning_control_same_fraction",
      1.0 - static_cast<double>(control_differs) / static_cast<double>(control_total), 0.1,
      control_total, 0.0));
  stamp(reports, 0, clock.ms());
  return reports;
}

// ---------------------------------------------------------------------------
// Suites.
// ---------------------------------------------------------------------------

struct SuiteOutcome {
  std::string name;
  std::vector<TestReport> reports;
  bool all_pass = true;
  double wall_ms = 0.0;

  void append(std::vector<TestReport> more) {
    for (auto& r : more) {
      all_pass = all_pass && r.pass;
      reports.push_back(std::move(r));
    }
  }
};

inline SuiteOutcome run_suite(const std::string& name, std::uint64_t seed, int jobs) {
  WallClock clock;
  SuiteOutcome out;
  out.name = name;
  const bool all = name == "full";
  bool known = all;
  if (all || name == "feller") {
    known = true;
    out.append(test_feller_laplace(seed, 100000, jobs));
    out.append(test_feller_extinction(seed, 100000, jobs));
  }
  if (all || name == "excursions") {
    known = true;
    out.append(test_excursion_law(seed));
    out.append(test_entrance_consistency(seed));
  }
  if (all || name == "flow") {
    known = true;
    out.append(test_flow_statistics(seed, jobs));
  }
  if (all || name == "dual") {
    known = true;
    out.append(test_dual_agreement(seed, 100000, jobs));
  }
  if (all || name == "sdsm") {
    known = true;
    const auto panel = run_scenario_panel(scenario_sdsm_spatial(seed), default_phi_suite(), jobs);
    out.append(test_martingale_mean(panel));
    out.append(test_quadratic_variation(panel));
    const auto poisson_panel =
        run_scenario_panel(scenario_sdsm_poissonized(seed), {TestFunction::constant(1.0)}, jobs);
    out.append(test_martingale_mean(poisson_panel));
    out.append(test_quadratic_variation(poisson_panel));
  }
  if (all || name == "immigration") {
    known = true;
    const auto panel = run_scenario_panel(
        scenario_immigration(seed),
        {TestFunction::constant(1.0), TestFunction::cosine(1.0), TestFunction::cosine(3.0)},
        jobs);
    out.append(test_immigration_moments(panel, seed));
    out.append(test_first_moment_field(panel));
  }
  if (all || name == "interactive") {
    known = true;
    auto cfg = scenario_interactive(seed);
    const auto panel = run_scenario_panel(cfg, {TestFunction::constant(1.0)}, jobs);
    out.append(test_affine_mean(panel));
    auto unique_cfg = cfg;
    unique_cfg.replicates = 100;
    out.append(test_pathwise_uniqueness(unique_cfg, 100, jobs));
  }
  if (all || name == "chop") {
    known = true;
    out.append(test_chop_convergence(scenario_chop(seed), jobs));
  }
  if (all || name == "census") {
    known = true;
    const auto panel = run_scenario_panel(scenario_census(seed), {TestFunction::constant(1.0)},
                                          jobs, {0.05, 0.1, 0.2, 0.4});
    out.append(test_atom_census(panel));
  }
  if (!known) throw std::invalid_argument("unknown suite: " + name);
  out.wall_ms = clock.ms();
  return out;
}

// Scenario-bound verification for a user config: the martingale problem plus
// whatever moment oracles apply to its rate form.
inline SuiteOutcome run_config_suite(const ScenarioConfig& cfg, int jobs) {
  WallClock clock;
  SuiteOutcome out;
  out.name = "config";
  const auto panel =
      run_scenario_panel(cfg, default_phi_suite(), jobs, {cfg.delta * 4.0, cfg.delta * 16.0});
  out.append(test_martingale_mean(panel));
  out.append(test_quadratic_variation(panel));
  out.append(test_atom_census(panel));
  switch (cfg.q.form) {
    case QSpec::Form::zero:
      break;
    case QSpec::Form::one:
    case QSpec::Form::constant:
      out.append(test_immigration_moments(panel, cfg.seed));
      break;
    case QSpec::Form::affine_total_mass:
      out.append(test_affine_mean(panel));
      break;
  }
  out.wall_ms = clock.ms();
  return out;
}

inline nlohmann::json suite_to_json(const SuiteOutcome& outcome, std::uint64_t seed) {
  nlohmann::json tests = nlohmann::json::array();
  std::size_t mc_gates = 0;
  for (const auto& r : outcome.reports) {
    tests.push_back(report_to_json(r));
    if (r.mc_gate) ++mc_gates;
  }
  std::ostringstream note;
  note << mc_gates << " Monte Carlo gates at |z| <= 3; expected false failures about "
       << 0.0027 * static_cast<double>(mc_gates) << " per run";
  return {{"suite", outcome.name}, {"seed", seed},     {"all_pass", outcome.all_pass},
          {"wall_ms", outcome.wall_ms}, {"note", note.str()}, {"tests", tests}};
}

}  // namespace excursim

#endif  // EXCURSIM_VERIFICATION_HPP
