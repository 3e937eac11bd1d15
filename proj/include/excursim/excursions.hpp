#ifndef EXCURSIM_EXCURSIONS_HPP
#define EXCURSIM_EXCURSIONS_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "excursim/feller.hpp"
#include "excursim/measures.hpp"
#include "excursim/rng.hpp"

namespace excursim {

// One-dimensional marginals kappa_t of the excursion law: density
// 4 (beta t)^-2 exp(-2y / beta t) on (0, inf), total mass 2 / beta t.
// Normalized it is exponential with mean beta t / 2.
struct EntranceLaw {
  double beta = 1.0;
  double t = 1.0;

  EntranceLaw(double beta_, double t_) : beta(beta_), t(t_) {
    if (!(beta > 0.0) || !(t > 0.0)) throw std::invalid_argument("EntranceLaw: need beta, t > 0");
  }

  double total_mass() const { return 2.0 / (beta * t); }
  double density(double y) const {
    const double bt = beta * t;
    return y > 0.0 ? 4.0 / (bt * bt) * std::exp(-2.0 * y / bt) : 0.0;
  }
};

inline double entrance_law_sample(const EntranceLaw& law, Rng& rng) {
  return rng.exponential(0.5 * law.beta * law.t);
}

// Number of excursions with lifetime > delta carried by total weight
// `total_weight` (an initial mass <1, mu> or an immigration window mass):
// Poisson with mean total_weight * 2 / (beta delta).
inline std::uint64_t sample_excursion_count(double total_weight, double delta, double beta,
                                            Rng& rng) {
  if (total_weight < 0.0 || !(delta > 0.0) || !(beta > 0.0))
    throw std::domain_error("sample_excursion_count: bad input");
  if (total_weight == 0.0) return 0;
  return rng.poisson(total_weight * 2.0 / (beta * delta));
}

// One sampled excursion, represented from its chop time onward: masses[i] is
// the mass at time birth_time + chop + i * grid_dt.  The unchopped head
// (0, chop) is never materialized.
struct ExcursionRecord {
  double birth_time = 0.0;
  double birth_location = 0.0;
  double chop = 0.0;
  double grid_dt = 0.0;
  std::vector<double> masses;
  bool absorbed = false;

  double current_mass() const { return masses.empty() ? 0.0 : masses.back(); }
  bool alive() const { return !absorbed && !masses.empty() && masses.back() > 0.0; }

  // Excursion-clock age of the last recorded grid point.
  double age() const {
    return masses.empty() ? 0.0 : chop + static_cast<double>(masses.size() - 1) * grid_dt;
  }

  // Lifetime exceeded `r` iff the mass at excursion age r is positive.
  // Requires r to lie on the record's grid.
  bool lifetime_exceeds(double r) const {
    if (r <= chop) return !masses.empty() && masses.front() > 0.0;
    const double idx_real = (r - chop) / grid_dt;
    const auto idx = static_cast<std::size_t>(std::llround(idx_real));
    if (idx >= masses.size()) return alive();  // still alive at the last recorded point
    return masses[idx] > 0.0;
  }
};

// Append one grid mass via the exact Feller transition.  `step_duration` is
// dt for constant branching rate and the psi-increment under a time change.
// Absorbed records are left unchanged.
inline void evolve_excursion(ExcursionRecord& rec, double step_duration, double beta, Rng& rng) {
  if (rec.absorbed) return;
  if (rec.masses.empty()) throw std::logic_error("evolve_excursion: no entrance mass yet");
  const double next = feller_exact_step(rec.masses.back(), step_duration, beta, rng);
  rec.masses.push_back(next);
  if (next == 0.0) rec.absorbed = true;
}

// Poisson sampling of the initial excursion cloud of a measure mu: count
// ~ Poisson(<1, mu> 2 / beta delta), locations i.i.d. mu / <1, mu>, entrance
// mass from kappa_delta.
inline std::vector<ExcursionRecord> sample_initial_excursions(
    double mu_total_mass, const std::function<double(Rng&)>& location_sampler, double delta,
    double beta, double grid_dt, Rng& rng) {
  std::vector<ExcursionRecord> out;
  if (mu_total_mass == 0.0) return out;
  const std::uint64_t count = sample_excursion_count(mu_total_mass, delta, beta, rng);
  out.reserve(count);
  const EntranceLaw law(beta, delta);
  for (std::uint64_t i = 0; i < count; ++i) {
    ExcursionRecord rec;
    rec.birth_time = 0.0;
    rec.birth_location = location_sampler(rng);
    rec.chop = delta;
    rec.grid_dt = grid_dt;
    rec.masses.push_back(entrance_law_sample(law, rng));
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ExcursionRecord> sample_initial_excursions(const AtomicMeasure& mu,
                                                              double delta, double beta,
                                                              double grid_dt, Rng& rng) {
  const double total = mu.total_mass();
  auto sampler = [&mu, total](Rng& r) {
    double u = r.uniform_co() * total;
    for (const auto& a : mu.atoms) {
      if (u < a.mass) return a.location;
      u -= a.mass;
    }
    return mu.atoms.back().location;
  };
  return sample_initial_excursions(total, sampler, delta, beta, grid_dt, rng);
}

// Nested-chop coupling: a stream generated at a fine chop filtered on
// lifetime > delta is exactly a stream generated at chop delta.  This makes
// the monotone convergence of the chopped approximations a structural,
// bit-exact property instead of a distributional one.
inline std::vector<ExcursionRecord> chop_filter(const std::vector<ExcursionRecord>& fine,
                                                double delta) {
  std::vector<ExcursionRecord> out;
  for (const auto& rec : fine)
    if (rec.lifetime_exceeds(delta)) out.push_back(rec);
  return out;
}

}  // namespace excursim

#endif  // EXCURSIM_EXCURSIONS_HPP
