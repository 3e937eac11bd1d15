#ifndef EXCURSIM_FLOW_HPP
#define EXCURSIM_FLOW_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "excursim/kernels.hpp"
#include "excursim/rng.hpp"

namespace excursim {

// Discretized stochastic flow over the current atom set.  The white noise is
// never laid on a spatial grid: each step draws the k-dimensional Gaussian
// projection onto the distinct atom positions, with covariance
// rho(x_i - x_j) dt evaluated at the step start.
//
// Atoms inserted at bit-identical positions share one slot and therefore one
// path forever (the flow started twice from one point is one path).
class FlowEnsemble {
 public:
  explicit FlowEnsemble(CorrelationFunction rho, double start_time = 0.0)
      : rho_(std::move(rho)), time_(start_time) {}

  // Returns the id of the new atom.
  std::uint64_t insert_atom(double location) {
    const std::uint64_t id = next_id_++;
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      if (slots_[s].refcount > 0 && slots_[s].position == location) {
        ++slots_[s].refcount;
        atom_slot_[id] = s;
        return id;
      }
    }
    std::size_t s = slots_.size();
    if (!free_slots_.empty()) {
      s = free_slots_.back();
      free_slots_.pop_back();
      slots_[s] = Slot{location, 1};
    } else {
      slots_.push_back(Slot{location, 1});
    }
    atom_slot_[id] = s;
    return id;
  }

  void remove_atom(std::uint64_t id) {
    auto it = atom_slot_.find(id);
    if (it == atom_slot_.end()) throw std::logic_error("FlowEnsemble: unknown atom id");
    Slot& slot = slots_[it->second];
    if (--slot.refcount == 0) free_slots_.push_back(it->second);
    atom_slot_.erase(it);
  }

  double position(std::uint64_t id) const {
    auto it = atom_slot_.find(id);
    if (it == atom_slot_.end()) throw std::logic_error("FlowEnsemble: unknown atom id");
    return slots_[it->second].position;
  }

  std::size_t atom_count() const { return atom_slot_.size(); }

  std::size_t distinct_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_)
      if (s.refcount > 0) ++n;
    return n;
  }

  double time() const { return time_; }

  // One joint move of every occupied slot.  Slots are factored in ascending
  // position order so the draw does not depend on atom insertion history.
  void step(double dt, Rng& rng) {
    if (!(dt > 0.0)) throw std::domain_error("FlowEnsemble::step: dt must be positive");
    std::vector<std::size_t> order;
    order.reserve(slots_.size());
    for (std::size_t s = 0; s < slots_.size(); ++s)
      if (slots_[s].refcount > 0) order.push_back(s);
    time_ += dt;
    if (order.empty()) return;
    std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
      if (slots_[a].position != slots_[b].position) return slots_[a].position < slots_[b].position;
      return a < b;
    });
    const std::size_t k = order.size();
    std::vector<double> pos(k);
    for (std::size_t i = 0; i < k; ++i) pos[i] = slots_[order[i]].position;
    Matrix cov = correlation_matrix(rho_, pos);
    for (double& c : cov.a) c *= dt;
    const Matrix chol = cholesky_psd(cov, rho_.rho0 * dt, &pos);
    std::vector<double> g(k);
    for (std::size_t i = 0; i < k; ++i) g[i] = rng.normal();
    for (std::size_t i = 0; i < k; ++i) {
      double inc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) inc += chol(i, j) * g[j];
      slots_[order[i]].position += inc;
    }
  }

  const CorrelationFunction& rho() const { return rho_; }

 private:
  struct Slot {
    double position = 0.0;
    int refcount = 0;
  };

  CorrelationFunction rho_;
  double time_ = 0.0;
  std::uint64_t next_id_ = 0;
  std::vector<Slot> slots_;
  std::vector<std::size_t> free_slots_;
  std::unordered_map<std::uint64_t, std::size_t> atom_slot_;
};

}  // namespace excursim

#endif  // EXCURSIM_FLOW_HPP
