#ifndef EXCURSIM_HARNESS_HPP
#define EXCURSIM_HARNESS_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace excursim {

// One verified statistic.  Monte Carlo gates pass iff |z| <= 3; deterministic
// gates pass iff the statistic is within its tolerance.
struct TestReport {
  std::string name;
  double statistic = 0.0;
  double expected = 0.0;
  double dispersion = 0.0;  // stderr for MC gates, tolerance for deterministic ones
  double z = 0.0;           // z-score or statistic/tolerance ratio
  bool mc_gate = true;
  bool pass = false;
  std::uint64_t replicates = 0;
  double wall_ms = 0.0;

  static TestReport mc(std::string name, double statistic, double expected, double stderr_,
                       std::uint64_t replicates) {
    TestReport r;
    r.name = std::move(name);
    r.statistic = statistic;
    r.expected = expected;
    r.dispersion = stderr_;
    r.z = stderr_ > 0.0 ? (statistic - expected) / stderr_
                        : (statistic == expected ? 0.0 : std::numeric_limits<double>::infinity());
    r.mc_gate = true;
    r.pass = std::fabs(r.z) <= 3.0;
    r.replicates = replicates;
    return r;
  }

  static TestReport bound(std::string name, double statistic, double tolerance,
                          std::uint64_t replicates, double expected = 0.0) {
    TestReport r;
    r.name = std::move(name);
    r.statistic = statistic;
    r.expected = expected;
    r.dispersion = tolerance;
    r.z = tolerance > 0.0 ? statistic / tolerance : (statistic <= 0.0 ? 0.0 : 1e300);
    r.mc_gate = false;
    r.pass = statistic <= tolerance;
    r.replicates = replicates;
    return r;
  }
};

inline nlohmann::json report_to_json(const TestReport& r) {
  return {{"name", r.name},
          {"statistic", r.statistic},
          {"expected", r.expected},
          {r.mc_gate ? "stderr" : "tolerance", r.dispersion},
          {r.mc_gate ? "z" : "ratio", r.z},
          {"gate", r.mc_gate ? "mc_3sigma" : "tolerance"},
          {"pass", r.pass},
          {"replicates", r.replicates},
          {"wall_ms", r.wall_ms}};
}

struct SampleStats {
  std::uint64_t n = 0;
  double mean = 0.0;
  double var = 0.0;  // unbiased
  double m4 = 0.0;   // fourth central moment
  double stderr_mean = 0.0;
  double stderr_var = 0.0;
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  double v2 = 0.0, v4 = 0.0;
  for (double x : xs) {
    const double d = x - s.mean;
    v2 += d * d;
    v4 += d * d * d * d;
  }
  if (s.n > 1) s.var = v2 / static_cast<double>(s.n - 1);
  s.m4 = v4 / static_cast<double>(s.n);
  s.stderr_mean = std::sqrt(s.var / static_cast<double>(s.n));
  const double var_of_var = std::max(s.m4 - s.var * s.var, 0.0) / static_cast<double>(s.n);
  s.stderr_var = std::sqrt(var_of_var);
  return s;
}

// Fan replicates out to worker threads; each replicate derives its own
// randomness from its index, so the result is a fixed-order vector
// independent of scheduling.
template <class T, class F>
std::vector<T> run_replicates(std::uint64_t count, int jobs, F&& fn) {
  std::vector<T> out(count);
  if (jobs < 1) jobs = 1;
  const int workers = static_cast<int>(std::min<std::uint64_t>(count, jobs));
  if (workers <= 1) {
    for (std::uint64_t r = 0; r < count; ++r) out[r] = fn(r);
    return out;
  }
  std::atomic<std::uint64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::uint64_t r = next.fetch_add(1);
      if (r >= count) return;
      try {
        out[r] = fn(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline void stamp(std::vector<TestReport>& reports, std::size_t from, double wall_ms) {
  for (std::size_t i = from; i < reports.size(); ++i) reports[i].wall_ms = wall_ms;
}

}  // namespace excursim

#endif  // EXCURSIM_HARNESS_HPP
