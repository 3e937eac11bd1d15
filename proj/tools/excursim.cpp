// Scenario runner: simulate writes trajectory/summary CSVs and a manifest,
// verify runs a statistical suite and writes a JSON report.  Outputs are a
// pure function of (config, seed); the manifest's timestamp is the one
// deliberate exception.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "excursim/scenario.hpp"
#include "excursim/superprocess.hpp"
#include "excursim/verification.hpp"

namespace fs = std::filesystem;
using namespace excursim;

namespace {

constexpr const char* kVersion = "excursim 0.1.0";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  bool force = false;
};

std::uint64_t resolve_seed(const CommonOpts& opts, std::uint64_t config_seed) {
  if (opts.seed) return *opts.seed;  // explicit flag wins
  if (const char* env = std::getenv("EXCURSIM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("EXCURSIM_SEED is not an unsigned integer");
    }
  }
  return config_seed;
}

int resolve_jobs(int jobs) {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void prepare_out_dir(const std::string& dir, bool force) {
  const fs::path p(dir);
  if (fs::exists(p)) {
    if (!fs::is_directory(p)) throw ConfigError("output path is not a directory: " + dir);
    if (!force && fs::exists(p / "manifest.json"))
      throw ConfigError("output directory already holds a run (use --force): " + dir);
  } else {
    fs::create_directories(p);
  }
}

int cmd_simulate(const CommonOpts& opts, bool trace) {
  ScenarioConfig cfg = load_config(opts.config_path);
  cfg.seed = resolve_seed(opts, cfg.seed);
  const int jobs = resolve_jobs(opts.jobs);
  prepare_out_dir(opts.out_dir, opts.force);

  const auto cp_steps = cfg.checkpoint_steps();
  struct Row {
    std::vector<StepSnapshot> checkpoints;
    RecordedPath trace_path;  // kept for replicate 0 only
  };
  auto rows = run_replicates<Row>(cfg.replicates, jobs, [&](std::uint64_t rep) {
    RecordedPath path = dispatch_simulation(cfg, rep);
    Row row;
    row.checkpoints.reserve(cp_steps.size());
    for (int s : cp_steps) row.checkpoints.push_back(path.steps[static_cast<std::size_t>(s)]);
    if (trace && rep == 0) row.trace_path = std::move(path);
    return row;
  });

  const fs::path out(opts.out_dir);
  std::vector<std::string> outputs;

  {
    std::ofstream csv(out / "trajectory.csv", std::ios::binary);
    csv << "replicate,time,atom_id,location,mass\n";
    for (std::uint64_t rep = 0; rep < cfg.replicates; ++rep)
      for (const auto& snap : rows[rep].checkpoints)
        for (const auto& a : snap.atoms) {
          if (!a.matured || a.mass <= 0.0) continue;
          csv << rep << ',' << format_double(snap.time) << ',' << a.id << ','
              << format_double(a.location) << ',' << format_double(a.mass) << '\n';
        }
    outputs.push_back("trajectory.csv");
  }

  {
    std::ofstream csv(out / "summary.csv", std::ios::binary);
    csv << "time,mean_mass,var_mass,atom_count_mean\n";
    for (std::size_t c = 0; c < cp_steps.size(); ++c) {
      std::vector<double> mass(cfg.replicates), count(cfg.replicates);
      for (std::uint64_t rep = 0; rep < cfg.replicates; ++rep) {
        const auto m = to_measure(rows[rep].checkpoints[c]);
        mass[rep] = m.total_mass();
        count[rep] = static_cast<double>(m.atoms.size());
      }
      const auto ms = sample_stats(mass);
      const auto cs = sample_stats(count);
      csv << format_double(cfg.checkpoints[c]) << ',' << format_double(ms.mean) << ','
          << format_double(ms.var) << ',' << format_double(cs.mean) << '\n';
    }
    outputs.push_back("summary.csv");
  }

  if (trace) {
    std::ofstream csv(out / "excursions.csv", std::ios::binary);
    csv << "id,birth_time,birth_location,grid_time,mass\n";
    std::map<std::uint64_t, std::pair<double, double>> birth;  // id -> (time, location)
    for (const auto& step : rows[0].trace_path.steps)
      for (const auto& a : step.atoms) {
        if (!birth.count(a.id)) birth[a.id] = {a.birth_time, a.location};
        if (!a.matured || a.mass <= 0.0) continue;
        csv << a.id << ',' << format_double(birth[a.id].first) << ','
            << format_double(birth[a.id].second) << ',' << format_double(step.time) << ','
            << format_double(a.mass) << '\n';
      }
    outputs.push_back("excursions.csv");
  }

  {
    nlohmann::json manifest = {{"version", kVersion},
                               {"config_hash", hex64(config_hash(cfg))},
                               {"seed", cfg.seed},
                               {"replicates", cfg.replicates},
                               {"outputs", outputs},
                               {"created_at_utc", iso_timestamp()}};
    std::ofstream mf(out / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << '\n';
  }

  std::cout << "simulate: " << cfg.replicates << " replicates -> " << opts.out_dir << "\n";
  return 0;
}

int cmd_verify(const CommonOpts& opts, const std::string& suite_name) {
  const int jobs = resolve_jobs(opts.jobs);
  SuiteOutcome outcome;
  std::uint64_t seed = kDefaultSeed;
  if (!opts.config_path.empty()) {
    ScenarioConfig cfg = load_config(opts.config_path);
    cfg.seed = resolve_seed(opts, cfg.seed);
    seed = cfg.seed;
    outcome = run_config_suite(cfg, jobs);
  } else {
    if (opts.seed) seed = *opts.seed;
    else if (const char* env = std::getenv("EXCURSIM_SEED")) seed = std::stoull(env);
    outcome = run_suite(suite_name, seed, jobs);
  }

  fs::create_directories(opts.out_dir);
  const fs::path report_path = fs::path(opts.out_dir) / "report.json";
  {
    std::ofstream rf(report_path, std::ios::binary);
    rf << suite_to_json(outcome, seed).dump(2) << '\n';
  }

  std::size_t passed = 0;
  for (const auto& r : outcome.reports) {
    if (r.pass)
      ++passed;
    else
      std::cout << "FAIL " << r.name << "  statistic=" << r.statistic
                << " expected=" << r.expected << " (" << (r.mc_gate ? "z=" : "ratio=") << r.z
                << ")\n";
  }
  std::cout << "verify[" << outcome.name << "]: " << passed << "/" << outcome.reports.size()
            << " gates passed, report " << report_path.string() << "\n";
  return outcome.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Excursion-driven superprocess simulator and verification harness"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonOpts sim_opts, ver_opts;
  bool trace = false;
  std::string suite_name = "full";

  auto* sim = app.add_subcommand("simulate", "run a scenario and write trajectory CSVs");
  sim->add_option("--config", sim_opts.config_path, "scenario config JSON")->required();
  sim->add_option("--out", sim_opts.out_dir, "output directory")->required();
  sim->add_option("--seed", sim_opts.seed, "override the config seed");
  sim->add_option("--jobs", sim_opts.jobs, "worker threads (default: cores)");
  sim->add_flag("--force", sim_opts.force, "overwrite an existing run directory");
  sim->add_flag("--trace", trace, "dump the excursion trace of replicate 0");

  auto* ver = app.add_subcommand("verify", "run a verification suite, write report.json");
  ver->add_option("suite", suite_name,
                  "builtin suite: feller excursions flow dual sdsm immigration interactive "
                  "chop census full");
  ver->add_option("--config", ver_opts.config_path, "verify a scenario config instead");
  ver->add_option("--out", ver_opts.out_dir, "report directory (default .)");
  ver->add_option("--seed", ver_opts.seed, "override the suite seed");
  ver->add_option("--jobs", ver_opts.jobs, "worker threads (default: cores)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_opts, trace);
    return cmd_verify(ver_opts, suite_name);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
