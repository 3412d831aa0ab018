#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "metrics.hpp"
#include "runner.hpp"

namespace dudesim {

namespace detail {
inline std::string format_eta(double eta) {
  std::ostringstream os;
  os << std::setprecision(6) << eta;
  return os.str();
}

inline std::string output_header_json(const RunConfig& cfg, AlgorithmKind kind, double eta,
                                      std::uint64_t seed) {
  json h;
  h["schema_version"] = cfg.schema_version;
  std::ostringstream hash;
  hash << "0x" << std::hex << config_hash(cfg);
  h["config_hash"] = hash.str();
  h["algorithm"] = to_string(kind);
  h["eta"] = eta;
  h["seed"] = seed;
  h["config"] = to_json(cfg);
  return h.dump();
}

template <typename Fn>
void parallel_over(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t next = 0;
  std::mutex mu;
  const int threads = std::min<int>(jobs, static_cast<int>(count));
  for (int k = 0; k < threads; ++k) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= count) return;
          i = next++;
        }
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}
}  // namespace detail

// Resolves the stepsize(s) a config asks for. theorem1 measures tau_max on
// the exact schedule the run will use and plugs the observed value into the
// stepsize formula.
inline std::vector<double> resolve_stepsizes(const RunConfig& cfg, const Objective& obj,
                                             const SpeedModel& speeds, AsyncMode mode,
                                             std::uint64_t run_seed, const Vec& w0,
                                             std::string* note = nullptr) {
  if (cfg.stepsize.mode == "explicit") return {cfg.stepsize.value};
  if (cfg.stepsize.mode == "grid") return cfg.stepsize.values;

  AlgoParams params = build_algo_params(cfg, 1.0);
  const auto trace = detail::build_trace(params.kind, params, speeds, mode, cfg.T, run_seed);
  const auto delays = observed_delays(trace, obj.workers());
  double Delta;
  if (const auto* q = dynamic_cast<const QuadraticObjective*>(&obj)) {
    Delta = q->loss(w0) - q->optimal_loss();
  } else {
    // logistic loss is bounded below by zero
    Delta = obj.loss(w0);
  }
  DUDESIM_REQUIRE(Delta > 0.0, "theorem1 stepsize: F(w0) - F* must be positive, got ", Delta);
  bool transient_ok = false;
  const double eta = theorem1_stepsize(obj.workers(), Delta, obj.smoothness(), obj.noise_scale(),
                                       delays.tau_max, cfg.T, &transient_ok);
  if (note) {
    std::ostringstream os;
    os << "theorem1 stepsize: eta=" << eta << " (Delta=" << Delta << ", L=" << obj.smoothness()
       << ", sigma=" << obj.noise_scale() << ", tau_max=" << delays.tau_max << ", T=" << cfg.T << ")";
    if (!transient_ok)
      os << "; warning: T below the transient threshold "
         << theorem1_T_lower_bound(obj.workers(), Delta, obj.smoothness(), obj.noise_scale(),
                                   delays.tau_max);
    *note = os.str();
  }
  return {eta};
}

struct RunArtifact {
  AlgorithmKind algorithm;
  double eta = 0.0;
  std::uint64_t seed = 0;
  RunResult result;
  std::vector<std::string> files;
};

struct ExperimentReport {
  std::vector<RunArtifact> runs;
  std::vector<std::string> notes;
  double wall_seconds = 0.0;
};

// Executes every (stepsize, seed) combination of a run config, writing one
// output file per combination and format. Runs are independent and may be
// executed concurrently (bounded by cfg.jobs); outputs are written in a
// deterministic order regardless.
inline ExperimentReport execute_run(const RunConfig& cfg, bool write_files = true) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport report;
  const auto obj = build_objective(cfg.objective);
  const SpeedModel speeds = build_speeds(cfg.speeds, cfg.objective.workers);
  const AsyncMode mode = build_mode(cfg.mode);
  const Vec w0 = build_w0(cfg.w0, cfg.objective.dim);

  struct Job {
    double eta;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    std::string note;
    const auto etas = resolve_stepsizes(cfg, *obj, speeds, mode, seed, w0,
                                        jobs.empty() ? &note : nullptr);
    if (!note.empty()) report.notes.push_back(note);
    for (double eta : etas) jobs.push_back(Job{eta, seed});
  }

  std::vector<RunArtifact> artifacts(jobs.size());
  detail::parallel_over(jobs.size(), cfg.jobs, [&](std::size_t k) {
    const auto& job = jobs[k];
    AlgoParams params = build_algo_params(cfg, job.eta);
    RunArtifact art;
    art.algorithm = cfg.algorithm.kind;
    art.eta = job.eta;
    art.seed = job.seed;
    art.result = run_algorithm(*obj, params, speeds, mode, cfg.T, job.seed, w0, cfg.record_every);
    artifacts[k] = std::move(art);
  });

  if (write_files) {
    std::filesystem::create_directories(cfg.output_dir);
    for (auto& art : artifacts) {
      const std::string stem = std::string(to_string(art.algorithm)) + "_eta" +
                               detail::format_eta(art.eta) + "_seed" + std::to_string(art.seed);
      const std::string header = detail::output_header_json(cfg, art.algorithm, art.eta, art.seed);
      if (cfg.output_format == "jsonl" || cfg.output_format == "both") {
        const auto path = std::filesystem::path(cfg.output_dir) / (stem + ".jsonl");
        std::ofstream os(path);
        DUDESIM_REQUIRE(os.good(), "cannot open output file ", path.string());
        write_records_jsonl(os, art.result.records, header);
        art.files.push_back(path.string());
      }
      if (cfg.output_format == "csv" || cfg.output_format == "both") {
        const auto path = std::filesystem::path(cfg.output_dir) / (stem + ".csv");
        std::ofstream os(path);
        DUDESIM_REQUIRE(os.good(), "cannot open output file ", path.string());
        write_records_csv(os, art.result.records, header);
        art.files.push_back(path.string());
      }
    }
  }
  report.runs = std::move(artifacts);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline void print_run_summary(const ExperimentReport& report, const RunConfig& cfg, std::ostream& os) {
  os << std::setprecision(6);
  for (const auto& note : report.notes) os << "note: " << note << "\n";
  os << "algorithm        eta        seed  final_loss     avg||gradF||^2  tau_max  time\n";
  for (const auto& art : report.runs) {
    const double avg = avg_grad_norm_sq({art.result.records}, art.result.T);
    os << std::left << std::setw(16) << to_string(art.algorithm) << " " << std::setw(10) << art.eta
       << " " << std::setw(5) << art.seed << " " << std::setw(14) << art.result.final_loss << " "
       << std::setw(15) << avg << " " << std::setw(8) << art.result.tau_max_observed << " "
       << art.result.virtual_time << "\n";
  }
  if (!report.runs.empty() && report.runs.front().result.contribution_counts.size() <= 16) {
    os << "contributions per worker:";
    for (auto c : report.runs.front().result.contribution_counts) os << " " << c;
    os << "\n";
  }
  os << "grid mode: " << (cfg.stepsize.mode == "grid" ? "pick the stepsize with the fastest convergence"
                                                      : "n/a")
     << "; wall " << report.wall_seconds << " s\n";
}

// Runs several algorithms against the same objective, speed draw and sample
// streams, then samples each trajectory on a common virtual-time grid.
struct ComparisonSeries {
  AlgorithmKind algorithm;
  double eta = 0.0;
  RunResult result;
};

struct ComparisonTable {
  std::vector<double> time_grid;
  std::vector<ComparisonSeries> series;
};

inline ComparisonTable execute_compare(const RunConfig& base, const std::vector<AlgorithmKind>& kinds,
                                       int grid_points = 64) {
  DUDESIM_REQUIRE(!kinds.empty(), "execute_compare: no algorithms given");
  ComparisonTable table;
  const auto obj = build_objective(base.objective);
  const SpeedModel speeds = build_speeds(base.speeds, base.objective.workers);
  const Vec w0 = build_w0(base.w0, base.objective.dim);
  const std::uint64_t seed = base.seeds.front();

  double min_final_time = std::numeric_limits<double>::infinity();
  for (AlgorithmKind kind : kinds) {
    RunConfig cfg = base;
    cfg.algorithm.kind = kind;
    const AsyncMode mode = build_mode(cfg.mode);
    const auto etas = resolve_stepsizes(cfg, *obj, speeds, mode, seed, w0);
    ComparisonSeries s;
    s.algorithm = kind;
    s.eta = etas.front();
    AlgoParams params = build_algo_params(cfg, s.eta);
    s.result = run_algorithm(*obj, params, speeds, mode, cfg.T, seed, w0, cfg.record_every);
    min_final_time = std::min(min_final_time, s.result.virtual_time);
    table.series.push_back(std::move(s));
  }
  for (int k = 1; k <= grid_points; ++k)
    table.time_grid.push_back(min_final_time * static_cast<double>(k) / grid_points);
  return table;
}

inline void write_comparison_csv(std::ostream& os, const ComparisonTable& table) {
  os << std::setprecision(17);
  os << "time";
  for (const auto& s : table.series)
    os << "," << to_string(s.algorithm) << "_loss," << to_string(s.algorithm) << "_grad_norm_sq";
  os << "\n";
  std::vector<std::size_t> cursor(table.series.size(), 0);
  for (double tp : table.time_grid) {
    os << tp;
    for (std::size_t si = 0; si < table.series.size(); ++si) {
      const auto& recs = table.series[si].result.records;
      auto& cur = cursor[si];
      while (cur + 1 < recs.size() && recs[cur + 1].virtual_time <= tp) ++cur;
      os << "," << recs[cur].loss << "," << recs[cur].grad_norm_sq;
    }
    os << "\n";
  }
}

}  // namespace dudesim
