#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace dudesim::verify {

struct CheckResult {
  int criterion = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace vdetail {
class Timer {
 public:
  Timer() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  os.precision(6);
  (os << ... << args);
  return os.str();
}
}  // namespace vdetail

// 1. Incremental aggregation tracks the brute-force average of the stored
//    worker gradients at every one of 1e4 iterations.
inline CheckResult check_aggregation_identity() {
  vdetail::Timer timer;
  const int n = 8, p = 32;
  const std::int64_t T = 10000;
  auto obj = make_quadratic(n, p, 1.0, 0.5, 21);
  auto speeds = SpeedModel::truncated_normal(n, 1.0, 1.0, 4);
  auto trace = schedule_run(speeds, AsyncMode::fully_async(), T, ScheduleOptions{true, 1.0});
  AggregationRun run(obj, Vec::Zero(p), speeds, 0.01, SamplePolicy::fresh_at_completion, true, 11);
  double worst = 0.0;
  for (const auto& entry : trace) {
    run.step(entry);
    worst = std::max(worst, aggregation_drift(run.server(), run.workers()));
  }
  CheckResult res{1, "aggregation identity", false, "", 0.0};
  const double secs = timer.seconds();
  res.pass = worst <= 1e-9 && secs < 5.0;
  res.detail = vdetail::str("max relative drift ", worst, " (bound 1e-9) over ", T,
                            " iterations in ", secs, " s (bound 5 s)");
  res.seconds = secs;
  return res;
}

// 2. tau_i(t) >= d_i(t) + 1 on randomized schedules; the ledger throws on any
//    violation, so a clean pass means zero violations.
inline CheckResult check_delay_invariant() {
  vdetail::Timer timer;
  CheckResult res{2, "dual-delay invariant", true, "", 0.0};
  const std::int64_t T = 50000;
  std::int64_t runs = 0;
  std::string failure;
  for (int n : {2, 8, 32}) {
    for (double std_dev : {1.0, 5.0}) {
      std::vector<int> cs{1, n / 2, n};
      std::sort(cs.begin(), cs.end());
      cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
      for (int c : cs) {
        if (c < 1) continue;
        auto obj = make_quadratic(n, 4, 0.5, 0.1, 33 + static_cast<std::uint64_t>(n));
        auto speeds = SpeedModel::truncated_normal(n, 1.0, std_dev,
                                                   17 + static_cast<std::uint64_t>(10 * std_dev) +
                                                       static_cast<std::uint64_t>(n));
        AlgoParams params;
        params.kind = AlgorithmKind::dude_asgd;
        params.eta = 1e-4;  // well inside stability even for the largest observed delays
        try {
          run_algorithm(obj, params, speeds, AsyncMode::semi_async(c), T, 5, Vec::Zero(4),
                        /*record_every=*/static_cast<int>(T));
          ++runs;
        } catch (const SimulationError& e) {
          res.pass = false;
          failure = e.what();
        }
      }
    }
  }
  res.detail = res.pass ? vdetail::str("zero violations across ", runs, " randomized runs of T=", T)
                        : vdetail::str("violation: ", failure);
  res.seconds = timer.seconds();
  return res;
}

// 3. Reduction equivalences on shared sample streams: the incremental
//    dual-delay path reproduces synchronous SGD in lockstep, and with
//    receipt-time samples it reproduces the direct full-aggregation route.
inline CheckResult check_reductions() {
  vdetail::Timer timer;
  const int n = 4, p = 8;
  const std::int64_t T = 1000;
  const std::uint64_t seed = 9;
  auto obj = make_quadratic(n, p, 1.0, 0.5, 13);
  auto speeds = SpeedModel::truncated_normal(n, 1.0, 1.0, 8);

  double dev_lockstep = 0.0;
  {
    auto trace = schedule_run(speeds, AsyncMode::lockstep(), T);
    AggregationRun dude(obj, Vec::Zero(p), speeds, 0.05, SamplePolicy::fresh_at_completion, true, seed);
    SyncSgdRun sync(obj, Vec::Zero(p), speeds, 0.05, seed);
    for (const auto& entry : trace) {
      dude.step(entry);
      sync.step(entry);
      dev_lockstep = std::max(dev_lockstep, (dude.server().w_tilde.values -
                                             sync.server().w_tilde.values).cwiseAbs().maxCoeff());
    }
  }

  double dev_siag = 0.0;
  {
    auto trace = schedule_run(speeds, AsyncMode::semi_async(2), T, ScheduleOptions{true, 1.0});
    AggregationRun dude(obj, Vec::Zero(p), speeds, 0.02, SamplePolicy::at_model_receipt, true, seed);
    AggregationRun siag(obj, Vec::Zero(p), speeds, 0.02, SamplePolicy::at_model_receipt, false, seed);
    for (const auto& entry : trace) {
      dude.step(entry);
      siag.step(entry);
      dev_siag = std::max(dev_siag, (dude.server().w_tilde.values -
                                     siag.server().w_tilde.values).cwiseAbs().maxCoeff());
    }
  }

  CheckResult res{3, "reduction equivalences", false, "", 0.0};
  res.pass = dev_lockstep <= 1e-12 && dev_siag <= 1e-12;
  res.detail = vdetail::str("lockstep vs sync max dev ", dev_lockstep,
                            "; semi-async(tau=d+1) vs direct full aggregation max dev ", dev_siag,
                            " (bound 1e-12, T=", T, ")");
  res.seconds = timer.seconds();
  return res;
}

// 4. With sigma=0, ten-to-one speeds and heterogeneous workers, the
//    single-gradient update settles at the contribution-weighted fixed point
//    (strictly non-stationary for F) while full aggregation drives
//    ||grad F||^2 to zero.
inline CheckResult check_bias_separation() {
  vdetail::Timer timer;
  const int p = 2;
  Mat A1(p, p), A2(p, p);
  A1 << 2.0, 0.3, 0.3, 0.8;
  A2 << 0.6, -0.2, -0.2, 1.5;
  Vec b1(p), b2(p);
  b1 << 1.0, -0.5;
  b2 << -1.2, 0.9;
  QuadraticObjective obj({A1, A2}, {b1, b2}, /*sigma=*/0.0);
  auto speeds = SpeedModel::from_speeds({1.0, 10.0});

  AlgoParams vanilla;
  vanilla.kind = AlgorithmKind::vanilla_asgd;
  vanilla.eta = 0.01;
  const std::int64_t T_vanilla = 20000;
  auto res_vanilla = run_algorithm(obj, vanilla, speeds, AsyncMode::fully_async(), T_vanilla, 1,
                                   Vec::Zero(p), static_cast<int>(T_vanilla));

  // empirical contribution frequencies from the same schedule
  auto trace = schedule_run(speeds, AsyncMode::fully_async(), T_vanilla);
  Eigen::Vector2d counts(0.0, 0.0);
  for (const auto& e : trace) counts[e.contributors.front().worker] += 1.0;
  const Eigen::Vector2d freq = counts / counts.sum();
  const Mat A_w = freq[0] * A1 + freq[1] * A2;
  const Vec b_w = freq[0] * b1 + freq[1] * b2;
  const Vec w_weighted = A_w.fullPivLu().solve(b_w);
  const double predicted_gap = obj.gradient(w_weighted).squaredNorm();
  const double vanilla_grad_sq = res_vanilla.final_grad_norm_sq;

  AlgoParams dude;
  dude.kind = AlgorithmKind::dude_asgd;
  dude.eta = 0.002;
  const std::int64_t T_dude = 100000;
  auto res_dude = run_algorithm(obj, dude, speeds, AsyncMode::fully_async(), T_dude, 1, Vec::Zero(p),
                                static_cast<int>(T_dude));

  CheckResult res{4, "heterogeneity bias separation", false, "", 0.0};
  const double secs = timer.seconds();
  res.pass = predicted_gap > 1e-6 && vanilla_grad_sq >= 0.5 * predicted_gap &&
             res_dude.final_grad_norm_sq <= 1e-10 && secs < 10.0;
  res.detail = vdetail::str("vanilla ||gradF||^2 ", vanilla_grad_sq, " vs weighted fixed-point gap ",
                            predicted_gap, " (need >= 0.5x); dual-delay ||gradF||^2 ",
                            res_dude.final_grad_norm_sq, " (bound 1e-10); ", secs, " s (bound 10 s)");
  res.seconds = secs;
  return res;
}

// 5. The averaged gradient noise has second moment sigma^2 / n; the Monte
//    Carlo estimate must land within 3% of it.
inline CheckResult check_lemma_variance() {
  vdetail::Timer timer;
  const int n = 8, p = 32, M = 100000;
  auto obj = make_quadratic(n, p, 1.0, 0.5, 15);

  // frozen per-worker delayed models from a short run
  AlgoParams params;
  params.kind = AlgorithmKind::dude_asgd;
  params.eta = 0.01;
  auto speeds = SpeedModel::truncated_normal(n, 1.0, 1.0, 6);
  AggregationRun run(obj, Vec::Zero(p), speeds, 0.01, SamplePolicy::fresh_at_completion, true, 3);
  auto trace = schedule_run(speeds, AsyncMode::fully_async(), 200, ScheduleOptions{true, 1.0});
  for (const auto& entry : trace) run.step(entry);
  std::vector<Vec> frozen;
  for (const auto& w : run.workers()) frozen.push_back(w.in_flight_model.values);

  const auto check = lemma_variance_check(obj, frozen, M, 77);
  CheckResult res{5, "averaged-noise variance bound", false, "", 0.0};
  const double lo = 0.97 * check.bound, hi = 1.03 * check.bound;
  res.pass = check.pass && check.estimate >= lo && check.estimate <= hi;
  res.detail = vdetail::str("estimate ", check.estimate, " vs sigma^2/n = ", check.bound,
                            ", required within [0.97, 1.03] of it, M=", M);
  res.seconds = timer.seconds();
  return res;
}

// 6. Average squared gradient norm under the prescribed stepsize scales as
//    T^(-1/2): log-log slope within [-0.65, -0.35] across T = 2^10..2^16.
inline CheckResult check_rate_exponent() {
  vdetail::Timer timer;
  const int n = 8, p = 16;
  const double sigma = 0.5;
  // unit curvature with heterogeneous linear terms: strongly convex, zeta > 0,
  // and L = mu = 1 so the grid's smallest T already sits past the transient
  std::vector<Mat> A(n, Mat::Identity(p, p));
  std::vector<Vec> b;
  RngStream b_rng = RngStream::keyed(2024, 0xb0);
  for (int i = 0; i < n; ++i) {
    Vec bi(p);
    for (Eigen::Index k = 0; k < p; ++k) bi[k] = b_rng.normal();
    b.push_back(std::move(bi));
  }
  QuadraticObjective obj(std::move(A), std::move(b), sigma);
  auto speeds = SpeedModel::from_speeds(std::vector<double>(n, 1.0));

  // start a fixed suboptimality away from the minimizer
  const double Delta = 2.5;
  Vec dir(p);
  RngStream dir_rng = RngStream::keyed(2024, 0xd12);
  for (Eigen::Index k = 0; k < p; ++k) dir[k] = dir_rng.normal();
  const double curve = 0.5 * dir.dot(obj.A_bar() * dir);
  Vec w0 = obj.minimizer() + dir * std::sqrt(Delta / curve);

  std::vector<std::pair<std::int64_t, double>> points;
  std::string etas;
  for (std::int64_t T : {std::int64_t{1} << 10, std::int64_t{1} << 12, std::int64_t{1} << 14,
                         std::int64_t{1} << 16}) {
    const auto schedule = schedule_run(speeds, AsyncMode::fully_async(), T, ScheduleOptions{true, 1.0});
    const auto delays = observed_delays(schedule, n);
    const double eta =
        theorem1_stepsize(n, Delta, obj.smoothness(), sigma, delays.tau_max, T);
    std::vector<std::vector<RunRecord>> runs;
    for (std::uint64_t seed : {1, 2, 3}) {
      AlgoParams params;
      params.kind = AlgorithmKind::dude_asgd;
      params.eta = eta;
      runs.push_back(run_algorithm(obj, params, speeds, AsyncMode::fully_async(), T, seed, w0).records);
    }
    points.emplace_back(T, avg_grad_norm_sq(runs, T, /*burn_in_frac=*/0.1));
    etas += vdetail::str(" eta(", T, ")=", eta);
  }
  const auto fit = rate_fit(points);
  CheckResult res{6, "rate exponent", false, "", 0.0};
  const double secs = timer.seconds();
  res.pass = fit.slope >= -0.65 && fit.slope <= -0.35 && secs < 180.0;
  res.detail = vdetail::str("log-log slope ", fit.slope, " (band [-0.65, -0.35]), r^2 ",
                            fit.r_squared, ",", etas, ", ", secs, " s (bound 180 s)");
  res.seconds = secs;
  return res;
}

// 7. Noise-floor ratio between n=4 and n=16 at matched tau_max and matched
//    stepsize tracks the 1/n scaling of the leading variance term.
inline CheckResult check_speedup() {
  vdetail::Timer timer;
  const std::int64_t T = std::int64_t{1} << 15;
  const double eta = 0.02, sigma = 0.5;
  std::int64_t tau4 = 0, tau16 = 0;
  auto value_for = [&](int n, AsyncMode mode, std::int64_t* tau_out) {
    auto obj = make_quadratic(n, 8, /*hetero=*/0.0, sigma, 19);
    auto speeds = SpeedModel::from_speeds(std::vector<double>(static_cast<std::size_t>(n), 1.0));
    std::vector<std::vector<RunRecord>> runs;
    for (std::uint64_t seed : {1, 2, 3}) {
      AlgoParams params;
      params.kind = AlgorithmKind::dude_asgd;
      params.eta = eta;
      auto res = run_algorithm(obj, params, speeds, mode, T, seed, obj.minimizer());
      *tau_out = res.tau_max_observed;
      runs.push_back(std::move(res.records));
    }
    return avg_grad_norm_sq(runs, T);
  };
  // equal speeds: fully async with n=4 and semi-async c=4 with n=16 share the
  // same per-worker delay cycle, so tau_max matches across the two runs
  const double v4 = value_for(4, AsyncMode::fully_async(), &tau4);
  const double v16 = value_for(16, AsyncMode::semi_async(4), &tau16);
  const double ratio = v4 / v16;
  CheckResult res{7, "linear speedup structure", false, "", 0.0};
  res.pass = ratio >= 3.0 && ratio <= 5.0 && tau4 == tau16;
  res.detail = vdetail::str("avg grad-norm^2 ratio n=4 vs n=16: ", ratio,
                            " (band [3, 5]), matched tau_max ", tau4, "/", tau16, ", T=", T);
  res.seconds = timer.seconds();
  return res;
}

// 8. Semi-asynchronous batching divides the maximum model delay: observed
//    tau_max^(c) within +-1 of tau_max / c for equal speeds.
inline CheckResult check_semi_async_delays() {
  vdetail::Timer timer;
  const int n = 8;
  const std::int64_t T = 1000;
  auto speeds = SpeedModel::from_speeds(std::vector<double>(n, 1.0));
  const auto full = observed_delays(
      schedule_run(speeds, AsyncMode::fully_async(), T, ScheduleOptions{true, 1.0}), n);
  CheckResult res{8, "semi-async delay relation", true, "", 0.0};
  std::string detail = vdetail::str("tau_max fully async ", full.tau_max, ";");
  for (int c : {2, 4, n}) {
    const auto batched = observed_delays(
        schedule_run(speeds, AsyncMode::semi_async(c), T, ScheduleOptions{true, 1.0}), n);
    const double predicted = static_cast<double>(full.tau_max) / c;
    const bool ok = std::abs(static_cast<double>(batched.tau_max) - predicted) <= 1.0;
    res.pass = res.pass && ok;
    detail += vdetail::str(" c=", c, ": observed ", batched.tau_max, " vs ", predicted,
                           ok ? " ok;" : " VIOLATION;");
  }
  res.detail = detail;
  res.seconds = timer.seconds();
  return res;
}

// 9. Unbiasedness and the variance constant at 5-sigma Monte Carlo bands.
inline CheckResult check_unbiasedness_variance() {
  vdetail::Timer timer;
  const int M = 100000;
  auto obj = make_quadratic(2, 8, 1.0, 0.7, 23);
  Vec w = Vec::Constant(8, 0.3);

  const auto ub = unbiasedness_check(obj, w, 0, M, 51);

  // E||noise||^2 for a single draw
  RngStream rng = RngStream::keyed(52, 0x00e5);
  const Vec mean = obj.worker_gradient(1, w);
  double acc = 0.0;
  for (int m = 0; m < M; ++m) acc += (obj.stochastic_gradient(1, w, rng) - mean).squaredNorm();
  const double var_est = acc / M;
  const double sigma_sq = obj.noise_scale() * obj.noise_scale();
  const bool var_ok = var_est >= 0.97 * sigma_sq && var_est <= 1.03 * sigma_sq;

  // mini-batch logistic unbiasedness, band from the estimated noise scale
  auto lobj = make_logistic(4, 6, 2000, 5.0, 1e-3, 8, 61);
  RngStream lrng = RngStream::keyed(53, 0x10e5);
  const Vec lmean = lobj.worker_gradient(2, w.head(6));
  Vec lsum = Vec::Zero(6);
  double lvar = 0.0;
  const int LM = 20000;
  for (int m = 0; m < LM; ++m) {
    const Vec g = lobj.stochastic_gradient(2, w.head(6), lrng);
    lsum += g;
    lvar += (g - lmean).squaredNorm();
  }
  const double ldev = (lsum / LM - lmean).norm();
  const double lband = 5.0 * std::sqrt(lvar / LM) / std::sqrt(static_cast<double>(LM));
  const bool logistic_ok = ldev <= lband;

  CheckResult res{9, "unbiasedness and variance constants", false, "", 0.0};
  res.pass = ub.pass && var_ok && logistic_ok;
  res.detail = vdetail::str("gaussian mean deviation ", ub.deviation, " (band ", ub.band,
                            "); E||noise||^2 ", var_est, " vs sigma^2 ", sigma_sq,
                            " in [0.97, 1.03]x: ", var_ok ? "yes" : "NO",
                            "; logistic mini-batch deviation ", ldev, " (band ", lband, ")");
  res.seconds = timer.seconds();
  return res;
}

// 10. Byte-identical outputs for identical configs.
inline CheckResult check_determinism() {
  vdetail::Timer timer;
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "dudesim_determinism";
  fs::remove_all(base);

  auto read_all = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };

  bool pass = true;
  std::string detail;
  for (const char* kind : {"dude_asgd", "uniform_asgd"}) {
    RunConfig cfg;
    cfg.objective.kind = "quadratic";
    cfg.objective.workers = 4;
    cfg.objective.dim = 8;
    cfg.objective.sigma = 0.5;
    cfg.algorithm.kind = *algorithm_from_string(kind);
    cfg.stepsize.mode = "explicit";
    cfg.stepsize.value = 0.01;
    cfg.T = 500;
    cfg.seeds = {1, 2};
    cfg.output_format = "both";
    cfg.output_dir = (base / kind).string();
    // identical config executed twice into the same location
    std::vector<std::vector<std::string>> contents(2);
    for (int pass_idx = 0; pass_idx < 2; ++pass_idx) {
      const auto report = execute_run(cfg);
      for (const auto& art : report.runs)
        for (const auto& f : art.files) contents[static_cast<std::size_t>(pass_idx)].push_back(read_all(f));
    }
    const bool same = contents[0] == contents[1] && !contents[0].empty();
    pass = pass && same;
    detail += vdetail::str(kind, ": ", contents[0].size(), " files ",
                           same ? "byte-identical; " : "DIFFER; ");
  }
  fs::remove_all(base);
  CheckResult res{10, "determinism", pass, detail, timer.seconds()};
  return res;
}

// 11. Dirichlet partitioner: concentration at alpha=1000 and agreement with
//     the recorded draws at alpha=0.1.
inline CheckResult check_dirichlet_partition() {
  vdetail::Timer timer;
  const int K = 10, n = 10;
  bool pass = true;
  std::string detail;

  {
    // 1e4 class-k instances per class puts the stated 10% band at ~3 binomial
    // sigmas per cell
    const int m = 100000;
    std::vector<int> labels(m);
    RngStream rng = RngStream::keyed(71, 0x1ab5);
    for (auto& lab : labels) lab = static_cast<int>(rng.uniform_int(K));
    const auto part = dirichlet_partition(labels, n, 1000.0, 9);
    double worst = 0.0;
    for (int k = 0; k < K; ++k) {
      std::int64_t class_total = 0;
      for (int i = 0; i < n; ++i) class_total += part.counts[k][i];
      for (int i = 0; i < n; ++i) {
        const double share = static_cast<double>(part.counts[k][i]) / class_total;
        worst = std::max(worst, std::abs(share - 1.0 / n) / (1.0 / n));
      }
    }
    pass = pass && worst <= 0.10;
    detail += vdetail::str("alpha=1000: worst per-class share deviation ", 100.0 * worst,
                           "% (bound 10%); ");
  }

  {
    const int m = 10000;
    std::vector<int> labels(m);
    RngStream rng = RngStream::keyed(72, 0x1ab5);
    for (auto& lab : labels) lab = static_cast<int>(rng.uniform_int(K));
    const auto part = dirichlet_partition(labels, n, 0.1, 6);
    std::int64_t class_totals[10] = {0};
    for (int lab : labels) ++class_totals[lab];
    double worst_z = 0.0;
    for (int k = 0; k < K; ++k) {
      const double mk = static_cast<double>(class_totals[k]);
      for (int i = 0; i < n; ++i) {
        const double p = part.p[k][i];
        const double sd = std::sqrt(std::max(mk * p * (1.0 - p), 1.0));
        worst_z = std::max(worst_z, std::abs(static_cast<double>(part.counts[k][i]) - mk * p) / sd);
      }
    }
    pass = pass && worst_z <= 4.0;
    detail += vdetail::str("alpha=0.1: worst |count - m_k p| z-score ", worst_z, " (bound 4)");
  }

  CheckResult res{11, "dirichlet partitioner", pass, detail, timer.seconds()};
  return res;
}

inline std::vector<CheckResult> run_all() {
  return {check_aggregation_identity(), check_delay_invariant(),  check_reductions(),
          check_bias_separation(),      check_lemma_variance(),   check_rate_exponent(),
          check_speedup(),              check_semi_async_delays(), check_unbiasedness_variance(),
          check_determinism(),          check_dirichlet_partition()};
}

// Named suites for the verify subcommand.
inline std::vector<CheckResult> run_suite(const std::string& suite) {
  if (suite == "invariants")
    return {check_aggregation_identity(), check_delay_invariant(), check_determinism(),
            check_dirichlet_partition()};
  if (suite == "reductions") return {check_reductions()};
  if (suite == "bias") return {check_bias_separation()};
  if (suite == "rate") return {check_rate_exponent(), check_speedup(), check_semi_async_delays()};
  if (suite == "lemma") return {check_lemma_variance(), check_unbiasedness_variance()};
  if (suite == "all") return run_all();
  detail::fail("unknown verify suite '", suite,
               "'; expected invariants|reductions|bias|rate|lemma|all");
}

inline std::string report_json(const std::vector<CheckResult>& results) {
  json j;
  j["suite_pass"] = true;
  j["checks"] = json::array();
  for (const auto& r : results) {
    json c;
    c["criterion"] = r.criterion;
    c["name"] = r.name;
    c["pass"] = r.pass;
    c["detail"] = r.detail;
    c["seconds"] = r.seconds;
    j["checks"].push_back(c);
    if (!r.pass) j["suite_pass"] = false;
  }
  return j.dump(2);
}

}  // namespace dudesim::verify
