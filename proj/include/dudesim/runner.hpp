#pragma once

#include <cstdint>
#include <vector>

#include "algorithms.hpp"
#include "metrics.hpp"
#include "objectives.hpp"
#include "simclock.hpp"

namespace dudesim {

struct AlgoParams {
  AlgorithmKind kind = AlgorithmKind::dude_asgd;
  double eta = 0.01;  // server stepsize; global stepsize for fedbuff
  SamplePolicy sample_policy = SamplePolicy::fresh_at_completion;
  int fedbuff_local_steps = 1;
  int fedbuff_buffer = 1;
  double fedbuff_eta_local = 0.01;
  int shuffle_period = 0;  // 0 -> number of workers
  bool paranoid_checks = false;
};

struct RunResult {
  std::vector<RunRecord> records;
  Vec final_w;
  double final_loss = 0.0;
  double final_grad_norm_sq = 0.0;
  std::int64_t T = 0;
  double virtual_time = 0.0;
  std::int64_t tau_max_observed = 0;       // slot delays, max over workers and iterations
  std::int64_t contribution_tau_max = 0;   // max model delay at contribution instants
  double tau_avg = 0.0;                    // slot delays averaged over t = 1..T-1
  int max_queue_depth = 0;
  std::vector<std::int64_t> contribution_counts;  // per worker, participation is emergent
};

namespace detail {

inline std::vector<TraceEntry> build_trace(AlgorithmKind kind, const AlgoParams& params,
                                           const SpeedModel& speeds, AsyncMode mode, std::int64_t T,
                                           std::uint64_t run_seed) {
  switch (kind) {
    case AlgorithmKind::dude_asgd:
    case AlgorithmKind::siag_mifa:
      return schedule_run(speeds, mode, T, ScheduleOptions{/*initial_barrier=*/true, 1.0});
    case AlgorithmKind::sync_sgd:
      return schedule_run(speeds, AsyncMode::lockstep(), T);
    case AlgorithmKind::vanilla_asgd:
      DUDESIM_REQUIRE(mode.kind == SyncKind::fully_async, "vanilla_asgd runs fully asynchronously");
      return schedule_run(speeds, AsyncMode::fully_async(), T);
    case AlgorithmKind::uniform_asgd:
      DUDESIM_REQUIRE(mode.kind == SyncKind::fully_async, "uniform_asgd runs fully asynchronously");
      return uniform_schedule(speeds, T, run_seed);
    case AlgorithmKind::shuffled_asgd: {
      DUDESIM_REQUIRE(mode.kind == SyncKind::fully_async, "shuffled_asgd runs fully asynchronously");
      return shuffled_schedule(speeds, T, run_seed, params.shuffle_period);
    }
    case AlgorithmKind::fedbuff:
      return schedule_run(speeds, AsyncMode::semi_async(params.fedbuff_buffer), T,
                          ScheduleOptions{false, static_cast<double>(params.fedbuff_local_steps)});
  }
  detail::fail("build_trace: unknown algorithm kind");
}

template <typename Runner>
RunResult drive(Runner& runner, const Objective& obj, const std::vector<TraceEntry>& trace,
                int record_every) {
  RunResult res;
  res.records.reserve(trace.size() / static_cast<std::size_t>(record_every) + 1);
  res.contribution_counts.assign(static_cast<std::size_t>(obj.workers()), 0);
  for (const auto& entry : trace) {
    for (const auto& cb : entry.contributors) {
      res.contribution_tau_max = std::max(res.contribution_tau_max, entry.t - cb.model_version);
      ++res.contribution_counts[static_cast<std::size_t>(cb.worker)];
    }
    const double grad_prev_sq = obj.gradient(runner.server().w_tilde.values).squaredNorm();
    runner.step(entry);
    const auto& server = runner.server();
    if (entry.t % record_every == 0 || entry.t == trace.back().t) {
      RunRecord rec;
      rec.t = entry.t;
      rec.virtual_time = entry.time;
      rec.loss = obj.loss(server.w_tilde.values);
      rec.grad_norm_sq = grad_prev_sq;
      for (const auto& cb : entry.contributors) rec.contributors.push_back(cb.worker);
      rec.tau = server.ledger.tau_all();
      rec.d = server.ledger.d_all();
      rec.max_queue_depth = entry.max_queue_depth;
      res.records.push_back(std::move(rec));
    }
    if (entry.t <= trace.back().t - 1) {
      for (int i = 0; i < obj.workers(); ++i) res.tau_avg += static_cast<double>(server.ledger.tau(i));
    }
  }
  const auto& server = runner.server();
  res.final_w = server.w_tilde.values;
  res.final_loss = obj.loss(res.final_w);
  res.final_grad_norm_sq = obj.gradient(res.final_w).squaredNorm();
  res.T = trace.back().t;
  res.virtual_time = trace.back().time;
  res.tau_max_observed = server.ledger.tau_max_observed();
  const std::int64_t terms = (res.T - 1) * obj.workers();
  res.tau_avg = terms > 0 ? res.tau_avg / static_cast<double>(terms) : 0.0;
  return res;
}

}  // namespace detail

// Runs one algorithm for T server iterations under the fixed-speed schedule.
// All randomness (speeds aside) derives from run_seed.
inline RunResult run_algorithm(const Objective& obj, const AlgoParams& params,
                               const SpeedModel& speeds, AsyncMode mode, std::int64_t T,
                               std::uint64_t run_seed, const Vec& w0, int record_every = 1) {
  DUDESIM_REQUIRE(record_every >= 1, "run_algorithm: record_every must be >= 1");
  const auto trace = detail::build_trace(params.kind, params, speeds, mode, T, run_seed);
  switch (params.kind) {
    case AlgorithmKind::dude_asgd: {
      AggregationRun r(obj, w0, speeds, params.eta, params.sample_policy, /*incremental=*/true,
                       run_seed, params.paranoid_checks);
      return detail::drive(r, obj, trace, record_every);
    }
    case AlgorithmKind::siag_mifa: {
      AggregationRun r(obj, w0, speeds, params.eta, SamplePolicy::at_model_receipt,
                       /*incremental=*/false, run_seed, params.paranoid_checks);
      return detail::drive(r, obj, trace, record_every);
    }
    case AlgorithmKind::sync_sgd: {
      SyncSgdRun r(obj, w0, speeds, params.eta, run_seed);
      return detail::drive(r, obj, trace, record_every);
    }
    case AlgorithmKind::vanilla_asgd:
    case AlgorithmKind::uniform_asgd:
    case AlgorithmKind::shuffled_asgd: {
      SingleDispatchRun r(obj, w0, speeds, params.eta, run_seed);
      auto res = detail::drive(r, obj, trace, record_every);
      res.max_queue_depth = r.max_queue_depth();
      for (const auto& entry : trace)
        res.max_queue_depth = std::max(res.max_queue_depth, entry.max_queue_depth);
      return res;
    }
    case AlgorithmKind::fedbuff: {
      FedBuffRun r(obj, w0, speeds, params.eta, params.fedbuff_eta_local,
                   params.fedbuff_local_steps, run_seed);
      return detail::drive(r, obj, trace, record_every);
    }
  }
  detail::fail("run_algorithm: unknown algorithm kind");
}

}  // namespace dudesim
