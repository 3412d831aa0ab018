#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "objectives.hpp"
#include "simclock.hpp"

namespace dudesim {

enum class AlgorithmKind {
  dude_asgd,
  vanilla_asgd,
  uniform_asgd,
  shuffled_asgd,
  sync_sgd,
  siag_mifa,
  fedbuff,
};

inline const char* to_string(AlgorithmKind k) {
  switch (k) {
    case AlgorithmKind::dude_asgd: return "dude_asgd";
    case AlgorithmKind::vanilla_asgd: return "vanilla_asgd";
    case AlgorithmKind::uniform_asgd: return "uniform_asgd";
    case AlgorithmKind::shuffled_asgd: return "shuffled_asgd";
    case AlgorithmKind::sync_sgd: return "sync_sgd";
    case AlgorithmKind::siag_mifa: return "siag_mifa";
    case AlgorithmKind::fedbuff: return "fedbuff";
  }
  return "?";
}

inline std::optional<AlgorithmKind> algorithm_from_string(const std::string& s) {
  for (auto k : {AlgorithmKind::dude_asgd, AlgorithmKind::vanilla_asgd, AlgorithmKind::uniform_asgd,
                 AlgorithmKind::shuffled_asgd, AlgorithmKind::sync_sgd, AlgorithmKind::siag_mifa,
                 AlgorithmKind::fedbuff}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// When a contributed gradient's data sample is drawn: fresh at completion
// (epoch = contribution iteration, the dual-delay discipline) or pegged to
// the moment the model was received (epoch = model version + 1, which
// synchronizes the two delays to tau = d + 1).
enum class SamplePolicy { fresh_at_completion, at_model_receipt };

// One server iteration's outcome, common to all algorithms.
struct StepOutcome {
  std::int64_t t = 0;
  double time = 0.0;
  std::vector<int> contributors;
  double update_norm = 0.0;  // norm of the applied direction g^t
  double delta_norm = 0.0;   // norm of the aggregate buffer change (aggregation algorithms)
};

namespace detail {
inline void receive_model(WorkerState& w, ModelVector model, double now) {
  if (w.busy) {
    w.model_queue.push_back(std::move(model));
  } else {
    w.in_flight_model = std::move(model);
    w.busy = true;
    w.busy_until = now + w.speed;
  }
}

// Worker finished its in-flight model: hand it out and immediately start the
// next queued one, mirroring the event engine's completion rule.
inline ModelVector complete_model(WorkerState& w, double now) {
  ModelVector used = std::move(w.in_flight_model);
  if (!w.model_queue.empty()) {
    w.in_flight_model = std::move(w.model_queue.front());
    w.model_queue.pop_front();
    w.busy_until = now + w.speed;
  } else {
    w.busy = false;
  }
  return used;
}

inline std::vector<WorkerState> make_workers(const SpeedModel& speeds, Eigen::Index p, const Vec& w0) {
  std::vector<WorkerState> workers;
  workers.reserve(static_cast<std::size_t>(speeds.workers()));
  for (int i = 0; i < speeds.workers(); ++i) {
    workers.emplace_back(i, speeds.speeds[static_cast<std::size_t>(i)], p);
    workers.back().in_flight_model = ModelVector(w0, 0);
    workers.back().busy = true;
    workers.back().busy_until = workers.back().speed;
  }
  return workers;
}
}  // namespace detail

// Full-aggregation family. The server keeps every worker's latest stochastic
// gradient; each iteration replaces the contributors' slots and moves the
// model along the average of all n slots. Incremental mode maintains the
// average through buffer deltas (g += delta / n); direct mode re-sums the
// slots from scratch every iteration, which is the sIAG/MIFA-style reference
// route the incremental path is checked against.
class AggregationRun {
 public:
  AggregationRun(const Objective& obj, Vec w0, const SpeedModel& speeds, double eta,
                 SamplePolicy policy = SamplePolicy::fresh_at_completion, bool incremental = true,
                 std::uint64_t sample_seed = 0, bool paranoid = false)
      : obj_(&obj), eta_(eta), policy_(policy), incremental_(incremental), paranoid_(paranoid),
        samples_(sample_seed), server_(ModelVector(std::move(w0), 0), obj.workers()),
        workers_(detail::make_workers(speeds, obj.dim(), server_.w_tilde.values)) {
    DUDESIM_REQUIRE(eta_ > 0.0, "AggregationRun: stepsize must be positive");
    DUDESIM_REQUIRE(speeds.workers() == obj.workers(), "AggregationRun: speeds/objective worker count mismatch");
  }

  // Algorithm-style initialization without a trace: every worker contributes
  // its gradient at w^0 (sample epoch 1), the server averages and takes the
  // first step at the time the slowest worker finishes.
  StepOutcome init() {
    TraceEntry entry;
    entry.t = 1;
    entry.time = 0.0;
    for (const auto& w : workers_) {
      entry.time = std::max(entry.time, w.speed);
      entry.contributors.push_back(Contribution{w.id, 0});
      entry.dispatch_to.push_back(w.id);
    }
    return step(entry);
  }

  StepOutcome step(const TraceEntry& entry) {
    const std::int64_t t = entry.t;
    DUDESIM_REQUIRE(t == server_.w_tilde.version + 1, "AggregationRun: trace entry t=", t,
                    " does not follow server iteration ", server_.w_tilde.version);
    const int n = static_cast<int>(workers_.size());
    Vec delta_sum = Vec::Zero(obj_->dim());
    std::vector<int> who;
    std::vector<std::int64_t> versions, epochs;
    for (const auto& cb : entry.contributors) {
      WorkerState& w = workers_[static_cast<std::size_t>(cb.worker)];
      DUDESIM_REQUIRE(w.busy && w.in_flight_model.version == cb.model_version,
                      "AggregationRun: worker ", cb.worker, " completed version ",
                      w.in_flight_model.version, " but trace says ", cb.model_version);
      const ModelVector used = detail::complete_model(w, entry.time);
      const std::int64_t epoch = policy_ == SamplePolicy::fresh_at_completion ? t : used.version + 1;
      GradientRecord grad = stochastic_gradient(*obj_, cb.worker, used, epoch, samples_);
      delta_sum += buffer_delta(grad, w);
      who.push_back(cb.worker);
      versions.push_back(cb.model_version);
      epochs.push_back(epoch);
    }

    StepOutcome out;
    out.t = t;
    out.time = entry.time;
    out.contributors = who;
    out.delta_norm = delta_sum.norm() / n;
    if (incremental_) {
      server_apply(server_, delta_sum, n, eta_);
    } else {
      server_.g_tilde = reaggregate(workers_);
      server_.w_tilde.values -= eta_ * server_.g_tilde;
      server_.w_tilde.version += 1;
      DUDESIM_REQUIRE(all_finite(server_.w_tilde.values),
                      "AggregationRun: non-finite model at iteration ", t);
    }
    out.update_norm = server_.g_tilde.norm();

    server_.ledger.advance(who, versions, epochs);
    if (policy_ == SamplePolicy::fresh_at_completion) {
      for (int i : who)
        DUDESIM_REQUIRE(server_.ledger.d(i) == 0, "AggregationRun: contributor ", i,
                        " has stale sample at t=", t);
    }
    if (paranoid_) {
      const double drift = aggregation_drift(server_, workers_);
      DUDESIM_REQUIRE(drift <= 1e-9, "AggregationRun: aggregation drift ", drift,
                      " exceeds 1e-9 at t=", t);
    }

    for (int target : entry.dispatch_to)
      detail::receive_model(workers_[static_cast<std::size_t>(target)],
                            ModelVector(server_.w_tilde.values, t), entry.time);
    time_ = entry.time;
    return out;
  }

  const ServerState& server() const { return server_; }
  const std::vector<WorkerState>& workers() const { return workers_; }
  double time() const { return time_; }

 private:
  const Objective* obj_;
  double eta_;
  SamplePolicy policy_;
  bool incremental_;
  bool paranoid_;
  SampleContext samples_;
  ServerState server_;
  std::vector<WorkerState> workers_;
  double time_ = 0.0;
};

// Single-gradient family: the wait-free update
// w^t = w^{t-1} - eta * grad f_{j_t}(w^{t - tau_{j_t}(t)}; xi^t)
// with a fresh sample each iteration. Vanilla, uniform and shuffled ASGD
// differ only in where the trace sends the updated model.
class SingleDispatchRun {
 public:
  SingleDispatchRun(const Objective& obj, Vec w0, const SpeedModel& speeds, double eta,
                    std::uint64_t sample_seed = 0)
      : obj_(&obj), eta_(eta), samples_(sample_seed), server_(ModelVector(std::move(w0), 0), obj.workers()),
        workers_(detail::make_workers(speeds, obj.dim(), server_.w_tilde.values)) {
    DUDESIM_REQUIRE(eta_ > 0.0, "SingleDispatchRun: stepsize must be positive");
  }

  StepOutcome step(const TraceEntry& entry) {
    const std::int64_t t = entry.t;
    DUDESIM_REQUIRE(t == server_.w_tilde.version + 1, "SingleDispatchRun: trace entry t=", t,
                    " does not follow server iteration ", server_.w_tilde.version);
    DUDESIM_REQUIRE(entry.contributors.size() == 1,
                    "SingleDispatchRun: expected a single contributor at t=", t);
    const auto& cb = entry.contributors.front();
    WorkerState& w = workers_[static_cast<std::size_t>(cb.worker)];
    DUDESIM_REQUIRE(w.busy && w.in_flight_model.version == cb.model_version,
                    "SingleDispatchRun: worker ", cb.worker, " completed version ",
                    w.in_flight_model.version, " but trace says ", cb.model_version);
    const ModelVector used = detail::complete_model(w, entry.time);
    GradientRecord grad = stochastic_gradient(*obj_, cb.worker, used, t, samples_);
    w.G_tilde = grad;

    server_.w_tilde.values -= eta_ * grad.values;
    server_.w_tilde.version += 1;
    DUDESIM_REQUIRE(all_finite(server_.w_tilde.values),
                    "SingleDispatchRun: non-finite model at iteration ", t);
    server_.ledger.advance({cb.worker}, {cb.model_version}, {t});
    contribution_tau_max_ = std::max(contribution_tau_max_, t - cb.model_version);

    for (int target : entry.dispatch_to)
      detail::receive_model(workers_[static_cast<std::size_t>(target)],
                            ModelVector(server_.w_tilde.values, t), entry.time);
    time_ = entry.time;

    StepOutcome out;
    out.t = t;
    out.time = entry.time;
    out.contributors = {cb.worker};
    out.update_norm = grad.values.norm();
    return out;
  }

  const ServerState& server() const { return server_; }
  const std::vector<WorkerState>& workers() const { return workers_; }
  std::int64_t contribution_tau_max() const { return contribution_tau_max_; }
  int max_queue_depth() const {
    int d = 0;
    for (const auto& w : workers_) d = std::max(d, static_cast<int>(w.model_queue.size()));
    return d;
  }

 private:
  const Objective* obj_;
  double eta_;
  SampleContext samples_;
  ServerState server_;
  std::vector<WorkerState> workers_;
  std::int64_t contribution_tau_max_ = 1;
  double time_ = 0.0;
};

// Barrier-synchronized SGD: every iteration averages all workers' fresh
// gradients at the current model. Implemented as a direct average so it can
// serve as the reference route for the lockstep reduction check.
class SyncSgdRun {
 public:
  SyncSgdRun(const Objective& obj, Vec w0, const SpeedModel& speeds, double eta,
             std::uint64_t sample_seed = 0)
      : obj_(&obj), eta_(eta), samples_(sample_seed), server_(ModelVector(std::move(w0), 0), obj.workers()),
        workers_(detail::make_workers(speeds, obj.dim(), server_.w_tilde.values)) {
    DUDESIM_REQUIRE(eta_ > 0.0, "SyncSgdRun: stepsize must be positive");
  }

  StepOutcome step(const TraceEntry& entry) {
    const std::int64_t t = entry.t;
    const int n = static_cast<int>(workers_.size());
    DUDESIM_REQUIRE(t == server_.w_tilde.version + 1, "SyncSgdRun: trace entry t=", t,
                    " does not follow server iteration ", server_.w_tilde.version);
    DUDESIM_REQUIRE(static_cast<int>(entry.contributors.size()) == n,
                    "SyncSgdRun: lockstep entry must contain all workers at t=", t);
    Vec sum = Vec::Zero(obj_->dim());
    std::vector<int> who;
    std::vector<std::int64_t> versions, epochs;
    for (const auto& cb : entry.contributors) {
      WorkerState& w = workers_[static_cast<std::size_t>(cb.worker)];
      const ModelVector used = detail::complete_model(w, entry.time);
      DUDESIM_REQUIRE(used.version == cb.model_version && used.version == t - 1,
                      "SyncSgdRun: stale model at t=", t);
      GradientRecord grad = stochastic_gradient(*obj_, cb.worker, used, t, samples_);
      sum += grad.values;
      w.G_tilde = std::move(grad);
      who.push_back(cb.worker);
      versions.push_back(cb.model_version);
      epochs.push_back(t);
    }
    const Vec g = sum / n;
    server_.w_tilde.values -= eta_ * g;
    server_.w_tilde.version += 1;
    DUDESIM_REQUIRE(all_finite(server_.w_tilde.values), "SyncSgdRun: non-finite model at iteration ", t);
    server_.g_tilde = g;
    server_.ledger.advance(who, versions, epochs);
    for (int target : entry.dispatch_to)
      detail::receive_model(workers_[static_cast<std::size_t>(target)],
                            ModelVector(server_.w_tilde.values, t), entry.time);
    time_ = entry.time;

    StepOutcome out;
    out.t = t;
    out.time = entry.time;
    out.contributors = who;
    out.update_norm = g.norm();
    return out;
  }

  const ServerState& server() const { return server_; }

 private:
  const Objective* obj_;
  double eta_;
  SampleContext samples_;
  ServerState server_;
  std::vector<WorkerState> workers_;
  double time_ = 0.0;
};

// Buffered semi-asynchronous aggregation with local steps: each contributor
// runs K local SGD steps from its received model and the server applies the
// averaged displacement:
//   w^t = w^{t-1} - (eta_g / |C_t|) * sum_i (w_i^{tau,0} - w_i^{tau,K}).
class FedBuffRun {
 public:
  FedBuffRun(const Objective& obj, Vec w0, const SpeedModel& speeds, double eta_global,
             double eta_local, int local_steps, std::uint64_t sample_seed = 0)
      : obj_(&obj), eta_g_(eta_global), eta_l_(eta_local), K_(local_steps), samples_(sample_seed),
        server_(ModelVector(std::move(w0), 0), obj.workers()),
        workers_(detail::make_workers(speeds, obj.dim(), server_.w_tilde.values)) {
    DUDESIM_REQUIRE(eta_g_ > 0.0 && eta_l_ > 0.0, "FedBuffRun: stepsizes must be positive");
    DUDESIM_REQUIRE(K_ >= 1, "FedBuffRun: local steps must be >= 1");
  }

  StepOutcome step(const TraceEntry& entry) {
    const std::int64_t t = entry.t;
    DUDESIM_REQUIRE(t == server_.w_tilde.version + 1, "FedBuffRun: trace entry t=", t,
                    " does not follow server iteration ", server_.w_tilde.version);
    DUDESIM_REQUIRE(!entry.contributors.empty(), "FedBuffRun: empty buffer at t=", t);
    Vec displacement = Vec::Zero(obj_->dim());
    std::vector<int> who;
    std::vector<std::int64_t> versions, epochs;
    for (const auto& cb : entry.contributors) {
      WorkerState& w = workers_[static_cast<std::size_t>(cb.worker)];
      DUDESIM_REQUIRE(w.busy && w.in_flight_model.version == cb.model_version,
                      "FedBuffRun: worker ", cb.worker, " completed version ",
                      w.in_flight_model.version, " but trace says ", cb.model_version);
      const ModelVector received = detail::complete_model(w, entry.time);
      Vec local = received.values;
      for (int k = 0; k < K_; ++k) {
        RngStream stream = samples_.stream(cb.worker, t, k);
        local -= eta_l_ * obj_->stochastic_gradient(cb.worker, local, stream);
      }
      displacement += received.values - local;
      who.push_back(cb.worker);
      versions.push_back(cb.model_version);
      epochs.push_back(t);
    }
    const double m = static_cast<double>(entry.contributors.size());
    server_.w_tilde.values -= (eta_g_ / m) * displacement;
    server_.w_tilde.version += 1;
    DUDESIM_REQUIRE(all_finite(server_.w_tilde.values), "FedBuffRun: non-finite model at iteration ", t);
    server_.ledger.advance(who, versions, epochs);
    for (int target : entry.dispatch_to)
      detail::receive_model(workers_[static_cast<std::size_t>(target)],
                            ModelVector(server_.w_tilde.values, t), entry.time);
    time_ = entry.time;

    StepOutcome out;
    out.t = t;
    out.time = entry.time;
    out.contributors = who;
    out.update_norm = displacement.norm() / m;
    return out;
  }

  const ServerState& server() const { return server_; }

 private:
  const Objective* obj_;
  double eta_g_;
  double eta_l_;
  int K_;
  SampleContext samples_;
  ServerState server_;
  std::vector<WorkerState> workers_;
  double time_ = 0.0;
};

// eta = (1/2) sqrt(n * Delta / (L * sigma^2 * tau_max * T)).
// The accompanying transient condition is T >= 1024 L Delta n tau_max / sigma^2;
// callers are warned (not stopped) below it.
inline double theorem1_stepsize(int n, double Delta, double L, double sigma, std::int64_t tau_max,
                                std::int64_t T, bool* transient_ok = nullptr) {
  if (sigma == 0.0)
    throw std::invalid_argument("stepsize formula undefined for sigma=0; supply eta explicitly");
  DUDESIM_REQUIRE(n >= 1 && Delta > 0.0 && L > 0.0 && sigma > 0.0 && tau_max >= 1 && T >= 1,
                  "theorem1_stepsize: all arguments must be positive");
  if (transient_ok)
    *transient_ok = static_cast<double>(T) >=
                    1024.0 * L * Delta * static_cast<double>(n) * static_cast<double>(tau_max) /
                        (sigma * sigma);
  return 0.5 * std::sqrt(static_cast<double>(n) * Delta /
                         (L * sigma * sigma * static_cast<double>(tau_max) * static_cast<double>(T)));
}

inline double theorem1_T_lower_bound(int n, double Delta, double L, double sigma, std::int64_t tau_max) {
  DUDESIM_REQUIRE(sigma > 0.0, "theorem1_T_lower_bound: sigma must be positive");
  return 1024.0 * L * Delta * static_cast<double>(n) * static_cast<double>(tau_max) / (sigma * sigma);
}

}  // namespace dudesim
