#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dudesim {

using Vec = Eigen::VectorXd;

// Fatal simulation errors: invariant breaches, non-finite state, misuse.
class SimulationError : public std::runtime_error {
 public:
  explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <typename... Args>
[[noreturn]] inline void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw SimulationError(os.str());
}
}  // namespace detail

#define DUDESIM_REQUIRE(cond, ...) \
  do {                             \
    if (!(cond)) ::dudesim::detail::fail(__VA_ARGS__); \
  } while (0)

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// Dense model parameters plus the server iteration at which they were produced.
struct ModelVector {
  Vec values;
  std::int64_t version = 0;

  ModelVector() = default;
  ModelVector(Vec v, std::int64_t ver) : values(std::move(v)), version(ver) {
    DUDESIM_REQUIRE(version >= 0, "ModelVector: negative version ", version);
    DUDESIM_REQUIRE(all_finite(values),
                    "ModelVector: non-finite entries at version ", version);
  }
  Eigen::Index dim() const { return values.size(); }
};

// A stochastic gradient together with the provenance stamps the dual-delay
// bookkeeping needs: which model it was evaluated at and when its data
// sample was drawn.
struct GradientRecord {
  Vec values;
  std::int64_t model_version = 0;
  std::int64_t sample_epoch = 1;
  int worker_id = 0;

  GradientRecord() = default;
  GradientRecord(Vec v, std::int64_t ver, std::int64_t epoch, int worker)
      : values(std::move(v)), model_version(ver), sample_epoch(epoch), worker_id(worker) {
    DUDESIM_REQUIRE(model_version >= 0,
                    "GradientRecord: negative model_version for worker ", worker);
    DUDESIM_REQUIRE(sample_epoch >= 1,
                    "GradientRecord: sample_epoch must be >= 1 for worker ", worker);
    DUDESIM_REQUIRE(all_finite(values),
                    "GradientRecord: non-finite gradient from worker ", worker,
                    " at epoch ", epoch);
  }
};

// Tracks, for every worker, the model version and sample epoch behind its
// slot in the aggregated gradient. Stores absolute indices and derives the
// delays on demand: tau_i(t) = t - model_version_i, d_i(t) = t - sample_epoch_i.
// The binding invariant is tau_i(t) >= d_i(t) + 1, equivalently
// sample_epoch_i >= model_version_i + 1, checked on every advance.
class DelayLedger {
 public:
  explicit DelayLedger(int n) : model_version_(n, 0), sample_epoch_(n, 0), contributed_(n, false) {
    DUDESIM_REQUIRE(n >= 1, "DelayLedger: need at least one worker, got ", n);
  }

  int workers() const { return static_cast<int>(model_version_.size()); }
  std::int64_t t() const { return t_; }

  std::int64_t tau(int i) const { return t_ - model_version_[static_cast<std::size_t>(i)]; }
  std::int64_t d(int i) const { return t_ - sample_epoch_[static_cast<std::size_t>(i)]; }
  std::int64_t model_version(int i) const { return model_version_[static_cast<std::size_t>(i)]; }
  std::int64_t sample_epoch(int i) const { return sample_epoch_[static_cast<std::size_t>(i)]; }
  bool contributed(int i) const { return contributed_[static_cast<std::size_t>(i)]; }

  std::vector<std::int64_t> tau_all() const {
    std::vector<std::int64_t> out(model_version_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t_ - model_version_[i];
    return out;
  }
  std::vector<std::int64_t> d_all() const {
    std::vector<std::int64_t> out(sample_epoch_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t_ - sample_epoch_[i];
    return out;
  }

  std::int64_t tau_max_observed() const { return tau_max_observed_; }

  // One server iteration: contributors' slots take on the stamps of the
  // gradients they just delivered, everyone else's delays grow by one.
  void advance(const std::vector<int>& contributors,
               const std::vector<std::int64_t>& contributor_model_versions,
               const std::vector<std::int64_t>& contributor_sample_epochs) {
    DUDESIM_REQUIRE(!contributors.empty(), "DelayLedger: empty contributor set at t=", t_ + 1);
    DUDESIM_REQUIRE(contributors.size() == contributor_model_versions.size() &&
                        contributors.size() == contributor_sample_epochs.size(),
                    "DelayLedger: contributor stamp arity mismatch at t=", t_ + 1);
    ++t_;
    for (std::size_t k = 0; k < contributors.size(); ++k) {
      const int i = contributors[k];
      DUDESIM_REQUIRE(i >= 0 && i < workers(), "DelayLedger: bad worker id ", i);
      const std::int64_t ver = contributor_model_versions[k];
      const std::int64_t epoch = contributor_sample_epochs[k];
      DUDESIM_REQUIRE(ver >= 0 && ver < t_,
                      "DelayLedger: worker ", i, " at t=", t_,
                      " delivered a gradient on model version ", ver);
      DUDESIM_REQUIRE(epoch >= 1 && epoch <= t_,
                      "DelayLedger: worker ", i, " at t=", t_,
                      " delivered a gradient with sample epoch ", epoch);
      model_version_[static_cast<std::size_t>(i)] = ver;
      sample_epoch_[static_cast<std::size_t>(i)] = epoch;
      contributed_[static_cast<std::size_t>(i)] = true;
    }
    validate();
  }

  // Checks the delay invariants for every worker that has contributed.
  void validate() const {
    for (int i = 0; i < workers(); ++i) {
      if (!contributed_[static_cast<std::size_t>(i)]) continue;
      const std::int64_t ti = tau(i), di = d(i);
      DUDESIM_REQUIRE(ti >= di + 1, "delay invariant breach: worker ", i, " at t=", t_,
                      " has tau=", ti, " < d+1=", di + 1);
      DUDESIM_REQUIRE(ti >= 1 && ti <= t_, "model delay out of range: worker ", i,
                      " at t=", t_, " has tau=", ti);
      tau_max_observed_ = std::max(tau_max_observed_, ti);
    }
  }

 private:
  std::vector<std::int64_t> model_version_;
  std::vector<std::int64_t> sample_epoch_;
  std::vector<bool> contributed_;
  std::int64_t t_ = 0;
  mutable std::int64_t tau_max_observed_ = 0;
};

// Server side of the incremental-aggregation protocol: current model,
// running average of the workers' latest gradients, and the delay ledger.
struct ServerState {
  ModelVector w_tilde;
  Vec g_tilde;
  DelayLedger ledger;

  ServerState(ModelVector w0, int n)
      : w_tilde(std::move(w0)), g_tilde(Vec::Zero(w_tilde.dim())), ledger(n) {}

  std::int64_t tau_max_observed() const { return ledger.tau_max_observed(); }
};

// Worker side: identity, compute speed, gradient buffer, and the models it
// currently holds (one in flight and, under backlogging dispatch, a FIFO
// queue of pending ones).
struct WorkerState {
  int id = 0;
  double speed = 1.0;  // virtual time units per gradient
  GradientRecord G_tilde;
  ModelVector in_flight_model;
  bool busy = false;
  double busy_until = 0.0;
  std::deque<ModelVector> model_queue;

  WorkerState(int id_, double speed_, Eigen::Index p)
      : id(id_), speed(speed_), G_tilde(Vec::Zero(p), 0, 1, id_), in_flight_model(Vec::Zero(p), 0) {
    DUDESIM_REQUIRE(speed > 0.0, "WorkerState: worker ", id_, " has non-positive speed ", speed_);
  }
};

// delta = new_grad - G_tilde; the worker's buffer is replaced by new_grad.
inline Vec buffer_delta(const GradientRecord& new_grad, WorkerState& worker) {
  DUDESIM_REQUIRE(new_grad.worker_id == worker.id, "buffer_delta: gradient from worker ",
                  new_grad.worker_id, " applied to worker ", worker.id);
  DUDESIM_REQUIRE(new_grad.values.size() == worker.G_tilde.values.size(),
                  "buffer_delta: dimension mismatch for worker ", worker.id, ": ",
                  new_grad.values.size(), " vs ", worker.G_tilde.values.size());
  Vec delta = new_grad.values - worker.G_tilde.values;
  worker.G_tilde = new_grad;
  return delta;
}

// g_tilde += delta / n;  w_tilde -= eta * g_tilde;  version += 1.
inline void server_apply(ServerState& server, const Vec& delta, int n, double eta) {
  DUDESIM_REQUIRE(eta > 0.0, "server_apply: stepsize must be positive, got ", eta);
  DUDESIM_REQUIRE(delta.size() == server.w_tilde.dim(),
                  "server_apply: delta dimension ", delta.size(), " vs model dimension ",
                  server.w_tilde.dim());
  server.g_tilde += delta / static_cast<double>(n);
  server.w_tilde.values -= eta * server.g_tilde;
  server.w_tilde.version += 1;
  DUDESIM_REQUIRE(all_finite(server.w_tilde.values) && all_finite(server.g_tilde),
                  "server_apply: non-finite model at iteration ", server.w_tilde.version);
}

// Brute-force re-aggregation oracle: average of the stored worker buffers in
// canonical (ascending worker id) order.
inline Vec reaggregate(const std::vector<WorkerState>& workers) {
  DUDESIM_REQUIRE(!workers.empty(), "reaggregate: no workers");
  Vec sum = Vec::Zero(workers.front().G_tilde.values.size());
  for (const auto& w : workers) sum += w.G_tilde.values;
  return sum / static_cast<double>(workers.size());
}

// Relative aggregation drift ||g_tilde - avg(G_tilde)|| / (1 + ||g_tilde||).
inline double aggregation_drift(const ServerState& server, const std::vector<WorkerState>& workers) {
  return (server.g_tilde - reaggregate(workers)).norm() / (1.0 + server.g_tilde.norm());
}

}  // namespace dudesim
