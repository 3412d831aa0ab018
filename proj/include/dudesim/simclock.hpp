#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <numeric>
#include <ostream>
#include <queue>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace dudesim {

// Fixed computation speeds: worker i takes speeds[i] virtual time units per
// gradient. Speeds are drawn from a normal truncated to (0, inf) by redrawing.
struct SpeedModel {
  double mu = 1.0;
  double std = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> speeds;

  int workers() const { return static_cast<int>(speeds.size()); }

  static SpeedModel truncated_normal(int n, double mu, double std, std::uint64_t seed) {
    DUDESIM_REQUIRE(n >= 1, "SpeedModel: need n >= 1");
    DUDESIM_REQUIRE(std >= 0.0, "SpeedModel: negative std");
    SpeedModel m;
    m.mu = mu;
    m.std = std;
    m.seed = seed;
    m.speeds.resize(static_cast<std::size_t>(n));
    RngStream rng = RngStream::keyed(seed, 0x5eed);
    for (auto& s : m.speeds) {
      do {
        s = mu + std * rng.normal();
      } while (s <= 0.0);
    }
    return m;
  }

  static SpeedModel from_speeds(std::vector<double> speeds) {
    SpeedModel m;
    for (double s : speeds) DUDESIM_REQUIRE(s > 0.0, "SpeedModel: speeds must be positive");
    m.speeds = std::move(speeds);
    return m;
  }
};

enum class SyncKind { fully_async, semi_async, lockstep };

struct AsyncMode {
  SyncKind kind = SyncKind::fully_async;
  int c = 1;  // contributions per server iteration in semi_async

  static AsyncMode fully_async() { return {SyncKind::fully_async, 1}; }
  static AsyncMode semi_async(int c) {
    DUDESIM_REQUIRE(c >= 1, "AsyncMode: semi_async needs c >= 1");
    return {SyncKind::semi_async, c};
  }
  static AsyncMode lockstep() { return {SyncKind::lockstep, 0}; }

  int batch_size(int n) const {
    switch (kind) {
      case SyncKind::fully_async: return 1;
      case SyncKind::semi_async:
        DUDESIM_REQUIRE(c >= 1 && c <= n, "AsyncMode: c=", c, " out of [1, n=", n, "]");
        return c;
      case SyncKind::lockstep: return n;
    }
    return 1;
  }
};

struct Contribution {
  int worker = 0;
  std::int64_t model_version = 0;
};

// One server iteration as produced by the scheduler: who contributed (with
// the version of the model their gradient was computed on), at what virtual
// time, and who receives the updated model afterwards.
struct TraceEntry {
  std::int64_t t = 0;
  double time = 0.0;
  std::vector<Contribution> contributors;
  std::vector<int> dispatch_to;
  int max_queue_depth = 0;
};

// Completion event. Dequeue order: time, then worker id, then sequence.
struct Event {
  double time = 0.0;
  int worker_id = 0;
  std::int64_t seq = 0;
};

inline bool operator>(const Event& a, const Event& b) {
  if (a.time != b.time) return a.time > b.time;
  if (a.worker_id != b.worker_id) return a.worker_id > b.worker_id;
  return a.seq > b.seq;
}

// Discrete-event core of the fixed-computation-speed model. A worker given a
// model computes for work * speed time units; models handed to a busy worker
// queue up FIFO and each queued model costs the full compute time.
class EventEngine {
 public:
  EventEngine(const SpeedModel& speeds, double work_per_dispatch = 1.0)
      : speeds_(speeds.speeds), work_(work_per_dispatch),
        busy_(speeds.speeds.size(), false), current_version_(speeds.speeds.size(), 0),
        queue_(speeds.speeds.size()), seq_(speeds.speeds.size(), 0) {
    DUDESIM_REQUIRE(work_ > 0.0, "EventEngine: work per dispatch must be positive");
  }

  int workers() const { return static_cast<int>(speeds_.size()); }

  void dispatch(int worker, std::int64_t model_version, double now) {
    auto w = static_cast<std::size_t>(worker);
    if (!busy_[w]) {
      busy_[w] = true;
      current_version_[w] = model_version;
      events_.push(Event{now + work_ * speeds_[w], worker, seq_[w]++});
    } else {
      queue_[w].push_back(model_version);
    }
  }

  bool has_pending() const { return !events_.empty(); }

  struct Completion {
    double time = 0.0;
    int worker = 0;
    std::int64_t model_version = 0;
  };

  // Pops the next completion; the worker immediately starts its next queued
  // model, if any, before any new dispatch lands.
  Completion pop() {
    DUDESIM_REQUIRE(!events_.empty(), "EventEngine: no pending completions");
    const Event ev = events_.top();
    events_.pop();
    auto w = static_cast<std::size_t>(ev.worker_id);
    Completion done{ev.time, ev.worker_id, current_version_[w]};
    if (!queue_[w].empty()) {
      current_version_[w] = queue_[w].front();
      queue_[w].pop_front();
      events_.push(Event{ev.time + work_ * speeds_[w], ev.worker_id, seq_[w]++});
    } else {
      busy_[w] = false;
    }
    return done;
  }

  int queue_depth(int worker) const { return static_cast<int>(queue_[static_cast<std::size_t>(worker)].size()); }
  int max_queue_depth() const {
    int d = 0;
    for (const auto& q : queue_) d = std::max(d, static_cast<int>(q.size()));
    return d;
  }

 private:
  std::vector<double> speeds_;
  double work_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;
  std::vector<bool> busy_;
  std::vector<std::int64_t> current_version_;
  std::vector<std::deque<std::int64_t>> queue_;
  std::vector<std::int64_t> seq_;
};

struct ScheduleOptions {
  // When set, the first server iteration waits for every worker's gradient
  // (aggregation-style initialization) and the updated model is broadcast to
  // all workers; afterwards batching follows the mode.
  bool initial_barrier = false;
  // Compute cost multiplier per dispatched model (local-update rounds).
  double work_per_dispatch = 1.0;
  // Server-to-worker transmission delay per dispatched model. Default zero.
  double dispatch_latency = 0.0;
};

// Return-to-sender schedule: every worker starts on model version 0 at time
// zero; each server iteration consumes a batch of completions (1 when fully
// asynchronous, c when semi-asynchronous, n in lockstep) and sends the new
// model back to the workers that contributed.
inline std::vector<TraceEntry> schedule_run(const SpeedModel& speeds, AsyncMode mode,
                                            std::int64_t T, ScheduleOptions opts = {}) {
  DUDESIM_REQUIRE(T >= 1, "schedule_run: need T >= 1");
  const int n = speeds.workers();
  const int batch = mode.batch_size(n);
  EventEngine engine(speeds, opts.work_per_dispatch);
  for (int i = 0; i < n; ++i) engine.dispatch(i, 0, 0.0);

  std::vector<TraceEntry> trace;
  trace.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 1; t <= T; ++t) {
    const int want = (t == 1 && opts.initial_barrier) ? n : batch;
    TraceEntry entry;
    entry.t = t;
    for (int k = 0; k < want; ++k) {
      const auto done = engine.pop();
      entry.time = done.time;
      entry.contributors.push_back(Contribution{done.worker, done.model_version});
    }
    std::sort(entry.contributors.begin(), entry.contributors.end(),
              [](const Contribution& a, const Contribution& b) { return a.worker < b.worker; });
    const bool broadcast = (t == 1 && opts.initial_barrier);
    if (broadcast) {
      for (int i = 0; i < n; ++i) entry.dispatch_to.push_back(i);
    } else {
      for (const auto& cb : entry.contributors) entry.dispatch_to.push_back(cb.worker);
    }
    for (int w : entry.dispatch_to) engine.dispatch(w, t, entry.time + opts.dispatch_latency);
    trace.push_back(std::move(entry));
  }
  return trace;
}

// Uniformly random dispatch: after each iteration the new model goes to a
// worker drawn uniformly at random, queueing up behind whatever that worker
// is already processing.
inline std::vector<TraceEntry> uniform_schedule(const SpeedModel& speeds, std::int64_t T,
                                                std::uint64_t dispatch_seed) {
  DUDESIM_REQUIRE(T >= 1, "uniform_schedule: need T >= 1");
  const int n = speeds.workers();
  EventEngine engine(speeds);
  for (int i = 0; i < n; ++i) engine.dispatch(i, 0, 0.0);
  RngStream rng = RngStream::keyed(dispatch_seed, 0xd15b);

  std::vector<TraceEntry> trace;
  trace.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 1; t <= T; ++t) {
    const auto done = engine.pop();
    TraceEntry entry;
    entry.t = t;
    entry.time = done.time;
    entry.contributors.push_back(Contribution{done.worker, done.model_version});
    const int target = static_cast<int>(rng.uniform_int(n));
    entry.dispatch_to.push_back(target);
    engine.dispatch(target, t, done.time);
    entry.max_queue_depth = engine.max_queue_depth();
    trace.push_back(std::move(entry));
  }
  return trace;
}

// Dispatch follows a random permutation of the workers, reshuffled every
// shuffle_period dispatches.
inline std::vector<TraceEntry> shuffled_schedule(const SpeedModel& speeds, std::int64_t T,
                                                 std::uint64_t dispatch_seed, int shuffle_period = 0) {
  DUDESIM_REQUIRE(T >= 1, "shuffled_schedule: need T >= 1");
  const int n = speeds.workers();
  if (shuffle_period <= 0) shuffle_period = n;
  EventEngine engine(speeds);
  for (int i = 0; i < n; ++i) engine.dispatch(i, 0, 0.0);
  RngStream rng = RngStream::keyed(dispatch_seed, 0x5f1e);

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  int cursor = shuffle_period;  // force a shuffle before the first dispatch

  std::vector<TraceEntry> trace;
  trace.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 1; t <= T; ++t) {
    const auto done = engine.pop();
    TraceEntry entry;
    entry.t = t;
    entry.time = done.time;
    entry.contributors.push_back(Contribution{done.worker, done.model_version});
    if (cursor >= shuffle_period) {
      rng.shuffle(perm);
      cursor = 0;
    }
    const int target = perm[static_cast<std::size_t>(cursor % n)];
    ++cursor;
    entry.dispatch_to.push_back(target);
    engine.dispatch(target, t, done.time);
    entry.max_queue_depth = engine.max_queue_depth();
    trace.push_back(std::move(entry));
  }
  return trace;
}

struct DelayStats {
  std::int64_t tau_max = 0;
  double tau_avg = 0.0;
};

// Replays a trace through the delay ledger and reports the exact maximum and
// average model delays. The average runs over t = 1..T-1, the maximum over
// every iteration. Samples are treated as fresh at contribution time.
inline DelayStats observed_delays(const std::vector<TraceEntry>& trace, int n) {
  DUDESIM_REQUIRE(!trace.empty(), "observed_delays: empty trace");
  DelayLedger ledger(n);
  DelayStats stats;
  double tau_sum = 0.0;
  std::int64_t terms = 0;
  const std::int64_t T = trace.back().t;
  for (const auto& entry : trace) {
    std::vector<int> who;
    std::vector<std::int64_t> vers, epochs;
    for (const auto& cb : entry.contributors) {
      who.push_back(cb.worker);
      vers.push_back(cb.model_version);
      epochs.push_back(entry.t);
    }
    ledger.advance(who, vers, epochs);
    if (entry.t <= T - 1) {
      for (int i = 0; i < n; ++i) tau_sum += static_cast<double>(ledger.tau(i));
      terms += n;
    }
  }
  stats.tau_max = ledger.tau_max_observed();
  stats.tau_avg = terms > 0 ? tau_sum / static_cast<double>(terms) : 0.0;
  return stats;
}

// One JSON record per server iteration: {"t":..,"time":..,"contributors":[..],
// "tau":[..],"d":[..]}.
inline void write_trace_jsonl(std::ostream& os, const std::vector<TraceEntry>& trace, int n) {
  DelayLedger ledger(n);
  os.precision(17);
  for (const auto& entry : trace) {
    std::vector<int> who;
    std::vector<std::int64_t> vers, epochs;
    for (const auto& cb : entry.contributors) {
      who.push_back(cb.worker);
      vers.push_back(cb.model_version);
      epochs.push_back(entry.t);
    }
    ledger.advance(who, vers, epochs);
    os << "{\"t\":" << entry.t << ",\"time\":" << entry.time << ",\"contributors\":[";
    for (std::size_t k = 0; k < who.size(); ++k) os << (k ? "," : "") << who[k];
    os << "],\"tau\":[";
    for (int i = 0; i < n; ++i) os << (i ? "," : "") << ledger.tau(i);
    os << "],\"d\":[";
    for (int i = 0; i < n; ++i) os << (i ? "," : "") << ledger.d(i);
    os << "]}\n";
  }
}

}  // namespace dudesim
