#include <catch_amalgamated.hpp>

#include <dudesim/simclock.hpp>

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <vector>

using namespace dudesim;

namespace {
// Independent event-trace oracle for return-to-sender fully-async dispatch:
// worker i's k-th completion at k * s_i, merged by (time, worker).
std::vector<int> merged_completion_order(const std::vector<double>& speeds, int count) {
  std::vector<int> next(speeds.size(), 1);
  std::vector<int> order;
  while (static_cast<int>(order.size()) < count) {
    int best = -1;
    double best_time = 0.0;
    for (std::size_t i = 0; i < speeds.size(); ++i) {
      const double t = next[i] * speeds[i];
      if (best < 0 || t < best_time - 1e-12) {
        best = static_cast<int>(i);
        best_time = t;
      }
    }
    order.push_back(best);
    ++next[static_cast<std::size_t>(best)];
  }
  return order;
}
}  // namespace

TEST_CASE("truncated-normal speeds are positive and reproducible") {
  const auto a = SpeedModel::truncated_normal(16, 1.0, 5.0, 12);
  const auto b = SpeedModel::truncated_normal(16, 1.0, 5.0, 12);
  REQUIRE(a.speeds == b.speeds);
  for (double s : a.speeds) REQUIRE(s > 0.0);
  const auto c = SpeedModel::truncated_normal(4, 1.0, 0.0, 1);
  for (double s : c.speeds) REQUIRE(s == 1.0);
}

TEST_CASE("fully-async schedule follows the hand event trace with the tie rule") {
  const auto trace = schedule_run(SpeedModel::from_speeds({1.0, 2.0}), AsyncMode::fully_async(), 5);
  // completions: w0@1, then both at 2 (tie -> w0), w1@2, w0@3, w0@4
  const std::vector<int> expected_workers{0, 0, 1, 0, 0};
  const std::vector<double> expected_times{1.0, 2.0, 2.0, 3.0, 4.0};
  REQUIRE(trace.size() == 5);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    REQUIRE(trace[k].contributors.size() == 1);
    REQUIRE(trace[k].contributors[0].worker == expected_workers[k]);
    REQUIRE(trace[k].time == Catch::Approx(expected_times[k]));
  }
}

TEST_CASE("lockstep with equal speeds: every iteration has all workers at unit delay") {
  const int n = 5;
  const auto speeds = SpeedModel::from_speeds(std::vector<double>(n, 2.0));
  const auto trace = schedule_run(speeds, AsyncMode::lockstep(), 20);
  for (const auto& e : trace) {
    REQUIRE(static_cast<int>(e.contributors.size()) == n);
    for (const auto& cb : e.contributors) REQUIRE(cb.model_version == e.t - 1);
    REQUIRE(e.time == Catch::Approx(2.0 * static_cast<double>(e.t)));
  }
  const auto stats = observed_delays(trace, n);
  REQUIRE(stats.tau_max == 1);
  REQUIRE(stats.tau_avg == Catch::Approx(1.0));
}

TEST_CASE("single worker: always fresh") {
  const auto trace = schedule_run(SpeedModel::from_speeds({3.0}), AsyncMode::fully_async(), 10);
  REQUIRE(observed_delays(trace, 1).tau_max == 1);
}

TEST_CASE("ten-to-one speeds: contribution counts and delays match the event oracle") {
  const std::vector<double> speeds{1.0, 10.0};
  const auto trace = schedule_run(SpeedModel::from_speeds(speeds), AsyncMode::fully_async(), 100);
  const auto oracle = merged_completion_order(speeds, 100);
  int slow_count = 0;
  std::vector<std::int64_t> slow_contributions;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    REQUIRE(trace[k].contributors[0].worker == oracle[k]);
    if (oracle[k] == 1) {
      ++slow_count;
      slow_contributions.push_back(trace[k].t);
    }
  }
  REQUIRE(slow_count == 100 / 11);  // ~floor(T / 11) under the 10:1 interleave

  // contribution-instant model delay of the slow worker equals the strict
  // inter-contribution gap + 1
  std::int64_t max_contrib_tau = 0;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    if (trace[k].contributors[0].worker == 1)
      max_contrib_tau = std::max(max_contrib_tau, trace[k].t - trace[k].contributors[0].model_version);
  }
  std::int64_t max_strict_gap = slow_contributions.front() - 1;  // gap from the time-zero dispatch
  for (std::size_t k = 1; k < slow_contributions.size(); ++k)
    max_strict_gap = std::max(max_strict_gap, slow_contributions[k] - slow_contributions[k - 1] - 1);
  REQUIRE(max_contrib_tau == max_strict_gap + 1);

  // slot delay peaks one iteration before the slow worker's next contribution:
  // hand count gives 2 * 11 - 1 = 21 for the steady 10:1 interleave
  REQUIRE(observed_delays(trace, 2).tau_max == 21);
}

TEST_CASE("work conservation: return-to-sender completions land at k * s_i") {
  const std::vector<double> speeds{0.7, 1.3};
  const auto trace = schedule_run(SpeedModel::from_speeds(speeds), AsyncMode::fully_async(), 40);
  std::map<int, int> completions;
  for (const auto& e : trace) {
    const int w = e.contributors[0].worker;
    ++completions[w];
    REQUIRE(e.time ==
            Catch::Approx(completions[w] * speeds[static_cast<std::size_t>(w)]).epsilon(1e-12));
  }
}

TEST_CASE("schedules are deterministic") {
  const auto speeds = SpeedModel::truncated_normal(6, 1.0, 1.0, 77);
  const auto a = schedule_run(speeds, AsyncMode::semi_async(3), 500, ScheduleOptions{true, 1.0});
  const auto b = schedule_run(speeds, AsyncMode::semi_async(3), 500, ScheduleOptions{true, 1.0});
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    REQUIRE(a[k].time == b[k].time);
    REQUIRE(a[k].contributors.size() == b[k].contributors.size());
    for (std::size_t j = 0; j < a[k].contributors.size(); ++j) {
      REQUIRE(a[k].contributors[j].worker == b[k].contributors[j].worker);
      REQUIRE(a[k].contributors[j].model_version == b[k].contributors[j].model_version);
    }
  }
  const auto u1 = uniform_schedule(speeds, 300, 5);
  const auto u2 = uniform_schedule(speeds, 300, 5);
  for (std::size_t k = 0; k < u1.size(); ++k)
    REQUIRE(u1[k].contributors[0].worker == u2[k].contributors[0].worker);
}

TEST_CASE("semi-async batching divides the observed maximum delay") {
  const int n = 8;
  const auto speeds = SpeedModel::from_speeds(std::vector<double>(n, 1.0));
  const auto full = observed_delays(
      schedule_run(speeds, AsyncMode::fully_async(), 500, ScheduleOptions{true, 1.0}), n);
  for (int c : {2, 4, 8}) {
    const auto part = observed_delays(
        schedule_run(speeds, AsyncMode::semi_async(c), 500, ScheduleOptions{true, 1.0}), n);
    REQUIRE(std::abs(static_cast<double>(part.tau_max) - static_cast<double>(full.tau_max) / c) <=
            1.0);
  }
}

TEST_CASE("uniform dispatch: near-uniform contributions for equal speeds") {
  const int n = 4;
  const std::int64_t T = 10000;
  const auto speeds = SpeedModel::from_speeds(std::vector<double>(n, 1.0));
  const auto trace = uniform_schedule(speeds, T, 9);
  std::vector<int> counts(n, 0);
  for (const auto& e : trace) ++counts[static_cast<std::size_t>(e.contributors[0].worker)];
  const double expected = static_cast<double>(T) / n;
  const double band = 3.0 * std::sqrt(static_cast<double>(T) * (1.0 / n) * (1.0 - 1.0 / n));
  for (int c : counts) REQUIRE(std::abs(c - expected) <= band);
}

TEST_CASE("uniform dispatch: a slow worker accumulates a backlog") {
  // one model circulates per worker, so a queue deeper than 1 needs n > 2
  const auto speeds = SpeedModel::from_speeds({1.0, 1.0, 1.0, 10.0});
  const auto trace = uniform_schedule(speeds, 1000, 3);
  int max_depth = 0;
  for (const auto& e : trace) max_depth = std::max(max_depth, e.max_queue_depth);
  REQUIRE(max_depth > 1);
}

TEST_CASE("shuffled dispatch: aligned windows of n dispatches are permutations") {
  const int n = 5;
  const auto speeds = SpeedModel::truncated_normal(n, 1.0, 1.0, 15);
  const auto trace = shuffled_schedule(speeds, 100, 21);
  std::vector<int> targets;
  for (const auto& e : trace) targets.push_back(e.dispatch_to[0]);
  for (std::size_t start = 0; start + n <= targets.size(); start += n) {
    std::set<int> window(targets.begin() + static_cast<long>(start),
                         targets.begin() + static_cast<long>(start + n));
    REQUIRE(static_cast<int>(window.size()) == n);
  }
  // fixed seed: frozen prefix of the dispatch sequence
  const auto again = shuffled_schedule(speeds, 100, 21);
  for (std::size_t k = 0; k < targets.size(); ++k) REQUIRE(again[k].dispatch_to[0] == targets[k]);
}

TEST_CASE("dispatch latency shifts redispatch times") {
  const auto speeds = SpeedModel::from_speeds({1.0});
  ScheduleOptions opts;
  opts.dispatch_latency = 0.5;
  const auto trace = schedule_run(speeds, AsyncMode::fully_async(), 3, opts);
  // completions at 1, then (1 + 0.5) + 1, then + 1.5 again
  REQUIRE(trace[0].time == Catch::Approx(1.0));
  REQUIRE(trace[1].time == Catch::Approx(2.5));
  REQUIRE(trace[2].time == Catch::Approx(4.0));
}

TEST_CASE("trace JSONL export carries tau and d per iteration") {
  const auto speeds = SpeedModel::from_speeds({1.0, 2.0});
  const auto trace = schedule_run(speeds, AsyncMode::fully_async(), 4, ScheduleOptions{true, 1.0});
  std::ostringstream os;
  write_trace_jsonl(os, trace, 2);
  const std::string text = os.str();
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 4);
  REQUIRE(text.find("\"tau\":[1,1]") != std::string::npos);  // init row
  REQUIRE(text.find("\"d\":[0,0]") != std::string::npos);
}
