#include <catch_amalgamated.hpp>

#include <dudesim/core.hpp>
#include <dudesim/rng.hpp>

#include <cmath>
#include <limits>
#include <vector>

using namespace dudesim;

namespace {
// Independent oracle for the data-delay recursion: reset contributors to
// zero, increment everyone else.
std::vector<std::int64_t> recursion_oracle(int n, const std::vector<int>& contributor_per_step) {
  std::vector<std::int64_t> d(static_cast<std::size_t>(n), 0);
  for (int j : contributor_per_step) {
    for (int i = 0; i < n; ++i) {
      if (i == j)
        d[static_cast<std::size_t>(i)] = 0;
      else
        d[static_cast<std::size_t>(i)] += 1;
    }
  }
  return d;
}
}  // namespace

TEST_CASE("ModelVector rejects non-finite entries and negative versions") {
  Vec v(2);
  v << 1.0, 2.0;
  REQUIRE_NOTHROW(ModelVector(v, 0));
  v[1] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(ModelVector(v, 1), SimulationError);
  v[1] = 0.0;
  REQUIRE_THROWS_AS(ModelVector(v, -1), SimulationError);
}

TEST_CASE("ledger: single contributor after init gives d = [0, 1]") {
  DelayLedger ledger(2);
  ledger.advance({0, 1}, {0, 0}, {1, 1});  // init: everyone fresh at t=1
  REQUIRE(ledger.d_all() == std::vector<std::int64_t>{0, 0});
  REQUIRE(ledger.tau_all() == std::vector<std::int64_t>{1, 1});

  ledger.advance({0}, {1}, {2});  // worker 0 contributes at t=2 on model 1
  REQUIRE(ledger.d_all() == std::vector<std::int64_t>{0, 1});
  REQUIRE(ledger.tau_all() == std::vector<std::int64_t>{1, 2});
}

TEST_CASE("ledger: a lone worker is always fresh") {
  DelayLedger ledger(1);
  ledger.advance({0}, {0}, {1});
  for (std::int64_t t = 2; t <= 50; ++t) ledger.advance({0}, {t - 1}, {t});
  REQUIRE(ledger.d(0) == 0);
  REQUIRE(ledger.tau(0) == 1);
  REQUIRE(ledger.tau_max_observed() == 1);
}

TEST_CASE("ledger: alternating contributors follow the hand-unrolled recursion") {
  const int n = 3;
  DelayLedger ledger(n);
  std::vector<int> sequence;
  for (std::int64_t t = 1; t <= 9; ++t) {
    const int j = static_cast<int>((t - 1) % n);
    sequence.push_back(j);
    ledger.advance({j}, {t - 1}, {t});
    const auto oracle = recursion_oracle(n, sequence);
    REQUIRE(ledger.d_all() == oracle);
  }
  REQUIRE(ledger.d(0) == 2);  // worker 0 last contributed at t=7
}

TEST_CASE("ledger: identical contributor sequences produce identical ledgers") {
  RngStream rng(3);
  std::vector<int> contributor;
  for (int t = 0; t < 200; ++t) contributor.push_back(static_cast<int>(rng.uniform_int(4)));
  auto play = [&] {
    DelayLedger ledger(4);
    ledger.advance({0, 1, 2, 3}, {0, 0, 0, 0}, {1, 1, 1, 1});
    for (std::size_t k = 0; k < contributor.size(); ++k) {
      const auto t = static_cast<std::int64_t>(k) + 2;
      ledger.advance({contributor[k]}, {t - 1}, {t});
    }
    return std::make_pair(ledger.tau_all(), ledger.d_all());
  };
  REQUIRE(play() == play());
}

TEST_CASE("ledger: breaching tau >= d + 1 is fatal and names the worker") {
  DelayLedger ledger(2);
  ledger.advance({0, 1}, {0, 0}, {1, 1});
  // worker 1 delivering a sample older than its model breaks the ordering
  try {
    ledger.advance({1}, {1}, {1});
    FAIL("expected SimulationError");
  } catch (const SimulationError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("worker 1") != std::string::npos);
  }
}

TEST_CASE("buffer_delta: identical gradient gives a zero delta") {
  WorkerState w(0, 1.0, 2);
  Vec g(2);
  g << 1.0, 2.0;
  w.G_tilde = GradientRecord(g, 0, 1, 0);
  const Vec delta = buffer_delta(GradientRecord(g, 1, 2, 0), w);
  REQUIRE(delta.norm() == 0.0);
}

TEST_CASE("buffer_delta: componentwise subtraction and buffer replacement") {
  WorkerState w(3, 1.0, 2);
  Vec old_g(2), new_g(2);
  old_g << 1.0, 2.0;
  new_g << 4.0, 0.0;
  w.G_tilde = GradientRecord(old_g, 0, 1, 3);
  const Vec delta = buffer_delta(GradientRecord(new_g, 1, 2, 3), w);
  REQUIRE(delta[0] == 3.0);
  REQUIRE(delta[1] == -2.0);
  REQUIRE(w.G_tilde.values == new_g);
}

TEST_CASE("buffer_delta: after k updates the buffer equals the k-th gradient") {
  WorkerState w(0, 1.0, 4);
  RngStream rng(7);
  Vec last;
  for (int k = 1; k <= 25; ++k) {
    Vec g(4);
    for (int j = 0; j < 4; ++j) g[j] = rng.normal();
    buffer_delta(GradientRecord(g, k - 1, k, 0), w);
    last = g;
  }
  REQUIRE(w.G_tilde.values == last);  // direct-assignment oracle
}

TEST_CASE("buffer_delta: wrong worker or dimension is fatal") {
  WorkerState w(0, 1.0, 2);
  REQUIRE_THROWS_AS(buffer_delta(GradientRecord(Vec::Zero(2), 0, 1, 1), w), SimulationError);
  REQUIRE_THROWS_AS(buffer_delta(GradientRecord(Vec::Zero(3), 0, 1, 0), w), SimulationError);
}

TEST_CASE("server_apply: zero delta repeats the buffered direction") {
  ServerState server(ModelVector(Vec::Zero(2), 0), 1);
  Vec d(2);
  d << 2.0, -4.0;
  server_apply(server, d, 1, 0.5);
  REQUIRE(server.g_tilde[0] == 2.0);
  REQUIRE(server.w_tilde.values[0] == -1.0);
  REQUIRE(server.w_tilde.version == 1);

  const Vec w_before = server.w_tilde.values;
  const Vec g_before = server.g_tilde;
  server_apply(server, Vec::Zero(2), 1, 0.5);
  REQUIRE(server.g_tilde == g_before);
  REQUIRE((server.w_tilde.values - (w_before - 0.5 * g_before)).norm() == 0.0);
}

TEST_CASE("server_apply: incremental aggregation matches brute-force re-aggregation") {
  const int n = 8, p = 5;
  ServerState server(ModelVector(Vec::Zero(p), 0), n);
  std::vector<WorkerState> workers;
  for (int i = 0; i < n; ++i) workers.emplace_back(i, 1.0, p);
  RngStream rng(19);
  for (int step = 1; step <= 1000; ++step) {
    const int i = static_cast<int>(rng.uniform_int(n));
    Vec g(p);
    for (int j = 0; j < p; ++j) g[j] = rng.normal();
    const Vec delta = buffer_delta(GradientRecord(g, step - 1, step, i),
                                   workers[static_cast<std::size_t>(i)]);
    server_apply(server, delta, n, 0.01);
    const double drift = aggregation_drift(server, workers);
    REQUIRE(drift <= 1e-9);
  }
}

TEST_CASE("server_apply: non-finite input is fatal") {
  ServerState server(ModelVector(Vec::Zero(2), 0), 1);
  Vec bad(2);
  bad << 1.0, std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(server_apply(server, bad, 1, 0.1), SimulationError);
  REQUIRE_THROWS_AS(server_apply(server, Vec::Zero(2), 1, 0.0), SimulationError);
}
