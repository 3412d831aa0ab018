#include <catch_amalgamated.hpp>

#include <dudesim/objectives.hpp>

#include <cmath>
#include <vector>

using namespace dudesim;

TEST_CASE("make_quadratic: hetero=0 gives identical workers and zero dissimilarity") {
  auto obj = make_quadratic(4, 6, 0.0, 0.3, 5);
  const auto rep = heterogeneity_report(obj, default_probes(obj, Vec::Zero(6), 1));
  REQUIRE(rep.zeta_sq == 0.0);
  REQUIRE(rep.zeta_max == 0.0);
  for (int i = 1; i < 4; ++i) REQUIRE((obj.A(i) - obj.A(0)).norm() == 0.0);
}

TEST_CASE("make_quadratic: single worker minimizer solves A w = b") {
  auto obj = make_quadratic(1, 5, 0.7, 0.0, 11);
  const Vec resid = obj.A(0) * obj.minimizer() - obj.b(0);
  REQUIRE(resid.norm() <= 1e-10);
}

TEST_CASE("heterogeneity at the minimizer matches direct gradient evaluation") {
  auto obj = make_quadratic(2, 2, 1.0, 0.0, 7);
  const Vec w_star = obj.minimizer();
  const auto rep = heterogeneity_report(obj, {w_star});
  const Vec g = obj.gradient(w_star);
  for (int i = 0; i < 2; ++i) {
    const double direct = (obj.worker_gradient(i, w_star) - g).squaredNorm();
    REQUIRE(rep.per_worker[static_cast<std::size_t>(i)] == Catch::Approx(direct).margin(1e-14));
  }
  // two-worker symmetry: deviations are mirror images
  REQUIRE(rep.per_worker[0] == Catch::Approx(rep.per_worker[1]).epsilon(1e-10));
  const double zeta_sq_direct = 0.5 * (rep.per_worker[0] + rep.per_worker[1]);
  REQUIRE(rep.zeta_sq == Catch::Approx(zeta_sq_direct).epsilon(1e-12));
}

TEST_CASE("heterogeneity grows with the hetero knob at fixed seed") {
  auto lo = make_quadratic(4, 6, 0.5, 0.0, 9);
  auto hi = make_quadratic(4, 6, 2.0, 0.0, 9);
  const auto probes_lo = default_probes(lo, Vec::Zero(6), 2);
  const auto probes_hi = default_probes(hi, Vec::Zero(6), 2);
  REQUIRE(heterogeneity_report(hi, probes_hi).zeta_sq >=
          heterogeneity_report(lo, probes_lo).zeta_sq);
}

TEST_CASE("full gradient vanishes at the minimizer") {
  auto obj = make_quadratic(4, 8, 1.0, 0.5, 3);
  REQUIRE(obj.gradient(obj.minimizer()).norm() <= 1e-10);
}

TEST_CASE("identity curvature gives the identity gradient") {
  Mat A = Mat::Identity(2, 2);
  QuadraticObjective obj({A}, {Vec::Zero(2)}, 0.0);
  Vec w(2);
  w << 3.0, 4.0;
  REQUIRE((obj.worker_gradient(0, w) - w).norm() == 0.0);
}

TEST_CASE("smoothness constants bound gradient differences on random pairs") {
  auto obj = make_quadratic(3, 7, 1.0, 0.0, 13);
  RngStream rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Vec a(7), b(7);
    for (int k = 0; k < 7; ++k) {
      a[k] = 3.0 * rng.normal();
      b[k] = 3.0 * rng.normal();
    }
    const double dist = (a - b).norm();
    REQUIRE((obj.gradient(a) - obj.gradient(b)).norm() <=
            obj.smoothness_global() * dist * (1.0 + 1e-12));
    for (int i = 0; i < 3; ++i)
      REQUIRE((obj.worker_gradient(i, a) - obj.worker_gradient(i, b)).norm() <=
              obj.smoothness() * dist * (1.0 + 1e-12));
  }
}

TEST_CASE("logistic gradient agrees with central finite differences") {
  auto obj = make_logistic(3, 5, 600, 2.0, 1e-3, 4, 17);
  RngStream rng(6);
  Vec w(5);
  for (int k = 0; k < 5; ++k) w[k] = 0.5 * rng.normal();
  const double h = 1e-5;
  for (int i = 0; i < 3; ++i) {
    const Vec g = obj.worker_gradient(i, w);
    double max_rel = 0.0;
    for (int k = 0; k < 5; ++k) {
      Vec wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      const double fd = (obj.worker_loss(i, wp) - obj.worker_loss(i, wm)) / (2.0 * h);
      max_rel = std::max(max_rel, std::abs(fd - g[k]) / std::max(1.0, std::abs(g[k])));
    }
    REQUIRE(max_rel <= 1e-5);
  }
}

TEST_CASE("stochastic gradient is exact in the noiseless limit") {
  auto obj = make_quadratic(2, 4, 1.0, 0.0, 21);
  RngStream rng(9);
  Vec w = Vec::Constant(4, 0.7);
  REQUIRE((obj.stochastic_gradient(0, w, rng) - obj.worker_gradient(0, w)).norm() == 0.0);
}

TEST_CASE("stochastic gradient is unbiased with the advertised noise power") {
  const double sigma = 0.8;
  auto obj = make_quadratic(2, 8, 1.0, sigma, 23);
  Vec w = Vec::Constant(8, -0.2);
  const Vec mean_true = obj.worker_gradient(0, w);
  RngStream rng(31);
  const int M = 100000;
  Vec mean = Vec::Zero(8);
  double power = 0.0;
  for (int m = 0; m < M; ++m) {
    const Vec g = obj.stochastic_gradient(0, w, rng);
    mean += g;
    power += (g - mean_true).squaredNorm();
  }
  mean /= M;
  power /= M;
  REQUIRE((mean - mean_true).norm() <= 4.0 * sigma / std::sqrt(static_cast<double>(M)));
  REQUIRE(power >= 0.97 * sigma * sigma);
  REQUIRE(power <= 1.03 * sigma * sigma);
}

TEST_CASE("mini-batching divides the noise power by the batch size") {
  const double sigma = 0.6;
  auto obj = make_quadratic(1, 6, 0.0, sigma, 29, /*batch_size=*/4);
  Vec w = Vec::Zero(6);
  const Vec mean_true = obj.worker_gradient(0, w);
  RngStream rng(37);
  const int M = 50000;
  double power = 0.0;
  for (int m = 0; m < M; ++m) power += (obj.stochastic_gradient(0, w, rng) - mean_true).squaredNorm();
  power /= M;
  const double expected = sigma * sigma / 4.0;
  REQUIRE(power >= 0.95 * expected);
  REQUIRE(power <= 1.05 * expected);
  REQUIRE(obj.noise_scale() == Catch::Approx(sigma / 2.0));
}

TEST_CASE("sample streams cannot be consumed twice per run") {
  auto obj = make_quadratic(2, 3, 0.0, 0.1, 31);
  SampleContext samples(1);
  const ModelVector w(Vec::Zero(3), 0);
  REQUIRE_NOTHROW(stochastic_gradient(obj, 0, w, 1, samples));
  REQUIRE_NOTHROW(stochastic_gradient(obj, 1, w, 1, samples));
  REQUIRE_NOTHROW(stochastic_gradient(obj, 0, w, 2, samples));
  REQUIRE_THROWS_AS(stochastic_gradient(obj, 0, w, 1, samples), SimulationError);
}

TEST_CASE("dirichlet partition: single worker takes everything") {
  std::vector<int> labels{0, 1, 2, 0, 1};
  const auto part = dirichlet_partition(labels, 1, 0.5, 3);
  for (int a : part.assignment) REQUIRE(a == 0);
  REQUIRE(part.empty_workers.empty());
}

TEST_CASE("dirichlet partition: alpha=1000 concentrates near uniform shares") {
  const int K = 10, n = 10, m = 100000;
  std::vector<int> labels(m);
  RngStream rng(41);
  for (auto& lab : labels) lab = static_cast<int>(rng.uniform_int(K));
  const auto part = dirichlet_partition(labels, n, 1000.0, 13);
  for (int k = 0; k < K; ++k) {
    std::int64_t total = 0;
    for (int i = 0; i < n; ++i) total += part.counts[k][i];
    for (int i = 0; i < n; ++i) {
      const double share = static_cast<double>(part.counts[k][i]) / static_cast<double>(total);
      REQUIRE(std::abs(share - 0.1) <= 0.1 * 0.1);
    }
  }
}

TEST_CASE("dirichlet partition: empirical proportions track the recorded draws") {
  const int K = 5, n = 8, m = 20000;
  std::vector<int> labels(m);
  RngStream rng(43);
  for (auto& lab : labels) lab = static_cast<int>(rng.uniform_int(K));
  const auto part = dirichlet_partition(labels, n, 0.1, 7);
  std::vector<std::int64_t> class_total(K, 0);
  for (int lab : labels) ++class_total[static_cast<std::size_t>(lab)];
  for (int k = 0; k < K; ++k) {
    const double mk = static_cast<double>(class_total[static_cast<std::size_t>(k)]);
    for (int i = 0; i < n; ++i) {
      const double p = part.p[k][i];
      const double sd = std::sqrt(std::max(mk * p * (1.0 - p), 1.0));
      REQUIRE(std::abs(static_cast<double>(part.counts[k][i]) - mk * p) <= 4.0 * sd);
    }
  }
}

TEST_CASE("dirichlet partition rejects bad arguments") {
  std::vector<int> labels{0, 1};
  REQUIRE_THROWS_AS(dirichlet_partition(labels, 2, 0.0, 1), SimulationError);
  REQUIRE_THROWS_AS(dirichlet_partition(std::vector<int>{-1}, 2, 1.0, 1), SimulationError);
}
