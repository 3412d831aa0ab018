#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "core.hpp"
#include "objectives.hpp"

namespace dudesim {

// One row per server iteration. grad_norm_sq is ||grad F(w^{t-1})||^2 (the
// quantity the convergence statements average), loss is F(w^t); both come
// from exact full gradients, so stochasticity enters only through the
// trajectory itself.
struct RunRecord {
  std::int64_t t = 0;
  double virtual_time = 0.0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  std::vector<int> contributors;
  std::vector<std::int64_t> tau;
  std::vector<std::int64_t> d;
  int max_queue_depth = 0;
};

// Mean over runs (seeds) of the per-run average of grad_norm_sq for
// t = 1..T. burn_in_frac > 0 discards that leading fraction of iterations.
inline double avg_grad_norm_sq(const std::vector<std::vector<RunRecord>>& runs, std::int64_t T,
                               double burn_in_frac = 0.0) {
  DUDESIM_REQUIRE(!runs.empty(), "avg_grad_norm_sq: no runs");
  DUDESIM_REQUIRE(burn_in_frac >= 0.0 && burn_in_frac < 1.0, "avg_grad_norm_sq: bad burn-in fraction");
  const auto first = static_cast<std::int64_t>(std::floor(burn_in_frac * static_cast<double>(T))) + 1;
  double total = 0.0;
  for (const auto& records : runs) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& rec : records) {
      if (rec.t < first || rec.t > T) continue;
      sum += rec.grad_norm_sq;
      ++count;
    }
    DUDESIM_REQUIRE(count > 0, "avg_grad_norm_sq: empty window");
    total += sum / static_cast<double>(count);
  }
  return total / static_cast<double>(runs.size());
}

// Least-squares fit of log(avg grad norm^2) against log(T).
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::int64_t> T_grid;
};

inline RateFit rate_fit(const std::vector<std::pair<std::int64_t, double>>& points) {
  DUDESIM_REQUIRE(points.size() >= 2, "rate_fit: need at least two (T, value) points");
  RateFit fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  const double m = static_cast<double>(points.size());
  for (const auto& [T, v] : points) {
    DUDESIM_REQUIRE(T >= 1 && v > 0.0, "rate_fit: points must have T >= 1 and positive values");
    const double x = std::log(static_cast<double>(T));
    const double y = std::log(v);
    sx += x; sy += y; sxx += x * x; sxy += x * y; syy += y * y;
    fit.T_grid.push_back(T);
  }
  const double denom = m * sxx - sx * sx;
  DUDESIM_REQUIRE(denom > 0.0, "rate_fit: degenerate T grid");
  fit.slope = (m * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / m;
  double ss_res = 0.0, ss_tot = 0.0;
  const double ybar = sy / m;
  for (const auto& [T, v] : points) {
    const double x = std::log(static_cast<double>(T));
    const double y = std::log(v);
    const double yhat = fit.intercept + fit.slope * x;
    ss_res += (y - yhat) * (y - yhat);
    ss_tot += (y - ybar) * (y - ybar);
  }
  fit.r_squared = ss_tot > 0.0 ? std::max(0.0, 1.0 - ss_res / ss_tot) : 1.0;
  return fit;
}

struct VarianceCheck {
  double estimate = 0.0;
  double bound = 0.0;  // sigma^2 / n
  bool pass = false;
};

// Monte Carlo estimate of E || (1/n) sum_i (grad f_i(w_i; xi) - grad F_i(w_i)) ||^2
// over M independent resamples at the frozen per-worker models w_i. For
// isotropic Gaussian noise the population value is exactly sigma^2 / n.
inline VarianceCheck lemma_variance_check(const Objective& obj, const std::vector<Vec>& frozen_models,
                                          int M, std::uint64_t seed) {
  const int n = obj.workers();
  DUDESIM_REQUIRE(static_cast<int>(frozen_models.size()) == n,
                  "lemma_variance_check: need one frozen model per worker");
  DUDESIM_REQUIRE(M >= 1, "lemma_variance_check: M must be >= 1");
  std::vector<Vec> means(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    means[static_cast<std::size_t>(i)] = obj.worker_gradient(i, frozen_models[static_cast<std::size_t>(i)]);

  RngStream rng = RngStream::keyed(seed, 0x7a66);
  double acc = 0.0;
  Vec avg_noise(obj.dim());
  for (int m = 0; m < M; ++m) {
    avg_noise.setZero();
    for (int i = 0; i < n; ++i) {
      avg_noise += obj.stochastic_gradient(i, frozen_models[static_cast<std::size_t>(i)], rng) -
                   means[static_cast<std::size_t>(i)];
    }
    avg_noise /= static_cast<double>(n);
    acc += avg_noise.squaredNorm();
  }
  VarianceCheck out;
  out.estimate = acc / static_cast<double>(M);
  const double sigma = obj.noise_scale();
  out.bound = sigma * sigma / static_cast<double>(n);
  out.pass = out.estimate <= out.bound * (1.0 + 5.0 / std::sqrt(static_cast<double>(M)));
  return out;
}

struct UnbiasednessCheck {
  double deviation = 0.0;  // || mean of M draws - grad F_i(w) ||
  double band = 0.0;       // 5 sigma / sqrt(M)
  bool pass = false;
};

inline UnbiasednessCheck unbiasedness_check(const Objective& obj, const Vec& w_fixed, int i, int M,
                                            std::uint64_t seed) {
  DUDESIM_REQUIRE(M >= 1, "unbiasedness_check: M must be >= 1");
  RngStream rng = RngStream::keyed(seed, 0xb1a5);
  Vec mean = Vec::Zero(obj.dim());
  for (int m = 0; m < M; ++m) mean += obj.stochastic_gradient(i, w_fixed, rng);
  mean /= static_cast<double>(M);
  UnbiasednessCheck out;
  const Vec exact = obj.worker_gradient(i, w_fixed);
  out.deviation = (mean - exact).norm();
  out.band = 5.0 * obj.noise_scale() / std::sqrt(static_cast<double>(M));
  // summation roundoff floor, relevant only in the sigma = 0 limit
  out.pass = out.deviation <= out.band + 1e-12 * (1.0 + exact.norm());
  return out;
}

// --- output writers ------------------------------------------------------

inline void write_records_csv(std::ostream& os, const std::vector<RunRecord>& records,
                              const std::string& header_comment) {
  os << std::setprecision(17);
  if (!header_comment.empty()) os << "# " << header_comment << "\n";
  os << "t,virtual_time,loss,grad_norm_sq,contributors,tau_max,d_max,max_queue_depth\n";
  for (const auto& r : records) {
    std::int64_t tau_max = 0, d_max = 0;
    for (auto v : r.tau) tau_max = std::max(tau_max, v);
    for (auto v : r.d) d_max = std::max(d_max, v);
    os << r.t << ',' << r.virtual_time << ',' << r.loss << ',' << r.grad_norm_sq << ',';
    for (std::size_t k = 0; k < r.contributors.size(); ++k) os << (k ? ";" : "") << r.contributors[k];
    os << ',' << tau_max << ',' << d_max << ',' << r.max_queue_depth << "\n";
  }
}

inline void write_records_jsonl(std::ostream& os, const std::vector<RunRecord>& records,
                                const std::string& header_json) {
  os << std::setprecision(17);
  if (!header_json.empty()) os << header_json << "\n";
  for (const auto& r : records) {
    os << "{\"t\":" << r.t << ",\"time\":" << r.virtual_time << ",\"loss\":" << r.loss
       << ",\"grad_norm_sq\":" << r.grad_norm_sq << ",\"contributors\":[";
    for (std::size_t k = 0; k < r.contributors.size(); ++k) os << (k ? "," : "") << r.contributors[k];
    os << "],\"tau\":[";
    for (std::size_t k = 0; k < r.tau.size(); ++k) os << (k ? "," : "") << r.tau[k];
    os << "],\"d\":[";
    for (std::size_t k = 0; k < r.d.size(); ++k) os << (k ? "," : "") << r.d[k];
    os << "],\"max_queue_depth\":" << r.max_queue_depth << "}\n";
  }
}

}  // namespace dudesim
