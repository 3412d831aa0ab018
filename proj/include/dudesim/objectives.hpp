#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <set>
#include <tuple>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace dudesim {

using Mat = Eigen::MatrixXd;

// Common surface for the synthetic objectives: F(w) = (1/n) sum_i F_i(w),
// exact per-worker gradients, and seeded stochastic gradients.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual int workers() const = 0;
  virtual int dim() const = 0;

  virtual double worker_loss(int i, const Vec& w) const = 0;
  virtual Vec worker_gradient(int i, const Vec& w) const = 0;

  // Stochastic gradient of F_i at w, drawing from the given stream.
  virtual Vec stochastic_gradient(int i, const Vec& w, RngStream& stream) const = 0;

  // Noise bound sigma with E||grad_i(w;xi) - grad F_i(w)||^2 <= sigma^2.
  // Exact for the quadratic construction; a configured bound otherwise.
  virtual double noise_scale() const = 0;

  // Smoothness constant valid for every F_i (and hence for F).
  virtual double smoothness() const = 0;

  virtual double loss(const Vec& w) const {
    double sum = 0.0;
    for (int i = 0; i < workers(); ++i) sum += worker_loss(i, w);
    return sum / workers();
  }

  // Exact grad F(w), averaged in canonical ascending-worker order.
  virtual Vec gradient(const Vec& w) const {
    DUDESIM_REQUIRE(all_finite(w), "gradient: non-finite query point");
    Vec sum = Vec::Zero(dim());
    for (int i = 0; i < workers(); ++i) sum += worker_gradient(i, w);
    return sum / workers();
  }
};

// F_i(w) = 1/2 w'A_i w - b_i'w with symmetric PSD A_i. Stochastic gradients
// add isotropic Gaussian noise with E||xi||^2 = sigma^2 exactly, so the
// variance constant in downstream checks is known in closed form.
class QuadraticObjective : public Objective {
 public:
  QuadraticObjective(std::vector<Mat> A, std::vector<Vec> b, double sigma, int batch_size = 1)
      : A_(std::move(A)), b_(std::move(b)), sigma_(sigma), batch_size_(batch_size) {
    DUDESIM_REQUIRE(!A_.empty() && A_.size() == b_.size(), "QuadraticObjective: empty or ragged data");
    DUDESIM_REQUIRE(sigma_ >= 0.0, "QuadraticObjective: negative sigma");
    DUDESIM_REQUIRE(batch_size_ >= 1, "QuadraticObjective: batch size must be >= 1");
    const Eigen::Index p = A_.front().rows();
    A_bar_ = Mat::Zero(p, p);
    b_bar_ = Vec::Zero(p);
    L_ = 0.0;
    for (std::size_t i = 0; i < A_.size(); ++i) {
      DUDESIM_REQUIRE(A_[i].rows() == p && A_[i].cols() == p && b_[i].size() == p,
                      "QuadraticObjective: inconsistent dimensions at worker ", i);
      DUDESIM_REQUIRE((A_[i] - A_[i].transpose()).cwiseAbs().maxCoeff() < 1e-10,
                      "QuadraticObjective: A_", i, " is not symmetric");
      Eigen::SelfAdjointEigenSolver<Mat> es(A_[i], Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff();
      DUDESIM_REQUIRE(lo > -1e-10, "QuadraticObjective: A_", i, " is not PSD (lambda_min=", lo, ")");
      L_ = std::max(L_, es.eigenvalues().maxCoeff());
      A_bar_ += A_[i];
      b_bar_ += b_[i];
    }
    A_bar_ /= static_cast<double>(A_.size());
    b_bar_ /= static_cast<double>(A_.size());
    Eigen::SelfAdjointEigenSolver<Mat> es(A_bar_, Eigen::EigenvaluesOnly);
    L_global_ = es.eigenvalues().maxCoeff();
    mu_global_ = es.eigenvalues().minCoeff();

    Eigen::FullPivLU<Mat> lu(A_bar_);
    DUDESIM_REQUIRE(lu.isInvertible(), "QuadraticObjective: averaged curvature matrix is singular");
    w_star_ = lu.solve(b_bar_);
  }

  int workers() const override { return static_cast<int>(A_.size()); }
  int dim() const override { return static_cast<int>(A_bar_.rows()); }

  double worker_loss(int i, const Vec& w) const override {
    const auto& A = A_[static_cast<std::size_t>(i)];
    const auto& b = b_[static_cast<std::size_t>(i)];
    return 0.5 * w.dot(A * w) - b.dot(w);
  }

  Vec worker_gradient(int i, const Vec& w) const override {
    DUDESIM_REQUIRE(all_finite(w), "worker_gradient: non-finite query point");
    return A_[static_cast<std::size_t>(i)] * w - b_[static_cast<std::size_t>(i)];
  }

  // Mean of batch_size noisy gradients; per-coordinate noise variance
  // sigma^2 / p makes E||noise||^2 = sigma^2 for a single draw.
  Vec stochastic_gradient(int i, const Vec& w, RngStream& stream) const override {
    Vec g = worker_gradient(i, w);
    if (sigma_ == 0.0) return g;
    Vec noise = Vec::Zero(dim());
    for (int b = 0; b < batch_size_; ++b) {
      for (Eigen::Index k = 0; k < noise.size(); ++k) noise[k] += stream.normal();
    }
    const double coeff = sigma_ / (std::sqrt(static_cast<double>(dim())) *
                                   static_cast<double>(batch_size_));
    return g + coeff * noise;
  }

  double noise_scale() const override {
    return sigma_ / std::sqrt(static_cast<double>(batch_size_));
  }
  double smoothness() const override { return L_; }

  // Averaged curvature gives F directly; cheaper than the per-worker loop
  // and identical up to roundoff.
  double loss(const Vec& w) const override { return 0.5 * w.dot(A_bar_ * w) - b_bar_.dot(w); }
  Vec gradient(const Vec& w) const override {
    DUDESIM_REQUIRE(all_finite(w), "gradient: non-finite query point");
    return A_bar_ * w - b_bar_;
  }

  // lambda_max / lambda_min of the averaged curvature (smoothness and strong
  // convexity of F itself).
  double smoothness_global() const { return L_global_; }
  double strong_convexity() const { return mu_global_; }

  const Vec& minimizer() const { return w_star_; }
  double optimal_loss() const { return loss(w_star_); }
  const Mat& A(int i) const { return A_[static_cast<std::size_t>(i)]; }
  const Vec& b(int i) const { return b_[static_cast<std::size_t>(i)]; }
  const Mat& A_bar() const { return A_bar_; }
  const Vec& b_bar() const { return b_bar_; }

 private:
  std::vector<Mat> A_;
  std::vector<Vec> b_;
  double sigma_;
  int batch_size_;
  Mat A_bar_;
  Vec b_bar_;
  Vec w_star_;
  double L_ = 0.0;         // max_i lambda_max(A_i)
  double L_global_ = 0.0;  // lambda_max(A_bar)
  double mu_global_ = 0.0;
};

// A_i = A0 + hetero * S_i, b_i = b0 + hetero * u_i with seeded random PSD
// perturbations S_i. hetero = 0 gives identical workers.
inline QuadraticObjective make_quadratic(int n, int p, double hetero, double sigma,
                                         std::uint64_t seed, int batch_size = 1) {
  DUDESIM_REQUIRE(n >= 1 && p >= 1, "make_quadratic: need n, p >= 1, got n=", n, " p=", p);
  DUDESIM_REQUIRE(hetero >= 0.0 && sigma >= 0.0, "make_quadratic: hetero and sigma must be >= 0");
  for (int attempt = 0; attempt < 5; ++attempt) {
    RngStream rng = RngStream::keyed(seed, 0xface, static_cast<std::uint64_t>(attempt));
    Mat M(p, p);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < p; ++c) M(r, c) = rng.normal();
    // Base curvature is SPD with spectrum roughly in [0.2, 1.2].
    Mat A0 = M * M.transpose() / static_cast<double>(p);
    {
      Eigen::SelfAdjointEigenSolver<Mat> es(A0, Eigen::EigenvaluesOnly);
      A0 = A0 / es.eigenvalues().maxCoeff() + 0.2 * Mat::Identity(p, p);
    }
    Vec b0(p);
    for (Eigen::Index k = 0; k < p; ++k) b0[k] = rng.normal();

    std::vector<Mat> A(static_cast<std::size_t>(n));
    std::vector<Vec> b(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Mat N(p, p);
      for (Eigen::Index r = 0; r < p; ++r)
        for (Eigen::Index c = 0; c < p; ++c) N(r, c) = rng.normal();
      Mat S = N * N.transpose() / static_cast<double>(p);
      Vec u(p);
      for (Eigen::Index k = 0; k < p; ++k) u[k] = rng.normal();
      A[static_cast<std::size_t>(i)] = A0 + hetero * S;
      b[static_cast<std::size_t>(i)] = b0 + hetero * u;
    }
    try {
      return QuadraticObjective(std::move(A), std::move(b), sigma, batch_size);
    } catch (const SimulationError&) {
      // Singular averaged curvature; retry with a fresh draw.
      continue;
    }
  }
  detail::fail("make_quadratic: failed to build an invertible objective after 5 attempts");
}

// Regularized logistic loss over per-worker datasets with labels in {0,1}.
// Mini-batch gradients sample uniformly with replacement from the local data.
class LogisticObjective : public Objective {
 public:
  LogisticObjective(std::vector<Mat> features, std::vector<std::vector<int>> labels,
                    double lambda, int batch_size, double sigma_bound = 1.0)
      : X_(std::move(features)), y_(std::move(labels)), lambda_(lambda),
        batch_size_(batch_size), sigma_bound_(sigma_bound) {
    DUDESIM_REQUIRE(!X_.empty() && X_.size() == y_.size(), "LogisticObjective: empty or ragged data");
    DUDESIM_REQUIRE(lambda_ >= 0.0, "LogisticObjective: negative regularizer");
    DUDESIM_REQUIRE(batch_size_ >= 1, "LogisticObjective: batch size must be >= 1");
    const Eigen::Index p = X_.front().cols();
    double max_row_sq = 0.0;
    for (std::size_t i = 0; i < X_.size(); ++i) {
      DUDESIM_REQUIRE(X_[i].cols() == p, "LogisticObjective: inconsistent feature dimension");
      DUDESIM_REQUIRE(X_[i].rows() > 0, "LogisticObjective: worker ", i, " has no samples");
      DUDESIM_REQUIRE(X_[i].rows() == static_cast<Eigen::Index>(y_[i].size()),
                      "LogisticObjective: features/labels mismatch at worker ", i);
      for (int lab : y_[i]) DUDESIM_REQUIRE(lab == 0 || lab == 1, "LogisticObjective: labels must be 0/1");
      max_row_sq = std::max(max_row_sq, X_[i].rowwise().squaredNorm().maxCoeff());
    }
    // logistic curvature is at most ||x||^2 / 4 per sample
    L_ = 0.25 * max_row_sq + lambda_;
  }

  int workers() const override { return static_cast<int>(X_.size()); }
  int dim() const override { return static_cast<int>(X_.front().cols()); }

  double worker_loss(int i, const Vec& w) const override {
    const auto& X = X_[static_cast<std::size_t>(i)];
    const auto& y = y_[static_cast<std::size_t>(i)];
    double sum = 0.0;
    const Vec z = X * w;
    for (Eigen::Index r = 0; r < z.size(); ++r) {
      // log(1 + e^z) - y z, computed stably
      const double zr = z[r];
      const double softplus = zr > 0 ? zr + std::log1p(std::exp(-zr)) : std::log1p(std::exp(zr));
      sum += softplus - (y[static_cast<std::size_t>(r)] ? zr : 0.0);
    }
    return sum / static_cast<double>(z.size()) + 0.5 * lambda_ * w.squaredNorm();
  }

  Vec worker_gradient(int i, const Vec& w) const override {
    DUDESIM_REQUIRE(all_finite(w), "worker_gradient: non-finite query point");
    const auto& X = X_[static_cast<std::size_t>(i)];
    const auto& y = y_[static_cast<std::size_t>(i)];
    const Vec z = X * w;
    Vec r(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k)
      r[k] = sigmoid(z[k]) - static_cast<double>(y[static_cast<std::size_t>(k)]);
    return X.transpose() * r / static_cast<double>(z.size()) + lambda_ * w;
  }

  Vec stochastic_gradient(int i, const Vec& w, RngStream& stream) const override {
    const auto& X = X_[static_cast<std::size_t>(i)];
    const auto& y = y_[static_cast<std::size_t>(i)];
    Vec g = Vec::Zero(dim());
    for (int b = 0; b < batch_size_; ++b) {
      const auto k = stream.uniform_int(X.rows());
      const double margin = sigmoid(X.row(k).dot(w)) - static_cast<double>(y[static_cast<std::size_t>(k)]);
      g += margin * X.row(k).transpose();
    }
    return g / static_cast<double>(batch_size_) + lambda_ * w;
  }

  double noise_scale() const override { return sigma_bound_ / std::sqrt(static_cast<double>(batch_size_)); }
  double smoothness() const override { return L_; }

 private:
  static double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

  std::vector<Mat> X_;
  std::vector<std::vector<int>> y_;
  double lambda_;
  int batch_size_;
  double sigma_bound_;
  double L_ = 0.0;
};

// Class-wise Dirichlet split: one probability vector p_k ~ Dir_n(alpha) per
// class, each class-k instance assigned to a worker via p_k.
struct PartitionResult {
  std::vector<int> assignment;          // per sample, worker in [0, n)
  std::vector<std::vector<double>> p;   // [class][worker] drawn probabilities
  std::vector<std::vector<std::int64_t>> counts;  // [class][worker] assigned counts
  std::vector<int> empty_workers;
};

inline PartitionResult dirichlet_partition(const std::vector<int>& labels, int n, double alpha,
                                           std::uint64_t seed) {
  DUDESIM_REQUIRE(alpha > 0.0, "dirichlet_partition: alpha must be positive, got ", alpha);
  DUDESIM_REQUIRE(n >= 1, "dirichlet_partition: need n >= 1");
  int num_classes = 0;
  for (int lab : labels) {
    DUDESIM_REQUIRE(lab >= 0, "dirichlet_partition: negative label");
    num_classes = std::max(num_classes, lab + 1);
  }
  PartitionResult res;
  res.assignment.resize(labels.size());
  res.p.resize(static_cast<std::size_t>(num_classes));
  res.counts.assign(static_cast<std::size_t>(num_classes),
                    std::vector<std::int64_t>(static_cast<std::size_t>(n), 0));
  RngStream draw_rng = RngStream::keyed(seed, 0xd1b1);
  for (int k = 0; k < num_classes; ++k)
    res.p[static_cast<std::size_t>(k)] = draw_rng.dirichlet(alpha, n);

  RngStream assign_rng = RngStream::keyed(seed, 0xa551);
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const auto& pk = res.p[static_cast<std::size_t>(labels[s])];
    const double u = assign_rng.uniform01();
    double acc = 0.0;
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      acc += pk[static_cast<std::size_t>(i)];
      if (u < acc) {
        chosen = i;
        break;
      }
    }
    res.assignment[s] = chosen;
    ++res.counts[static_cast<std::size_t>(labels[s])][static_cast<std::size_t>(chosen)];
  }
  std::vector<std::int64_t> totals(static_cast<std::size_t>(n), 0);
  for (int a : res.assignment) ++totals[static_cast<std::size_t>(a)];
  for (int i = 0; i < n; ++i)
    if (totals[static_cast<std::size_t>(i)] == 0) res.empty_workers.push_back(i);
  return res;
}

// Synthetic two-class logistic problem: Gaussian class clusters pooled, then
// split across workers by the Dirichlet partitioner. Low alpha skews the
// local class mixes and raises heterogeneity.
inline LogisticObjective make_logistic(int n, int p, int samples, double alpha, double lambda,
                                       int batch_size, std::uint64_t seed) {
  DUDESIM_REQUIRE(n >= 1 && p >= 1 && samples >= n, "make_logistic: invalid sizes");
  RngStream rng = RngStream::keyed(seed, 0x106157);
  Vec mean0(p), mean1(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    mean0[k] = rng.normal();
    mean1[k] = rng.normal();
  }
  Mat X(samples, p);
  std::vector<int> labels(static_cast<std::size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    const int lab = static_cast<int>(rng.uniform_int(2));
    labels[static_cast<std::size_t>(s)] = lab;
    const Vec& mu = lab ? mean1 : mean0;
    for (Eigen::Index k = 0; k < p; ++k) X(s, k) = mu[k] + rng.normal();
  }
  for (int attempt = 0; attempt < 16; ++attempt) {
    const auto part = dirichlet_partition(labels, n, alpha, seed + static_cast<std::uint64_t>(attempt));
    if (!part.empty_workers.empty()) continue;
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(n));
    for (std::size_t s = 0; s < labels.size(); ++s)
      rows[static_cast<std::size_t>(part.assignment[s])].push_back(static_cast<int>(s));
    std::vector<Mat> Xw(static_cast<std::size_t>(n));
    std::vector<std::vector<int>> yw(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto& idx = rows[static_cast<std::size_t>(i)];
      Mat Xi(idx.size(), p);
      std::vector<int> yi(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        Xi.row(static_cast<Eigen::Index>(r)) = X.row(idx[r]);
        yi[r] = labels[static_cast<std::size_t>(idx[r])];
      }
      Xw[static_cast<std::size_t>(i)] = std::move(Xi);
      yw[static_cast<std::size_t>(i)] = std::move(yi);
    }
    return LogisticObjective(std::move(Xw), std::move(yw), lambda, batch_size);
  }
  detail::fail("make_logistic: could not find a partition with non-empty workers; raise alpha or samples");
}

// Worst observed per-worker gradient dissimilarity over a probe set. This is
// a lower estimate of the uniform bound: for distinct quadratics the sup over
// all of R^p is infinite, so probe-set values are what gets reported.
struct HeterogeneityReport {
  double zeta_sq = 0.0;               // mean of per-worker squared values
  double zeta_max = 0.0;              // max_i sqrt(per_worker[i])
  std::vector<double> per_worker;     // max over probes of ||grad F_i - grad F||^2
};

inline HeterogeneityReport heterogeneity_report(const Objective& obj, const std::vector<Vec>& probes) {
  DUDESIM_REQUIRE(!probes.empty(), "heterogeneity_report: need at least one probe point");
  HeterogeneityReport rep;
  rep.per_worker.assign(static_cast<std::size_t>(obj.workers()), 0.0);
  for (const auto& w : probes) {
    const Vec g = obj.gradient(w);
    for (int i = 0; i < obj.workers(); ++i) {
      const double dev = (obj.worker_gradient(i, w) - g).squaredNorm();
      rep.per_worker[static_cast<std::size_t>(i)] = std::max(rep.per_worker[static_cast<std::size_t>(i)], dev);
    }
  }
  for (double z : rep.per_worker) {
    rep.zeta_sq += z;
    rep.zeta_max = std::max(rep.zeta_max, std::sqrt(z));
  }
  rep.zeta_sq /= static_cast<double>(rep.per_worker.size());
  return rep;
}

// Default probe set: w0, the minimizer when available, and seeded random points.
inline std::vector<Vec> default_probes(const Objective& obj, const Vec& w0, std::uint64_t seed) {
  std::vector<Vec> probes{w0};
  if (const auto* q = dynamic_cast<const QuadraticObjective*>(&obj)) probes.push_back(q->minimizer());
  RngStream rng = RngStream::keyed(seed, 0x9806e);
  for (int k = 0; k < 8; ++k) {
    Vec w(obj.dim());
    for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = rng.normal();
    probes.push_back(std::move(w));
  }
  return probes;
}

// Per-run sample bookkeeping: hands out the dedicated stream for a
// (worker, epoch, substep) triple and refuses to hand the same one out twice,
// so no schedule can silently reuse a data sample.
class SampleContext {
 public:
  explicit SampleContext(std::uint64_t root_seed) : root_(root_seed) {}

  RngStream stream(int worker, std::int64_t epoch, int substep = 0) {
    const auto key = std::make_tuple(worker, epoch, substep);
    const bool inserted = used_.insert(key).second;
    DUDESIM_REQUIRE(inserted, "sample stream reuse: worker ", worker, " epoch ", epoch,
                    " substep ", substep);
    return RngStream::keyed(root_, static_cast<std::uint64_t>(worker),
                            static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(substep));
  }

  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
  std::set<std::tuple<int, std::int64_t, int>> used_;
};

// Stochastic gradient stamped with its provenance, drawn from the dedicated
// (worker, epoch) stream.
inline GradientRecord stochastic_gradient(const Objective& obj, int worker, const ModelVector& model,
                                          std::int64_t epoch, SampleContext& samples, int substep = 0) {
  RngStream stream = samples.stream(worker, epoch, substep);
  Vec g = obj.stochastic_gradient(worker, model.values, stream);
  return GradientRecord(std::move(g), model.version, epoch, worker);
}

}  // namespace dudesim
