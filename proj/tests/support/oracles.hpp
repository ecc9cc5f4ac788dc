// Independent reference implementations the test suites check against:
// Monte-Carlo estimators, central finite differences, a cofactor-expansion
// determinant and the dense GP log marginal. Deliberately brute-force and
// kept apart from the library code paths they validate.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gpfuse/kernel.hpp"
#include "gpfuse/likelihood.hpp"
#include "gpfuse/linalg.hpp"

namespace oracles {

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;

  bool within(double reference, double sigmas) const {
    return std::abs(mean - reference) <= sigmas * std_error;
  }
};

/// Sample mean and its standard error for a scalar function of draws.
inline MonteCarloEstimate mc_estimate(const std::function<double()>& draw,
                                      int n) {
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = draw();
    sum += v;
    sumsq += v * v;
  }
  MonteCarloEstimate est;
  est.mean = sum / n;
  const double var = std::max(sumsq / n - est.mean * est.mean, 0.0);
  est.std_error = std::sqrt(var / n);
  return est;
}

/// Central finite difference of a scalar function of a parameter vector.
inline double central_fd(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& x, Eigen::Index i,
                         double step = 1e-5) {
  Eigen::VectorXd hi = x, lo = x;
  hi[i] += step;
  lo[i] -= step;
  return (f(hi) - f(lo)) / (2.0 * step);
}

inline double fd_relative_error(double analytic, double fd) {
  return std::abs(analytic - fd) / (std::abs(fd) + 1e-8);
}

/// Cofactor-expansion determinant; exponential cost, fine for n <= 7.
inline double brute_determinant(const Eigen::MatrixXd& A) {
  const Eigen::Index n = A.rows();
  if (n == 1) return A(0, 0);
  double det = 0.0;
  double sign = 1.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::MatrixXd minor(n - 1, n - 1);
    for (Eigen::Index r = 1; r < n; ++r) {
      Eigen::Index cc = 0;
      for (Eigen::Index c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, cc++) = A(r, c);
      }
    }
    det += sign * A(0, j) * brute_determinant(minor);
    sign = -sign;
  }
  return det;
}

/// log N(y | 0, K(X,X) + noise I) evaluated densely; the exact marginal
/// likelihood a variational bound may never exceed.
inline double dense_gp_log_marginal(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y,
                                    const gpfuse::KernelParams& psi,
                                    double noise_var) {
  Eigen::MatrixXd K = gpfuse::kernel_matrix(X, X, psi);
  K.diagonal().array() += noise_var;
  const Eigen::LLT<Eigen::MatrixXd> llt(K);
  const Eigen::VectorXd alpha = llt.solve(y);
  const double logdet =
      2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * y.dot(alpha) - 0.5 * logdet -
         0.5 * y.size() * std::log(gpfuse::kTwoPi);
}

/// Multivariate normal sampler from a lower-triangular factor.
class MvnSampler {
 public:
  MvnSampler(Eigen::VectorXd mean, Eigen::MatrixXd chol_lower,
             std::uint64_t seed)
      : mean_(std::move(mean)), L_(std::move(chol_lower)), rng_(seed) {}

  Eigen::VectorXd operator()() {
    Eigen::VectorXd z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal_(rng_);
    return mean_ + L_ * z;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd L_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

inline double mvn_log_density(const Eigen::VectorXd& x,
                              const Eigen::VectorXd& mean,
                              const gpfuse::PsdFactor& factor) {
  const Eigen::VectorXd diff = x - mean;
  const double quad = diff.dot(factor.solve(diff));
  return -0.5 * (quad + factor.logdet() +
                 mean.size() * std::log(gpfuse::kTwoPi));
}

/// Random SPD matrix A = G G^T + eps I with entries from a seeded stream.
inline Eigen::MatrixXd random_spd(Eigen::Index n, std::mt19937_64& rng,
                                  double eps = 0.5) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd G(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) G(i, j) = normal(rng);
  Eigen::MatrixXd A = G * G.transpose();
  A.diagonal().array() += eps;
  return A;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c,
                                     std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = scale * normal(rng);
  return M;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * normal(rng);
  return v;
}

}  // namespace oracles
