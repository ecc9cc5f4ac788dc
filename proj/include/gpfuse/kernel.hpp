#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "gpfuse/errors.hpp"

namespace gpfuse {

/// Isotropic squared-exponential kernel hyperparameters.
///
/// k(x, x') = amplitude^2 * exp(-||x - x'||^2 / (2 * lengthscale^2))
///
/// Both values are stored as logs so that unconstrained gradient steps keep
/// them positive.
struct KernelParams {
  double log_lengthscale = 0.0;
  double log_amplitude = 0.0;

  static KernelParams from_values(double lengthscale, double amplitude) {
    if (!(lengthscale > 0.0) || !(amplitude > 0.0)) {
      throw std::invalid_argument(
          "KernelParams: lengthscale and amplitude must be positive");
    }
    return KernelParams{std::log(lengthscale), std::log(amplitude)};
  }

  double lengthscale() const { return std::exp(log_lengthscale); }
  double amplitude() const { return std::exp(log_amplitude); }
  double amplitude_sq() const { return std::exp(2.0 * log_amplitude); }
};

/// Dense kernel matrix with entries k(x1_i, x2_j). Symmetric with diagonal
/// exactly amplitude^2 when both arguments are the same matrix.
inline Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X1,
                                     const Eigen::MatrixXd& X2,
                                     const KernelParams& params) {
  if (X1.cols() != X2.cols()) {
    throw ShapeError("kernel_matrix: inputs have " + std::to_string(X1.cols()) +
                     " and " + std::to_string(X2.cols()) + " columns");
  }
  const double s2 = params.amplitude_sq();
  const double inv_2l2 =
      0.5 / (params.lengthscale() * params.lengthscale());
  Eigen::MatrixXd K(X1.rows(), X2.rows());
  for (Eigen::Index i = 0; i < X1.rows(); ++i) {
    for (Eigen::Index j = 0; j < X2.rows(); ++j) {
      const double d2 = (X1.row(i) - X2.row(j)).squaredNorm();
      K(i, j) = s2 * std::exp(-d2 * inv_2l2);
    }
  }
  return K;
}

/// diag of kernel_matrix(X, X); constant for a stationary kernel.
inline Eigen::VectorXd kernel_diag(Eigen::Index n, const KernelParams& params) {
  return Eigen::VectorXd::Constant(n, params.amplitude_sq());
}

/// Accumulates d(sum_{mn} G(m,n) K(m,n)) into log-hyperparameter and
/// inducing-input gradients for K = kernel_matrix(Z, Z, params) (without
/// jitter). The adjoint G need not be symmetric; both (m,n) and (n,m) slots
/// contribute to row m of dZ. Null outputs are skipped.
inline void accumulate_rbf_adjoint_self(const KernelParams& params,
                                        const Eigen::MatrixXd& Z,
                                        const Eigen::MatrixXd& K,
                                        const Eigen::MatrixXd& G,
                                        double* d_log_lengthscale,
                                        double* d_log_amplitude,
                                        Eigen::MatrixXd* dZ) {
  const double l2 = params.lengthscale() * params.lengthscale();
  const Eigen::Index m = Z.rows();
  if (d_log_amplitude) *d_log_amplitude += 2.0 * (G.cwiseProduct(K)).sum();
  if (!d_log_lengthscale && !dZ) return;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      const double gk = G(r, c) * K(r, c);
      if (d_log_lengthscale) {
        const double d2 = (Z.row(r) - Z.row(c)).squaredNorm();
        *d_log_lengthscale += gk * d2 / l2;
      }
      if (dZ) {
        // z_r appears in entries (r, c) and (c, r).
        const double w = (G(r, c) + G(c, r)) * K(r, c) / l2;
        dZ->row(r) -= w * (Z.row(r) - Z.row(c));
      }
    }
  }
}

/// Same as accumulate_rbf_adjoint_self but for the cross matrix
/// K = kernel_matrix(Z, X, params) where only the Z rows are free.
inline void accumulate_rbf_adjoint_cross(const KernelParams& params,
                                         const Eigen::MatrixXd& Z,
                                         const Eigen::MatrixXd& X,
                                         const Eigen::MatrixXd& K,
                                         const Eigen::MatrixXd& G,
                                         double* d_log_lengthscale,
                                         double* d_log_amplitude,
                                         Eigen::MatrixXd* dZ) {
  const double l2 = params.lengthscale() * params.lengthscale();
  if (d_log_amplitude) *d_log_amplitude += 2.0 * (G.cwiseProduct(K)).sum();
  if (!d_log_lengthscale && !dZ) return;
  for (Eigen::Index r = 0; r < Z.rows(); ++r) {
    for (Eigen::Index c = 0; c < X.rows(); ++c) {
      const double gk = G(r, c) * K(r, c);
      if (d_log_lengthscale) {
        const double d2 = (Z.row(r) - X.row(c)).squaredNorm();
        *d_log_lengthscale += gk * d2 / l2;
      }
      if (dZ) dZ->row(r) -= gk / l2 * (Z.row(r) - X.row(c));
    }
  }
}

}  // namespace gpfuse
