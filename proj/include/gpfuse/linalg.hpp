#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <string>

#include "gpfuse/errors.hpp"

namespace gpfuse {

/// Cholesky factor of a (jittered) symmetric positive-definite matrix.
///
/// Holds the lower-triangular L with L * L^T = A + jitter * I and the jitter
/// that was actually added. Immutable once built; safe to share across
/// threads.
struct PsdFactor {
  Eigen::MatrixXd L;
  double jitter = 0.0;

  Eigen::Index dim() const { return L.rows(); }

  /// A^{-1} * B via two triangular solves. Vectors stay vectors.
  template <typename Derived>
  typename Derived::PlainObject solve(
      const Eigen::MatrixBase<Derived>& B) const {
    if (B.rows() != L.rows()) {
      throw ShapeError("PsdFactor::solve: rhs has " + std::to_string(B.rows()) +
                       " rows, factor has " + std::to_string(L.rows()));
    }
    typename Derived::PlainObject y =
        L.triangularView<Eigen::Lower>().solve(B.derived());
    return L.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  /// log det(A + jitter * I) = 2 * sum(log diag(L)).
  double logdet() const {
    return 2.0 * L.diagonal().array().log().sum();
  }

  Eigen::MatrixXd inverse() const {
    return solve(Eigen::MatrixXd::Identity(L.rows(), L.rows()));
  }
};

/// Factor A + j*I for the smallest jitter j in
/// {0, base_jitter * mean(diag A) * 10^t, t = 0..8} that admits a Cholesky
/// decomposition. Throws NotPositiveDefiniteError once the ladder is
/// exhausted or when A contains non-finite entries.
inline PsdFactor chol_psd(const Eigen::MatrixXd& A, double base_jitter = 1e-6) {
  if (A.rows() != A.cols()) {
    throw ShapeError("chol_psd: matrix is " + std::to_string(A.rows()) + "x" +
                     std::to_string(A.cols()));
  }
  if (!A.allFinite()) {
    throw NotPositiveDefiniteError("chol_psd: matrix has non-finite entries");
  }
  const double mean_diag = A.diagonal().mean();
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int t = -1; t <= 8; ++t) {
    const double jitter =
        (t < 0) ? 0.0 : base_jitter * mean_diag * std::pow(10.0, t);
    if (t >= 0 && !(jitter > 0.0)) break;  // degenerate diagonal, no ladder
    Eigen::MatrixXd Aj = A;
    Aj.diagonal().array() += jitter;
    llt.compute(Aj);
    if (llt.info() == Eigen::Success) {
      return PsdFactor{llt.matrixL(), jitter};
    }
  }
  throw NotPositiveDefiniteError(
      "chol_psd: not positive definite after jitter ladder (mean diag " +
      std::to_string(mean_diag) + ")");
}

inline Eigen::MatrixXd solve_psd(const PsdFactor& factor,
                                 const Eigen::MatrixXd& B) {
  return factor.solve(B);
}

inline double logdet(const PsdFactor& factor) { return factor.logdet(); }

/// Packed row-major storage of the lower triangle, length n(n+1)/2.
inline Eigen::VectorXd pack_lower(const Eigen::MatrixXd& L) {
  const Eigen::Index n = L.rows();
  Eigen::VectorXd out(n * (n + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) out[k++] = L(i, j);
  return out;
}

inline Eigen::MatrixXd unpack_lower(const Eigen::VectorXd& packed,
                                    Eigen::Index n) {
  if (packed.size() != n * (n + 1) / 2) {
    throw ShapeError("unpack_lower: packed size " +
                     std::to_string(packed.size()) + " does not match n=" +
                     std::to_string(n));
  }
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) L(i, j) = packed[k++];
  return L;
}

}  // namespace gpfuse
