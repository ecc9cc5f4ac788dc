#pragma once

#include <Eigen/Core>
#include <string>

#include "gpfuse/errors.hpp"

namespace gpfuse {

/// Gaussian variational distribution q(u) = N(mu, S) over the function values
/// at the inducing inputs Z, with S factored as L * L^T and L kept
/// lower-triangular. Canonical form has a strictly positive diagonal; the
/// flip is free because S is invariant under column sign changes of L.
struct GaussianVariational {
  Eigen::MatrixXd Z;   // M x p inducing inputs
  Eigen::VectorXd mu;  // M
  Eigen::MatrixXd L;   // M x M lower-triangular

  Eigen::Index num_inducing() const { return Z.rows(); }
  Eigen::Index input_dim() const { return Z.cols(); }

  Eigen::MatrixXd covariance() const { return L * L.transpose(); }

  /// Flip column signs so every diagonal entry of L is positive.
  void canonicalize() {
    for (Eigen::Index j = 0; j < L.cols(); ++j) {
      if (L(j, j) < 0.0) L.col(j) = -L.col(j);
    }
  }

  void validate() const {
    const Eigen::Index m = Z.rows();
    if (m < 1) throw std::invalid_argument("GaussianVariational: M must be >= 1");
    if (mu.size() != m || L.rows() != m || L.cols() != m) {
      throw ShapeError("GaussianVariational: inconsistent Z/mu/L shapes");
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!(L(j, j) > 0.0)) {
        throw std::invalid_argument(
            "GaussianVariational: L diagonal must be positive (entry " +
            std::to_string(j) + ")");
      }
      for (Eigen::Index c = j + 1; c < m; ++c) {
        if (L(j, c) != 0.0) {
          throw std::invalid_argument(
              "GaussianVariational: L must be lower-triangular");
        }
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = i + 1; j < m; ++j) {
        if ((Z.row(i) - Z.row(j)).lpNorm<Eigen::Infinity>() <= 1e-10) {
          throw std::invalid_argument(
              "GaussianVariational: inducing inputs " + std::to_string(i) +
              " and " + std::to_string(j) + " coincide");
        }
      }
    }
  }
};

}  // namespace gpfuse
