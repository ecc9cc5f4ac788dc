#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>

#include "gpfuse/errors.hpp"
#include "gpfuse/likelihood.hpp"

namespace gpfuse {

/// One supervised partition: inputs X (N x p), outputs y (N) and the
/// observation model the outputs follow. Bernoulli outputs must be 0/1.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Likelihood likelihood;

  Dataset() = default;
  Dataset(Eigen::MatrixXd X_, Eigen::VectorXd y_, Likelihood lik)
      : X(std::move(X_)), y(std::move(y_)), likelihood(lik) {
    validate();
  }

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index input_dim() const { return X.cols(); }

  void validate() const {
    if (X.rows() != y.size()) {
      throw ShapeError("Dataset: X has " + std::to_string(X.rows()) +
                       " rows but y has " + std::to_string(y.size()));
    }
    if (likelihood.kind == LikKind::Bernoulli) {
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) {
          throw std::invalid_argument(
              "Dataset: Bernoulli outputs must be 0 or 1, got " +
              std::to_string(y[i]));
        }
      }
    }
  }
};

}  // namespace gpfuse
