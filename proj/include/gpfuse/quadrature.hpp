#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gpfuse {

/// Gauss-Hermite rule for the physicists' weight exp(-x^2): the weights sum
/// to sqrt(pi) and the nodes are symmetric about zero.
struct QuadratureRule {
  int order = 0;
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

/// Nodes and weights of the order-S Gauss-Hermite rule, computed by Newton
/// iteration on the normalized three-term recurrence. Nodes are returned in
/// ascending order and mirrored exactly about zero.
inline QuadratureRule gh_rule(int order) {
  if (order < 1 || order > 100) {
    throw std::invalid_argument("gh_rule: order " + std::to_string(order) +
                                " outside [1, 100]");
  }
  const int n = order;
  const double pim4 = 0.751125544464942483;  // pi^{-1/4}
  const int half = (n + 1) / 2;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  double z = 0.0;
  for (int i = 0; i < half; ++i) {
    // Initial guesses from Numerical-Recipes-style asymptotics, descending
    // from the largest root.
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) -
          1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    double pp = 0.0;
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-14 * (1.0 + std::abs(z))) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw std::runtime_error("gh_rule: Newton iteration failed");
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  if (n % 2 == 1) x[half - 1] = 0.0;  // center node is exact
  // Ascending node order.
  QuadratureRule rule;
  rule.order = n;
  rule.nodes = x.reverse();
  rule.weights = w.reverse();
  return rule;
}

}  // namespace gpfuse
