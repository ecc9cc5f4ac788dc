#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>

#include <json.hpp>

#include "gpfuse/errors.hpp"
#include "gpfuse/likelihood.hpp"

namespace gpfuse {

/// Test-set performance: negative log-predictive density (summed and
/// per-point), root mean square error and mean absolute error of the
/// predictive mean against the supplied truth values.
struct MetricsReport {
  double nlpd_sum = 0.0;
  double nlpd_mean = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  Eigen::Index n_test = 0;
};

inline MetricsReport metrics(const Eigen::VectorXd& pred_mean,
                             const Eigen::VectorXd& pred_var,
                             const Eigen::VectorXd& y,
                             const Eigen::VectorXd& truth,
                             const Likelihood& lik,
                             const QuadratureRule& rule) {
  const Eigen::Index n = pred_mean.size();
  if (pred_var.size() != n || y.size() != n || truth.size() != n) {
    throw ShapeError("metrics: input lengths differ");
  }
  if (n == 0) throw std::invalid_argument("metrics: empty test set");
  MetricsReport report;
  report.n_test = n;
  double sq = 0.0, abs = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    report.nlpd_sum -=
        log_predictive_density(y[i], pred_mean[i], pred_var[i], lik, rule);
    const double err = pred_mean[i] - truth[i];
    sq += err * err;
    abs += std::abs(err);
  }
  report.nlpd_mean = report.nlpd_sum / static_cast<double>(n);
  report.rmse = std::sqrt(sq / static_cast<double>(n));
  report.mae = abs / static_cast<double>(n);
  return report;
}

inline nlohmann::json metrics_to_json(const MetricsReport& report) {
  return nlohmann::json{{"nlpd_sum", report.nlpd_sum},
                        {"nlpd_mean", report.nlpd_mean},
                        {"rmse", report.rmse},
                        {"mae", report.mae},
                        {"n_test", report.n_test}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport report;
  report.nlpd_sum = j.at("nlpd_sum").get<double>();
  report.nlpd_mean = j.at("nlpd_mean").get<double>();
  report.rmse = j.at("rmse").get<double>();
  report.mae = j.at("mae").get<double>();
  report.n_test = j.at("n_test").get<Eigen::Index>();
  return report;
}

}  // namespace gpfuse
