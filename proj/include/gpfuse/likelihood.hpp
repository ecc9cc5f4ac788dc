#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gpfuse/quadrature.hpp"

namespace gpfuse {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;
inline constexpr double kSqrtPi = 1.7724538509055160272981674833411;
/// Probabilities are clamped to [kDensityFloor, 1 - kDensityFloor] before
/// taking logs so NLPD stays finite under confident wrong predictions.
inline constexpr double kDensityFloor = 1e-12;

inline double sigmoid(double f) {
  if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

inline double softplus(double f) {
  return std::max(f, 0.0) + std::log1p(std::exp(-std::abs(f)));
}

enum class LikKind { Gaussian, Bernoulli };

/// Observation model attached to one dataset / local task. The Gaussian
/// variant carries a learned noise variance (stored as a log); the Bernoulli
/// variant uses the fixed sigmoid link.
struct Likelihood {
  LikKind kind = LikKind::Gaussian;
  double log_noise_var = 0.0;

  static Likelihood gaussian(double noise_var) {
    if (!(noise_var > 0.0)) {
      throw std::invalid_argument("Likelihood: noise variance must be > 0");
    }
    return Likelihood{LikKind::Gaussian, std::log(noise_var)};
  }
  static Likelihood bernoulli() { return Likelihood{LikKind::Bernoulli, 0.0}; }

  double noise_var() const { return std::exp(log_noise_var); }
};

/// log p(y | f) for a single point.
inline double log_density(const Likelihood& lik, double y, double f) {
  if (lik.kind == LikKind::Gaussian) {
    const double s2 = lik.noise_var();
    const double r = y - f;
    return -0.5 * std::log(kTwoPi * s2) - r * r / (2.0 * s2);
  }
  // y in {0, 1}: log Ber(y | sigmoid(f)) = y*f - log(1 + e^f)
  return y * f - softplus(f);
}

namespace detail {
inline void check_variance(double v) {
  if (v < 0.0 || !std::isfinite(v)) {
    throw std::domain_error("expected variance must be >= 0, got " +
                            std::to_string(v));
  }
}
}  // namespace detail

/// E_{f ~ N(m, v)}[log p(y | f)], approximated with Gauss-Hermite quadrature:
///   (1/sqrt(pi)) * sum_s w_s log p(y | sqrt(2 v) f_s + m).
/// Used directly for Bernoulli outputs and as a cross-check of the analytic
/// Gaussian path.
inline double expected_log_lik_quadrature(double y, double m, double v,
                                          const Likelihood& lik,
                                          const QuadratureRule& rule) {
  detail::check_variance(v);
  if (v == 0.0) return log_density(lik, y, m);
  const double scale = std::sqrt(2.0 * v);
  double acc = 0.0;
  for (int s = 0; s < rule.order; ++s) {
    acc += rule.weights[s] * log_density(lik, y, scale * rule.nodes[s] + m);
  }
  return acc / kSqrtPi;
}

/// E_{f ~ N(m, v)}[log p(y | f)]. Gaussian expectations are analytic
/// (exact and cheaper than quadrature), Bernoulli ones use the rule.
inline double expected_log_lik(double y, double m, double v,
                               const Likelihood& lik,
                               const QuadratureRule& rule) {
  detail::check_variance(v);
  if (lik.kind == LikKind::Gaussian) {
    const double s2 = lik.noise_var();
    const double r = y - m;
    return -0.5 * std::log(kTwoPi * s2) - (r * r + v) / (2.0 * s2);
  }
  return expected_log_lik_quadrature(y, m, v, lik, rule);
}

/// expected_log_lik plus its partial derivatives, for the bound gradients.
/// d_log_noise is the derivative in log sigma_n^2 (zero for Bernoulli).
struct ExpectedLogLik {
  double value = 0.0;
  double d_mean = 0.0;
  double d_var = 0.0;
  double d_log_noise = 0.0;
};

inline ExpectedLogLik expected_log_lik_grad(double y, double m, double v,
                                            const Likelihood& lik,
                                            const QuadratureRule& rule) {
  detail::check_variance(v);
  ExpectedLogLik out;
  if (lik.kind == LikKind::Gaussian) {
    const double s2 = lik.noise_var();
    const double r = y - m;
    out.value = -0.5 * std::log(kTwoPi * s2) - (r * r + v) / (2.0 * s2);
    out.d_mean = r / s2;
    out.d_var = -0.5 / s2;
    out.d_log_noise = -0.5 + (r * r + v) / (2.0 * s2);
    return out;
  }
  if (v == 0.0) {
    out.value = log_density(lik, y, m);
    out.d_mean = y - sigmoid(m);
    out.d_var = 0.0;  // one-sided limit not needed by the fitters
    return out;
  }
  const double scale = std::sqrt(2.0 * v);
  double acc = 0.0, acc_m = 0.0, acc_v = 0.0;
  for (int s = 0; s < rule.order; ++s) {
    const double f = scale * rule.nodes[s] + m;
    const double dll = y - sigmoid(f);  // d log Ber / d f
    acc += rule.weights[s] * (y * f - softplus(f));
    acc_m += rule.weights[s] * dll;
    acc_v += rule.weights[s] * dll * rule.nodes[s];
  }
  out.value = acc / kSqrtPi;
  out.d_mean = acc_m / kSqrtPi;
  out.d_var = acc_v / (kSqrtPi * scale);
  return out;
}

/// p(y | m, v) = int p(y | f) N(f | m, v) df. Gaussian: the Normal density
/// of y with variance v + sigma_n^2; Bernoulli: quadrature over the sigmoid,
/// clamped away from {0, 1}.
inline double predictive_density(double y, double m, double v,
                                 const Likelihood& lik,
                                 const QuadratureRule& rule) {
  detail::check_variance(v);
  if (lik.kind == LikKind::Gaussian) {
    const double var = v + lik.noise_var();
    const double r = y - m;
    return std::exp(-0.5 * r * r / var) / std::sqrt(kTwoPi * var);
  }
  double p1;
  if (v == 0.0) {
    p1 = sigmoid(m);
  } else {
    const double scale = std::sqrt(2.0 * v);
    double acc = 0.0;
    for (int s = 0; s < rule.order; ++s) {
      acc += rule.weights[s] * sigmoid(scale * rule.nodes[s] + m);
    }
    p1 = acc / kSqrtPi;
  }
  p1 = std::clamp(p1, kDensityFloor, 1.0 - kDensityFloor);
  return (y > 0.5) ? p1 : 1.0 - p1;
}

/// log p(y | m, v); analytic in the Gaussian case so that extreme residuals
/// keep a finite, exact log-density.
inline double log_predictive_density(double y, double m, double v,
                                     const Likelihood& lik,
                                     const QuadratureRule& rule) {
  detail::check_variance(v);
  if (lik.kind == LikKind::Gaussian) {
    const double var = v + lik.noise_var();
    const double r = y - m;
    return -0.5 * std::log(kTwoPi * var) - 0.5 * r * r / var;
  }
  return std::log(predictive_density(y, m, v, lik, rule));
}

}  // namespace gpfuse
