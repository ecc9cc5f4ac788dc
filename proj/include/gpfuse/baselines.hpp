#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpfuse {

/// One local model's Gaussian prediction at a test point, together with the
/// prior variance of that model at the same point. Predictions combine in
/// y-space (latent variance plus the expert's noise), so heterogeneous noise
/// levels stay with their expert.
struct ExpertPrediction {
  double mean = 0.0;
  double var = 0.0;
  double prior_var = 0.0;
};

enum class CombineMethod { Poe, Gpoe, Bcm, Rbcm };

inline CombineMethod combine_method_from_string(const std::string& name) {
  if (name == "poe") return CombineMethod::Poe;
  if (name == "gpoe") return CombineMethod::Gpoe;
  if (name == "bcm") return CombineMethod::Bcm;
  if (name == "rbcm") return CombineMethod::Rbcm;
  throw std::invalid_argument("unknown baseline method '" + name + "'");
}

struct CombinedPrediction {
  double mean = 0.0;
  double var = 0.0;
  // BCM/RBCM precisions can turn non-positive; such points are flagged
  // instead of reported (the NLPD column shows up as NA).
  bool valid = true;
};

/// Precision-weighted fusion of independent Gaussian experts:
///   PoE:   v^-1 = sum v_k^-1
///   GPoE:  v^-1 = sum (1/K) v_k^-1
///   BCM:   v^-1 = sum v_k^-1 - (K-1) v_prior^-1
///   RBCM:  v^-1 = sum b_k v_k^-1 + (1 - sum b_k) v_prior^-1,
///          b_k = (log v_prior_k - log v_k) / 2
/// with the mean m = v * sum b_k v_k^-1 m_k (b_k = 1 for PoE/BCM). A single
/// expert passes through unchanged; there is nothing to combine.
inline CombinedPrediction combine(CombineMethod method,
                                  const std::vector<ExpertPrediction>& experts) {
  if (experts.empty()) {
    throw std::invalid_argument("combine: need at least one expert");
  }
  for (const ExpertPrediction& e : experts) {
    if (!(e.var > 0.0) || !(e.prior_var > 0.0)) {
      throw std::invalid_argument(
          "combine: expert variances must be positive");
    }
  }
  if (experts.size() == 1) {
    return CombinedPrediction{experts[0].mean, experts[0].var, true};
  }
  const double K = static_cast<double>(experts.size());
  double mean_prior_prec = 0.0;
  for (const ExpertPrediction& e : experts) mean_prior_prec += e.prior_var;
  mean_prior_prec = K / mean_prior_prec;  // 1 / mean prior variance

  double precision = 0.0;
  double weighted_mean = 0.0;
  double beta_sum = 0.0;
  for (const ExpertPrediction& e : experts) {
    double beta = 1.0;
    switch (method) {
      case CombineMethod::Poe:
      case CombineMethod::Bcm:
        beta = 1.0;
        break;
      case CombineMethod::Gpoe:
        beta = 1.0 / K;
        break;
      case CombineMethod::Rbcm:
        beta = 0.5 * (std::log(e.prior_var) - std::log(e.var));
        break;
    }
    precision += beta / e.var;
    weighted_mean += beta * e.mean / e.var;
    beta_sum += beta;
  }
  if (method == CombineMethod::Bcm) {
    precision -= (K - 1.0) * mean_prior_prec;
  } else if (method == CombineMethod::Rbcm) {
    precision += (1.0 - beta_sum) * mean_prior_prec;
  }
  CombinedPrediction out;
  out.valid = precision > 0.0;
  if (precision != 0.0) {
    // The point estimate survives a non-positive precision (the density does
    // not); error metrics still use it, NLPD flags the point instead.
    out.var = 1.0 / precision;
    out.mean = out.var * weighted_mean;
  } else {
    out.var = std::numeric_limits<double>::infinity();
    out.mean = 0.0;
  }
  return out;
}

}  // namespace gpfuse
