#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpfuse/errors.hpp"

namespace gpfuse {

/// Settings of the variational EM loop: inner iteration counts, the fixed
/// per-parameter learning rates and the stopping rule, plus the LBFGS switch
/// used for baseline fits.
struct VEMConfig {
  int ve_steps = 30;
  int vm_steps = 10;
  double eta_mu = 1e-3;
  double eta_L = 1e-6;
  double eta_psi = 1e-8;
  double eta_Z = 1e-8;
  double tol = 1e-6;  // relative change of the objective between outer iters
  int max_outer = 500;
  enum class Optimizer { Vem, Lbfgs } optimizer = Optimizer::Vem;
  double lbfgs_lr = 1e-2;
  int lbfgs_max_iter = 50;
  // Abort (with diagnostics) when the trace decreases beyond the slack.
  bool enforce_ascent = false;
  // Optional initial hyperparameter values; fitters fall back to data-driven
  // defaults when absent.
  std::optional<double> init_lengthscale;
  std::optional<double> init_amplitude_var;
  std::optional<double> init_noise_var;

  void validate() const {
    if (ve_steps < 1 || vm_steps < 1) {
      throw std::invalid_argument("VEMConfig: step counts must be >= 1");
    }
    if (!(eta_mu >= 0) || !(eta_L >= 0) || !(eta_psi >= 0) || !(eta_Z >= 0)) {
      throw std::invalid_argument("VEMConfig: learning rates must be >= 0");
    }
    if (!(tol >= 0) || max_outer < 1) {
      throw std::invalid_argument("VEMConfig: bad tol / max_outer");
    }
  }
};

inline VEMConfig vem_config_from_json(const nlohmann::json& j) {
  VEMConfig c;
  if (j.contains("ve_steps")) c.ve_steps = j.at("ve_steps").get<int>();
  if (j.contains("vm_steps")) c.vm_steps = j.at("vm_steps").get<int>();
  if (j.contains("eta_mu")) c.eta_mu = j.at("eta_mu").get<double>();
  if (j.contains("eta_L")) c.eta_L = j.at("eta_L").get<double>();
  if (j.contains("eta_psi")) c.eta_psi = j.at("eta_psi").get<double>();
  if (j.contains("eta_Z")) c.eta_Z = j.at("eta_Z").get<double>();
  if (j.contains("tol")) c.tol = j.at("tol").get<double>();
  if (j.contains("max_outer")) c.max_outer = j.at("max_outer").get<int>();
  if (j.contains("optimizer")) {
    const std::string opt = j.at("optimizer").get<std::string>();
    if (opt == "vem") {
      c.optimizer = VEMConfig::Optimizer::Vem;
    } else if (opt == "lbfgs") {
      c.optimizer = VEMConfig::Optimizer::Lbfgs;
    } else {
      throw std::invalid_argument("VEMConfig: unknown optimizer '" + opt + "'");
    }
  }
  if (j.contains("lbfgs_lr")) c.lbfgs_lr = j.at("lbfgs_lr").get<double>();
  if (j.contains("lbfgs_max_iter")) {
    c.lbfgs_max_iter = j.at("lbfgs_max_iter").get<int>();
  }
  if (j.contains("enforce_ascent")) {
    c.enforce_ascent = j.at("enforce_ascent").get<bool>();
  }
  if (j.contains("init")) {
    const auto& init = j.at("init");
    if (init.contains("lengthscale")) {
      c.init_lengthscale = init.at("lengthscale").get<double>();
    }
    if (init.contains("amplitude_var")) {
      c.init_amplitude_var = init.at("amplitude_var").get<double>();
    }
    if (init.contains("noise_var")) {
      c.init_noise_var = init.at("noise_var").get<double>();
    }
  }
  c.validate();
  return c;
}

inline nlohmann::json vem_config_to_json(const VEMConfig& c) {
  nlohmann::json j;
  j["ve_steps"] = c.ve_steps;
  j["vm_steps"] = c.vm_steps;
  j["eta_mu"] = c.eta_mu;
  j["eta_L"] = c.eta_L;
  j["eta_psi"] = c.eta_psi;
  j["eta_Z"] = c.eta_Z;
  j["tol"] = c.tol;
  j["max_outer"] = c.max_outer;
  j["optimizer"] =
      c.optimizer == VEMConfig::Optimizer::Vem ? "vem" : "lbfgs";
  j["lbfgs_lr"] = c.lbfgs_lr;
  j["lbfgs_max_iter"] = c.lbfgs_max_iter;
  j["enforce_ascent"] = c.enforce_ascent;
  nlohmann::json init;
  if (c.init_lengthscale) init["lengthscale"] = *c.init_lengthscale;
  if (c.init_amplitude_var) init["amplitude_var"] = *c.init_amplitude_var;
  if (c.init_noise_var) init["noise_var"] = *c.init_noise_var;
  if (!init.empty()) j["init"] = std::move(init);
  return j;
}

/// Parameter blocks of the VEM loop. A problem may leave any block empty.
enum class ParamGroup { Mu = 0, Chol = 1, Hyper = 2, Inducing = 3 };
inline constexpr std::array<ParamGroup, 4> kParamGroups = {
    ParamGroup::Mu, ParamGroup::Chol, ParamGroup::Hyper, ParamGroup::Inducing};

struct VemGradient {
  Eigen::VectorXd mu, chol, hyper, inducing;

  Eigen::VectorXd& of(ParamGroup g) {
    switch (g) {
      case ParamGroup::Mu: return mu;
      case ParamGroup::Chol: return chol;
      case ParamGroup::Hyper: return hyper;
      default: return inducing;
    }
  }
};

/// Objective + gradient provider driven by run_vem / lbfgs_fit. Implementors
/// own the current parameter state; get/set use flat vectors per group.
class VemProblem {
 public:
  virtual ~VemProblem() = default;
  virtual double objective() = 0;
  /// Gradients of the requested groups at the current parameters.
  virtual VemGradient gradients(bool mu, bool chol, bool hyper,
                                bool inducing) = 0;
  virtual Eigen::VectorXd get(ParamGroup g) const = 0;
  virtual void set(ParamGroup g, const Eigen::VectorXd& value) = 0;
};

struct VemResult {
  std::vector<double> trace;  // objective once per outer iteration
  double best_objective = 0.0;
  int outer_iterations = 0;
  bool converged = false;
};

namespace detail {

inline std::array<Eigen::VectorXd, 4> snapshot(const VemProblem& p) {
  return {p.get(ParamGroup::Mu), p.get(ParamGroup::Chol),
          p.get(ParamGroup::Hyper), p.get(ParamGroup::Inducing)};
}

inline void restore(VemProblem& p, const std::array<Eigen::VectorXd, 4>& s) {
  p.set(ParamGroup::Mu, s[0]);
  p.set(ParamGroup::Chol, s[1]);
  p.set(ParamGroup::Hyper, s[2]);
  p.set(ParamGroup::Inducing, s[3]);
}

inline void step(VemProblem& p, ParamGroup g, double eta,
                 const Eigen::VectorXd& grad) {
  if (grad.size() == 0 || eta == 0.0) return;
  p.set(g, p.get(g) + eta * grad);
}

}  // namespace detail

/// Evaluates the objective, mapping kernel-factorization failures (a step
/// left the feasible region) to -inf instead of an exception.
inline double guarded_objective(VemProblem& problem) {
  try {
    return problem.objective();
  } catch (const NotPositiveDefiniteError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

/// Coordinate-wise gradient-ascent EM: per outer iteration a VE block
/// (ve_steps simultaneous steps on mu and L), a VM block on the
/// hyperparameters and a VM block on the inducing inputs, until the relative
/// objective change drops below tol or max_outer is hit. Returns the full
/// trace; the problem is left at the best-seen parameters.
inline VemResult run_vem(VemProblem& problem, const VEMConfig& config) {
  config.validate();
  VemResult result;
  double value = problem.objective();
  if (!std::isfinite(value)) {
    throw DivergenceError("run_vem: objective not finite at initial point",
                          {value});
  }
  result.trace.push_back(value);
  auto best = detail::snapshot(problem);
  result.best_objective = value;

  for (int outer = 1; outer <= config.max_outer; ++outer) {
    try {
      for (int j = 0; j < config.ve_steps; ++j) {
        VemGradient g = problem.gradients(true, true, false, false);
        detail::step(problem, ParamGroup::Mu, config.eta_mu, g.mu);
        detail::step(problem, ParamGroup::Chol, config.eta_L, g.chol);
      }
      for (int j = 0; j < config.vm_steps; ++j) {
        VemGradient g = problem.gradients(false, false, true, false);
        detail::step(problem, ParamGroup::Hyper, config.eta_psi, g.hyper);
      }
      for (int j = 0; j < config.vm_steps; ++j) {
        VemGradient g = problem.gradients(false, false, false, true);
        detail::step(problem, ParamGroup::Inducing, config.eta_Z, g.inducing);
      }
    } catch (const NotPositiveDefiniteError& e) {
      detail::restore(problem, best);
      throw DivergenceError(
          "run_vem: parameters left the feasible region at outer iteration " +
              std::to_string(outer) + " (" + e.what() + "); last finite value " +
              std::to_string(result.best_objective),
          result.trace);
    }
    const double prev = value;
    value = guarded_objective(problem);
    result.outer_iterations = outer;
    if (!std::isfinite(value)) {
      detail::restore(problem, best);
      throw DivergenceError(
          "run_vem: objective diverged at outer iteration " +
              std::to_string(outer) + "; last finite value " +
              std::to_string(result.best_objective),
          result.trace);
    }
    result.trace.push_back(value);
    if (value > result.best_objective) {
      result.best_objective = value;
      best = detail::snapshot(problem);
    }
    const double slack = 1e-8 * (1.0 + std::abs(prev));
    if (config.enforce_ascent && value < prev - slack) {
      detail::restore(problem, best);
      throw DivergenceError(
          "run_vem: objective decreased from " + std::to_string(prev) +
              " to " + std::to_string(value) + " at outer iteration " +
              std::to_string(outer),
          result.trace);
    }
    if (std::abs(value - prev) <= config.tol * (1.0 + std::abs(prev))) {
      result.converged = true;
      break;
    }
  }
  detail::restore(problem, best);
  return result;
}

/// LBFGS over all parameter blocks jointly (two-loop recursion, history 10,
/// backtracking line search starting at lbfgs_lr). Used for the baseline
/// local fits; maximizes the provider's objective.
inline VemResult lbfgs_fit(VemProblem& problem, const VEMConfig& config) {
  config.validate();
  const auto groups_of = [&](const VemProblem& p) {
    std::vector<ParamGroup> groups;
    for (ParamGroup g : kParamGroups) {
      if (p.get(g).size() > 0) groups.push_back(g);
    }
    return groups;
  };
  const std::vector<ParamGroup> groups = groups_of(problem);

  const auto flatten = [&](const VemProblem& p) {
    Eigen::Index n = 0;
    for (ParamGroup g : groups) n += p.get(g).size();
    Eigen::VectorXd x(n);
    Eigen::Index off = 0;
    for (ParamGroup g : groups) {
      const Eigen::VectorXd v = p.get(g);
      x.segment(off, v.size()) = v;
      off += v.size();
    }
    return x;
  };
  const auto unflatten = [&](VemProblem& p, const Eigen::VectorXd& x) {
    Eigen::Index off = 0;
    for (ParamGroup g : groups) {
      const Eigen::Index n = p.get(g).size();
      p.set(g, x.segment(off, n));
      off += n;
    }
  };
  const auto grad_at = [&](VemProblem& p) {
    VemGradient g = p.gradients(true, true, true, true);
    Eigen::Index n = 0;
    for (ParamGroup gr : groups) n += g.of(gr).size();
    Eigen::VectorXd out(n);
    Eigen::Index off = 0;
    for (ParamGroup gr : groups) {
      out.segment(off, g.of(gr).size()) = g.of(gr);
      off += g.of(gr).size();
    }
    return out;
  };

  VemResult result;
  Eigen::VectorXd x = flatten(problem);
  double value = problem.objective();
  if (!std::isfinite(value)) {
    throw DivergenceError("lbfgs_fit: objective not finite at initial point",
                          {value});
  }
  result.trace.push_back(value);
  result.best_objective = value;
  Eigen::VectorXd best_x = x;

  Eigen::VectorXd grad = grad_at(problem);
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  const int history = 10;

  for (int iter = 1; iter <= config.lbfgs_max_iter; ++iter) {
    // Two-loop recursion on the ascent direction.
    Eigen::VectorXd q = grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha[i] = rho * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma = s_hist.back().dot(y_hist.back()) /
                           y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd direction = q;
    if (direction.dot(grad) <= 0.0) direction = grad;  // fall back to ascent
    if (s_hist.empty()) {
      // No curvature information yet: take a conservatively scaled first step.
      direction /= std::max(1.0, direction.lpNorm<Eigen::Infinity>());
    }

    // Backtracking line search from the configured rate.
    double t = config.lbfgs_lr;
    double new_value = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int back = 0; back < 40; ++back) {
      x_new = x + t * direction;
      unflatten(problem, x_new);
      new_value = guarded_objective(problem);
      if (std::isfinite(new_value) &&
          new_value >= value + 1e-4 * t * grad.dot(direction)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      unflatten(problem, x);
      break;
    }
    Eigen::VectorXd grad_new = grad_at(problem);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = grad - grad_new;  // ascent: flip sign pairing
    if (yv.dot(s) > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      if (static_cast<int>(s_hist.size()) > history) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    x = x_new;
    grad = std::move(grad_new);
    const double prev = value;
    value = new_value;
    result.trace.push_back(value);
    result.outer_iterations = iter;
    if (value > result.best_objective) {
      result.best_objective = value;
      best_x = x;
    }
    if (std::abs(value - prev) <= config.tol * (1.0 + std::abs(prev))) {
      result.converged = true;
      break;
    }
  }
  unflatten(problem, best_x);
  return result;
}

/// Dispatch on the configured optimizer.
inline VemResult fit(VemProblem& problem, const VEMConfig& config) {
  return config.optimizer == VEMConfig::Optimizer::Lbfgs
             ? lbfgs_fit(problem, config)
             : run_vem(problem, config);
}

}  // namespace gpfuse
