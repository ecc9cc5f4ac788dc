#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gpfuse/dataset.hpp"
#include "gpfuse/kernel.hpp"
#include "gpfuse/likelihood.hpp"
#include "gpfuse/linalg.hpp"
#include "gpfuse/local_gp.hpp"
#include "gpfuse/model.hpp"
#include "gpfuse/quadrature.hpp"
#include "gpfuse/variational.hpp"
#include "gpfuse/vem.hpp"

namespace gpfuse {

/// Which hyperparameters evaluate the cross-covariance K(Z_*, Z_k): the
/// global ones being optimized (default) or the fixed local ones each task
/// was trained against. K(Z_k, Z_k) inside the task terms always uses the
/// local hyperparameters.
enum class CrossKernel { Global, Local };

struct EnsembleOptions {
  CrossKernel cross_kernel = CrossKernel::Global;
  int jobs = 1;
  // Input dimension to assume when the dictionary is empty and no fresh data
  // is supplied.
  int input_dim_hint = 1;
};

/// The global posterior predictive evaluated at one task's inducing inputs:
///   mean  = K_{*k}^T K_{**}^{-1} mu_*
///   cov   = K_kk + K_{*k}^T K_{**}^{-1} (S_* - K_{**}) K_{**}^{-1} K_{*k}
/// It weights how well the global fit matches that local expert.
struct ContrastivePosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline ContrastivePosterior contrastive_posterior(
    const ModelRecord& task, const GaussianVariational& global_q,
    const KernelParams& global_psi,
    CrossKernel cross_kernel = CrossKernel::Global) {
  if (task.input_dim() != global_q.input_dim()) {
    throw ShapeError("contrastive_posterior: input dimensions differ");
  }
  const PsdFactor F = chol_psd(kernel_matrix(global_q.Z, global_q.Z, global_psi));
  const KernelParams& cross_psi =
      cross_kernel == CrossKernel::Global ? global_psi : task.kernel;
  const Eigen::MatrixXd R = kernel_matrix(global_q.Z, task.q.Z, cross_psi);
  const Eigen::MatrixXd A = F.solve(R);
  Eigen::MatrixXd Kkk = kernel_matrix(task.q.Z, task.q.Z, task.kernel);
  // Keep the task prior consistent with its factored form downstream.
  Kkk.diagonal().array() += chol_psd(Kkk).jitter;
  const Eigen::MatrixXd S = global_q.covariance();
  ContrastivePosterior qc;
  qc.mean = A.transpose() * global_q.mu;
  Eigen::MatrixXd proj = A.transpose() * S * A - R.transpose() * A;
  qc.cov = Kkk + 0.5 * (proj + proj.transpose());
  return qc;
}

/// <log q_k(u_k)> under the contrastive posterior (Gaussian closed form):
///   -(Tr(S_k^{-1} S_C) + (m_C - mu_k)^T S_k^{-1} (m_C - mu_k)
///     + log det(2 pi S_k)) / 2
inline double expected_log_q(const ModelRecord& task,
                             const ContrastivePosterior& qc) {
  const Eigen::Index m = task.num_inducing();
  if (qc.mean.size() != m) throw ShapeError("expected_log_q: size mismatch");
  const PsdFactor Fs{task.q.L, 0.0};
  const Eigen::VectorXd diff = qc.mean - task.q.mu;
  const double trace = Fs.solve(qc.cov).trace();
  const double quad = diff.dot(Fs.solve(diff));
  const double logdet2pi =
      static_cast<double>(m) * std::log(kTwoPi) + Fs.logdet();
  return -0.5 * (trace + quad + logdet2pi);
}

/// <log p_k(u_k)> under the contrastive posterior, with the task prior
/// N(0, K_kk) evaluated at the task's own hyperparameters.
inline double expected_log_p(const ModelRecord& task,
                             const ContrastivePosterior& qc) {
  const Eigen::Index m = task.num_inducing();
  if (qc.mean.size() != m) throw ShapeError("expected_log_p: size mismatch");
  const PsdFactor Fk =
      chol_psd(kernel_matrix(task.q.Z, task.q.Z, task.kernel));
  const double trace = Fk.solve(qc.cov).trace();
  const double quad = qc.mean.dot(Fk.solve(qc.mean));
  const double logdet2pi =
      static_cast<double>(m) * std::log(kTwoPi) + Fk.logdet();
  return -0.5 * (trace + quad + logdet2pi);
}

/// Gradient of the ensemble (or combined) bound in the global parameters.
struct EnsembleGradient {
  Eigen::VectorXd mu;
  Eigen::MatrixXd L;
  double log_lengthscale = 0.0;
  double log_amplitude = 0.0;
  double log_noise_var = 0.0;  // only when fresh Gaussian data is attached
  Eigen::MatrixXd Z;
};

/// The lower ensemble bound over a dictionary of fitted models, optionally
/// combined with a fresh dataset that has never been fitted:
///
///   L_E = sum_k E_{q_C(u_k)}[log q_k(u_k) - log p_k(u_k)]
///         (+ sum_i E_{q(f_i)}[log p(y_i | f_i)] over fresh points)
///         - KL[q(u_*) || p(u_*)]
///
/// Dictionary parameters are fixed; only the global variational parameters,
/// hyperparameters and inducing inputs move. Tasks are ordered by task id so
/// sums reduce deterministically regardless of input order or thread count.
class EnsembleObjective final : public VemProblem {
 public:
  EnsembleObjective(std::vector<ModelRecord> dictionary,
                    GaussianVariational global_init, KernelParams global_psi,
                    std::optional<Dataset> fresh_data, QuadratureRule rule,
                    EnsembleOptions options = {})
      : rule_(std::move(rule)),
        fresh_(std::move(fresh_data)),
        options_(options),
        Z_(std::move(global_init.Z)),
        mu_(std::move(global_init.mu)),
        L_(std::move(global_init.L)),
        psi_(global_psi) {
    if (fresh_.has_value()) {
      fresh_->validate();
      fresh_lik_ = fresh_->likelihood;
    }
    std::sort(dictionary.begin(), dictionary.end(),
              [](const ModelRecord& a, const ModelRecord& b) {
                if (a.meta.task_id != b.meta.task_id) {
                  return a.meta.task_id < b.meta.task_id;
                }
                // Deterministic tie-break for duplicated ids.
                return to_json(a).dump() < to_json(b).dump();
              });
    tasks_.reserve(dictionary.size());
    for (ModelRecord& model : dictionary) {
      model.validate();
      if (model.input_dim() != Z_.cols()) {
        throw ShapeError("EnsembleObjective: task '" + model.meta.task_id +
                         "' has input dimension " +
                         std::to_string(model.input_dim()) + ", expected " +
                         std::to_string(Z_.cols()));
      }
      tasks_.push_back(TaskConstants::build(std::move(model)));
    }
  }

  double objective() override {
    refresh();
    double bound = 0.0;
    std::vector<double> terms(tasks_.size());
    parallel_tasks([&](std::size_t k) { terms[k] = task_term(k).value; });
    for (double t : terms) bound += t;
    if (fresh_.has_value()) {
      bound += detail::data_term_value(fresh_proj_, *fresh_, fresh_lik_, mu_,
                                       L_, rule_);
    }
    return bound - kl_gauss(mu_, L_, state_.F);
  }

  VemGradient gradients(bool mu, bool chol, bool hyper,
                        bool inducing) override {
    refresh();
    const Eigen::Index m = Z_.rows();
    const Eigen::MatrixXd S = L_ * L_.transpose();
    const Eigen::VectorXd Bmu = state_.B * mu_;

    Eigen::VectorXd grad_mu = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd grad_S = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd Gzz = Eigen::MatrixXd::Zero(m, m);
    double dll = 0.0, dla = 0.0;
    Eigen::MatrixXd dZ = Eigen::MatrixXd::Zero(m, Z_.cols());

    struct TaskPartial {
      Eigen::VectorXd grad_mu;
      Eigen::MatrixXd grad_S;
      Eigen::MatrixXd Gzz;
      double dll = 0.0, dla = 0.0;
      Eigen::MatrixXd dZ;
    };
    std::vector<TaskPartial> partials(tasks_.size());
    const bool need_kernel_chain = hyper || inducing;
    parallel_tasks([&](std::size_t k) {
      const TaskConstants& task = tasks_[k];
      TaskPartial& out = partials[k];
      // d T / d m_C and d T / d S_C of the closed-form task term.
      const Eigen::VectorXd m_c = task_cache_[k].A.transpose() * mu_;
      const Eigen::VectorXd d =
          -task.S_inv * (m_c - task.model.q.mu) + task.K_inv * m_c;
      const Eigen::MatrixXd& H = task.H;
      const Eigen::MatrixXd& A = task_cache_[k].A;
      const Eigen::MatrixXd& R = task_cache_[k].R;
      if (mu) out.grad_mu = A * d;
      if (chol) out.grad_S = A * H * A.transpose();
      if (need_kernel_chain) {
        const Eigen::MatrixXd SAH = S * A * H;
        Eigen::MatrixXd Abar = mu_ * d.transpose();
        Abar.noalias() += 2.0 * SAH;
        Abar.noalias() -= R * H;
        const Eigen::MatrixXd Atil = state_.F.solve(Abar);
        Eigen::MatrixXd G = -Atil * A.transpose();
        out.Gzz = 0.5 * (G + G.transpose());
        const Eigen::MatrixXd Rbar = Atil - A * H;
        const bool cross_global = options_.cross_kernel == CrossKernel::Global;
        const KernelParams& cross_psi =
            cross_global ? psi_ : task.model.kernel;
        if (inducing) out.dZ = Eigen::MatrixXd::Zero(m, Z_.cols());
        accumulate_rbf_adjoint_cross(
            cross_psi, Z_, task.model.q.Z, R, Rbar,
            (hyper && cross_global) ? &out.dll : nullptr,
            (hyper && cross_global) ? &out.dla : nullptr,
            inducing ? &out.dZ : nullptr);
      }
    });
    for (const TaskPartial& p : partials) {
      if (p.grad_mu.size()) grad_mu += p.grad_mu;
      if (p.grad_S.size()) grad_S += p.grad_S;
      if (p.Gzz.size()) Gzz += p.Gzz;
      dll += p.dll;
      dla += p.dla;
      if (p.dZ.size()) dZ += p.dZ;
    }

    double d_log_noise = 0.0;
    if (fresh_.has_value()) {
      const detail::DataTerm t = detail::data_term_with_derivs(
          fresh_proj_, *fresh_, fresh_lik_, mu_, L_, rule_);
      if (mu) grad_mu += fresh_proj_.A * t.alpha;
      if (chol) {
        grad_S += fresh_proj_.A * t.beta.asDiagonal() *
                  fresh_proj_.A.transpose();
      }
      if (need_kernel_chain) {
        const detail::DataTermAdjoints adj = detail::data_term_kernel_adjoints(
            state_, fresh_proj_, t, mu_, S);
        Gzz += adj.Gzz;
        accumulate_rbf_adjoint_cross(psi_, Z_, fresh_->X, fresh_proj_.Kzx,
                                     adj.Gzx, hyper ? &dll : nullptr,
                                     hyper ? &dla : nullptr,
                                     inducing ? &dZ : nullptr);
        if (hyper) dla += 2.0 * psi_.amplitude_sq() * t.beta.sum();
      }
      d_log_noise = t.d_log_noise;
    }

    VemGradient out;
    if (mu) out.mu = grad_mu - Bmu;
    if (chol) {
      const Eigen::MatrixXd full = (2.0 * grad_S - state_.B) * L_;
      out.chol = pack_lower(detail::lower_triangle_gradient(full, L_));
    }
    if (need_kernel_chain) {
      Gzz.noalias() += 0.5 * (state_.B * S * state_.B);
      Gzz.noalias() += 0.5 * (Bmu * Bmu.transpose());
      Gzz.noalias() -= 0.5 * state_.B;
      accumulate_rbf_adjoint_self(psi_, Z_, state_.Kzz, Gzz,
                                  hyper ? &dll : nullptr,
                                  hyper ? &dla : nullptr,
                                  inducing ? &dZ : nullptr);
      if (hyper) {
        dla += 2.0 * state_.F.jitter * Gzz.trace();
        Eigen::VectorXd h(has_noise() ? 3 : 2);
        h[0] = dll;
        h[1] = dla;
        if (has_noise()) h[2] = d_log_noise;
        out.hyper = std::move(h);
      }
      if (inducing) {
        out.inducing = Eigen::Map<Eigen::VectorXd>(dZ.data(), dZ.size());
      }
    }
    return out;
  }

  Eigen::VectorXd get(ParamGroup g) const override {
    switch (g) {
      case ParamGroup::Mu:
        return mu_;
      case ParamGroup::Chol:
        return pack_lower(L_);
      case ParamGroup::Hyper: {
        Eigen::VectorXd h(has_noise() ? 3 : 2);
        h[0] = psi_.log_lengthscale;
        h[1] = psi_.log_amplitude;
        if (has_noise()) h[2] = fresh_lik_.log_noise_var;
        return h;
      }
      default:
        return Eigen::Map<const Eigen::VectorXd>(Z_.data(), Z_.size());
    }
  }

  void set(ParamGroup g, const Eigen::VectorXd& value) override {
    switch (g) {
      case ParamGroup::Mu:
        if (value.size() != mu_.size()) throw ShapeError("set(Mu): bad size");
        mu_ = value;
        break;
      case ParamGroup::Chol:
        L_ = unpack_lower(value, L_.rows());
        break;
      case ParamGroup::Hyper:
        if (value.size() != (has_noise() ? 3 : 2)) {
          throw ShapeError("set(Hyper): bad size");
        }
        psi_.log_lengthscale = value[0];
        psi_.log_amplitude = value[1];
        if (has_noise()) fresh_lik_.log_noise_var = value[2];
        kernel_dirty_ = true;
        break;
      default:
        if (value.size() != Z_.size()) {
          throw ShapeError("set(Inducing): bad size");
        }
        Z_ = Eigen::Map<const Eigen::MatrixXd>(value.data(), Z_.rows(),
                                               Z_.cols());
        kernel_dirty_ = true;
        break;
    }
  }

  std::size_t num_tasks() const { return tasks_.size(); }
  const KernelParams& kernel_params() const { return psi_; }
  const Likelihood& fresh_likelihood() const { return fresh_lik_; }
  bool has_fresh_data() const { return fresh_.has_value(); }

  GaussianVariational variational() const {
    GaussianVariational q{Z_, mu_, L_};
    q.canonicalize();
    return q;
  }

  const ModelRecord& task(std::size_t k) const { return tasks_[k].model; }

 private:
  /// Per-task quantities that never change during the fit.
  struct TaskConstants {
    ModelRecord model;
    Eigen::MatrixXd Kkk;  // task prior covariance (ladder jitter included)
    Eigen::MatrixXd S_inv;
    Eigen::MatrixXd K_inv;
    Eigen::MatrixXd H;  // -(S_inv - K_inv) / 2
    double logdet_2pi_S = 0.0;
    double logdet_2pi_K = 0.0;

    static TaskConstants build(ModelRecord model) {
      TaskConstants t;
      const Eigen::Index m = model.num_inducing();
      const PsdFactor Fs{model.q.L, 0.0};
      t.Kkk = kernel_matrix(model.q.Z, model.q.Z, model.kernel);
      const PsdFactor Fk = chol_psd(t.Kkk);
      t.Kkk.diagonal().array() += Fk.jitter;
      t.S_inv = Fs.inverse();
      t.K_inv = Fk.inverse();
      t.H = -0.5 * (t.S_inv - t.K_inv);
      t.logdet_2pi_S = m * std::log(kTwoPi) + Fs.logdet();
      t.logdet_2pi_K = m * std::log(kTwoPi) + Fk.logdet();
      t.model = std::move(model);
      return t;
    }
  };

  struct TaskCache {
    Eigen::MatrixXd R;  // K(Z_*, Z_k) under the cross kernel
    Eigen::MatrixXd A;  // (K_** + jI)^{-1} R
  };

  struct TaskTerm {
    double value = 0.0;
    Eigen::VectorXd m_c;
    Eigen::MatrixXd S_c;
  };

  bool has_noise() const {
    return fresh_.has_value() && fresh_lik_.kind == LikKind::Gaussian;
  }

  void refresh() {
    if (!kernel_dirty_) return;
    state_ = detail::SparseKernelState::build(Z_, psi_);
    task_cache_.resize(tasks_.size());
    parallel_tasks([&](std::size_t k) {
      const KernelParams& cross_psi =
          options_.cross_kernel == CrossKernel::Global ? psi_
                                                       : tasks_[k].model.kernel;
      task_cache_[k].R = kernel_matrix(Z_, tasks_[k].model.q.Z, cross_psi);
      task_cache_[k].A = state_.F.solve(task_cache_[k].R);
    });
    if (fresh_.has_value()) {
      fresh_proj_ = detail::DataProjection::build(state_, Z_, fresh_->X, psi_);
    }
    kernel_dirty_ = false;
  }

  TaskTerm task_term(std::size_t k) const {
    const TaskConstants& task = tasks_[k];
    const TaskCache& cache = task_cache_[k];
    TaskTerm term;
    term.m_c = cache.A.transpose() * mu_;
    const Eigen::MatrixXd SA = L_ * (L_.transpose() * cache.A);
    Eigen::MatrixXd proj =
        cache.A.transpose() * SA - cache.R.transpose() * cache.A;
    term.S_c = task.Kkk + 0.5 * (proj + proj.transpose());
    const Eigen::VectorXd diff = term.m_c - task.model.q.mu;
    const double log_q =
        -0.5 * ((task.S_inv.cwiseProduct(term.S_c)).sum() +
                diff.dot(task.S_inv * diff) + task.logdet_2pi_S);
    const double log_p =
        -0.5 * ((task.K_inv.cwiseProduct(term.S_c)).sum() +
                term.m_c.dot(task.K_inv * term.m_c) + task.logdet_2pi_K);
    term.value = log_q - log_p;
    return term;
  }

  void parallel_tasks(const std::function<void(std::size_t)>& body) const {
    const std::size_t n = tasks_.size();
    if (n == 0) return;
    const int jobs = std::max(1, std::min<int>(options_.jobs,
                                               static_cast<int>(n)));
    if (jobs == 1) {
      for (std::size_t k = 0; k < n; ++k) body(k);
      return;
    }
    std::vector<std::thread> workers;
    workers.reserve(jobs);
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w]() {
        for (std::size_t k = w; k < n; k += jobs) body(k);
      });
    }
    for (std::thread& t : workers) t.join();
  }

  QuadratureRule rule_;
  std::vector<TaskConstants> tasks_;
  std::optional<Dataset> fresh_;
  Likelihood fresh_lik_;
  EnsembleOptions options_;

  Eigen::MatrixXd Z_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd L_;
  KernelParams psi_;

  bool kernel_dirty_ = true;
  detail::SparseKernelState state_;
  std::vector<TaskCache> task_cache_;
  detail::DataProjection fresh_proj_;
};

/// Eq.-style entry points used by the tests and the CLI.
inline double ensemble_bound(const std::vector<ModelRecord>& dictionary,
                             const GaussianVariational& global_q,
                             const KernelParams& global_psi,
                             EnsembleOptions options = {}) {
  EnsembleObjective obj(dictionary, global_q, global_psi, std::nullopt,
                        gh_rule(20), options);
  return obj.objective();
}

inline double combined_bound(const std::vector<ModelRecord>& dictionary,
                             const GaussianVariational& global_q,
                             const KernelParams& global_psi,
                             const Dataset& fresh, const QuadratureRule& rule,
                             EnsembleOptions options = {}) {
  EnsembleObjective obj(dictionary, global_q, global_psi, fresh, rule,
                        options);
  return obj.objective();
}

inline EnsembleGradient ensemble_grad(
    const std::vector<ModelRecord>& dictionary,
    const GaussianVariational& global_q, const KernelParams& global_psi,
    std::optional<Dataset> fresh = std::nullopt,
    EnsembleOptions options = {}) {
  EnsembleObjective obj(dictionary, global_q, global_psi, std::move(fresh),
                        gh_rule(20), options);
  const VemGradient g = obj.gradients(true, true, true, true);
  EnsembleGradient out;
  out.mu = g.mu;
  out.L = unpack_lower(g.chol, global_q.L.rows());
  out.log_lengthscale = g.hyper[0];
  out.log_amplitude = g.hyper[1];
  if (g.hyper.size() > 2) out.log_noise_var = g.hyper[2];
  out.Z = Eigen::Map<const Eigen::MatrixXd>(g.inducing.data(),
                                            global_q.Z.rows(),
                                            global_q.Z.cols());
  return out;
}

namespace detail {

inline Eigen::MatrixXd init_global_inducing(
    const std::vector<ModelRecord>& dictionary, int m, std::uint64_t seed) {
  std::vector<const ModelRecord*> sorted;
  sorted.reserve(dictionary.size());
  for (const ModelRecord& model : dictionary) sorted.push_back(&model);
  std::sort(sorted.begin(), sorted.end(),
            [](const ModelRecord* a, const ModelRecord* b) {
              return a->meta.task_id < b->meta.task_id;
            });
  const Eigen::Index p = sorted.front()->input_dim();
  Eigen::Index total = 0;
  for (const ModelRecord* model : sorted) total += model->num_inducing();
  Eigen::MatrixXd pool(total, p);
  Eigen::Index row = 0;
  for (const ModelRecord* model : sorted) {
    pool.middleRows(row, model->num_inducing()) = model->q.Z;
    row += model->num_inducing();
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> order(total);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::MatrixXd Z(m, p);
  const Eigen::VectorXd lo = pool.colwise().minCoeff();
  const Eigen::VectorXd hi = pool.colwise().maxCoeff();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < m; ++i) {
    if (i < total) {
      Z.row(i) = pool.row(order[i]);
    } else {
      // More global inducing inputs than the union provides: fill the gap
      // uniformly over the union's bounding box.
      for (Eigen::Index c = 0; c < p; ++c) {
        Z(i, c) = lo[c] + (hi[c] - lo[c] + 1e-6) * unit(rng);
      }
    }
  }
  const double spread = (hi - lo).norm() + 1.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) {
      if ((Z.row(i) - Z.row(j)).lpNorm<Eigen::Infinity>() <= 1e-10) {
        Z(i, 0) += 1e-6 * spread * (i + 1);
      }
    }
  }
  return Z;
}

}  // namespace detail

struct EnsembleFitResult {
  ModelRecord model;
  VemResult optimization;
};

/// Fit a global model to a dictionary of recyclable records (plus optional
/// fresh data) by maximizing the ensemble bound. The returned record is
/// itself recyclable. Global inducing inputs start from a subsample of the
/// union of the dictionary's; hyperparameters from the log-space average.
inline EnsembleFitResult fit_ensemble(
    const std::vector<ModelRecord>& dictionary, int num_inducing,
    const VEMConfig& config, std::optional<Dataset> fresh,
    std::uint64_t seed, EnsembleOptions options = {},
    const std::string& task_id = "ensemble") {
  config.validate();
  if (num_inducing < 1) {
    throw std::invalid_argument("fit_ensemble: M must be >= 1");
  }

  EnsembleFitResult result;
  result.model.meta.task_id = task_id;

  // Empty problem: the bound reduces to -KL[q || p], so the prior is the
  // closed-form maximizer.
  if (dictionary.empty() && !fresh.has_value()) {
    const Eigen::Index p = options.input_dim_hint;
    GaussianVariational q;
    q.Z.resize(num_inducing, p);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (p == 1 && num_inducing > 1) {
      for (int i = 0; i < num_inducing; ++i) {
        q.Z(i, 0) = i / (num_inducing - 1.0);
      }
    } else {
      for (int i = 0; i < num_inducing; ++i) {
        for (Eigen::Index c = 0; c < p; ++c) q.Z(i, c) = unit(rng);
      }
    }
    const KernelParams psi =
        KernelParams::from_values(config.init_lengthscale.value_or(1.0),
                                  std::sqrt(config.init_amplitude_var.value_or(1.0)));
    q.mu = Eigen::VectorXd::Zero(num_inducing);
    q.L = chol_psd(kernel_matrix(q.Z, q.Z, psi)).L;
    result.model.q = std::move(q);
    result.model.kernel = psi;
    result.model.likelihood = std::nullopt;
    result.model.meta.elbo = 0.0;
    result.model.meta.bound_value = 0.0;
    result.model.meta.pyramid_depth = 1;
    result.model.validate();
    return result;
  }

  Eigen::MatrixXd Z;
  KernelParams psi;
  if (!dictionary.empty()) {
    Z = detail::init_global_inducing(dictionary, num_inducing, seed);
    double sum_ll = 0.0, sum_la = 0.0;
    for (const ModelRecord& model : dictionary) {
      sum_ll += model.kernel.log_lengthscale;
      sum_la += model.kernel.log_amplitude;
    }
    psi.log_lengthscale = sum_ll / dictionary.size();
    psi.log_amplitude = sum_la / dictionary.size();
  } else {
    Z = detail::init_inducing_inputs(fresh->X, num_inducing, seed);
    const double y_var =
        (fresh->y.array() - fresh->y.mean()).square().sum() /
        std::max<Eigen::Index>(fresh->size(), 1);
    const Eigen::VectorXd ranges =
        fresh->X.colwise().maxCoeff() - fresh->X.colwise().minCoeff();
    psi = KernelParams::from_values(
        config.init_lengthscale.value_or(
            0.2 * std::max(ranges.mean(), 1e-6)),
        std::sqrt(config.init_amplitude_var.value_or(
            fresh->likelihood.kind == LikKind::Gaussian
                ? std::max(y_var, 1e-2)
                : 1.0)));
  }
  if (config.init_lengthscale) {
    psi.log_lengthscale = std::log(*config.init_lengthscale);
  }
  if (config.init_amplitude_var) {
    psi.log_amplitude = 0.5 * std::log(*config.init_amplitude_var);
  }

  // Fresh Gaussian data: its noise variance joins the hyperparameter block,
  // initialized from the Gaussian dictionary members when there are any.
  double noise_sum = 0.0;
  int noise_count = 0;
  for (const ModelRecord& model : dictionary) {
    if (model.likelihood && model.likelihood->kind == LikKind::Gaussian) {
      noise_sum += model.likelihood->log_noise_var;
      ++noise_count;
    }
  }
  if (fresh.has_value() && fresh->likelihood.kind == LikKind::Gaussian) {
    double log_noise;
    if (config.init_noise_var) {
      log_noise = std::log(*config.init_noise_var);
    } else if (noise_count > 0) {
      log_noise = noise_sum / noise_count;
    } else {
      const double y_var =
          (fresh->y.array() - fresh->y.mean()).square().sum() /
          std::max<Eigen::Index>(fresh->size(), 1);
      log_noise = std::log(0.1 * std::max(y_var, 1e-2));
    }
    fresh->likelihood.log_noise_var = log_noise;
  }

  GaussianVariational q;
  q.Z = std::move(Z);
  q.mu = Eigen::VectorXd::Zero(num_inducing);
  // Prior initialization, as in fit_local.
  q.L = chol_psd(kernel_matrix(q.Z, q.Z, psi)).L;

  EnsembleObjective objective(dictionary, q, psi, fresh, gh_rule(20), options);
  result.optimization = fit(objective, config);

  result.model.q = objective.variational();
  result.model.kernel = objective.kernel_params();

  // Homogeneous dictionaries keep their common observation model (Gaussian
  // noise averaged in log space or taken from the fresh-data fit); mixed
  // dictionaries store none and prediction takes an explicit likelihood.
  bool any_gaussian = noise_count > 0;
  bool any_bernoulli = false;
  for (const ModelRecord& model : dictionary) {
    if (model.likelihood && model.likelihood->kind == LikKind::Bernoulli) {
      any_bernoulli = true;
    }
  }
  if (fresh.has_value()) {
    if (objective.fresh_likelihood().kind == LikKind::Gaussian) {
      any_gaussian = true;
    } else {
      any_bernoulli = true;
    }
  }
  if (any_gaussian && !any_bernoulli) {
    double log_noise = noise_count > 0 ? noise_sum / noise_count : 0.0;
    if (fresh.has_value() &&
        objective.fresh_likelihood().kind == LikKind::Gaussian) {
      log_noise = objective.fresh_likelihood().log_noise_var;
    }
    result.model.likelihood = Likelihood{LikKind::Gaussian, log_noise};
  } else if (any_bernoulli && !any_gaussian) {
    result.model.likelihood = Likelihood::bernoulli();
  } else {
    result.model.likelihood = std::nullopt;
  }

  std::int64_t n_seen = fresh.has_value() ? fresh->size() : 0;
  int max_depth = 0;
  for (const ModelRecord& model : dictionary) {
    n_seen += model.meta.n_seen;
    max_depth = std::max(max_depth, model.meta.pyramid_depth);
    result.model.meta.source_task_ids.push_back(model.meta.task_id);
  }
  std::sort(result.model.meta.source_task_ids.begin(),
            result.model.meta.source_task_ids.end());
  result.model.meta.n_seen = n_seen;
  result.model.meta.elbo = result.optimization.best_objective;
  result.model.meta.bound_value = result.optimization.best_objective;
  result.model.meta.pyramid_depth = max_depth + 1;
  result.model.validate();
  return result;
}

struct PyramidResult {
  ModelRecord model;
  int ensembles_fitted = 0;
};

/// Ensembles of ensembles: chunk the dictionary (ordered by task id) into
/// groups of `branching`, fit one ensemble per group, and recurse on the
/// fitted models until a single one remains.
inline PyramidResult pyramid_ensemble(std::vector<ModelRecord> dictionary,
                                      int branching, int num_inducing,
                                      const VEMConfig& config,
                                      std::uint64_t seed,
                                      EnsembleOptions options = {}) {
  if (branching < 2) {
    throw std::invalid_argument("pyramid_ensemble: branching must be >= 2");
  }
  if (dictionary.empty()) {
    throw std::invalid_argument("pyramid_ensemble: empty dictionary");
  }
  PyramidResult result;
  int level = 0;
  while (dictionary.size() > 1 || level == 0) {
    std::sort(dictionary.begin(), dictionary.end(),
              [](const ModelRecord& a, const ModelRecord& b) {
                return a.meta.task_id < b.meta.task_id;
              });
    std::vector<ModelRecord> next;
    for (std::size_t start = 0; start < dictionary.size();
         start += branching) {
      const std::size_t stop =
          std::min(dictionary.size(), start + branching);
      std::vector<ModelRecord> chunk(dictionary.begin() + start,
                                     dictionary.begin() + stop);
      std::string id = chunk.front().meta.task_id;
      for (std::size_t i = 1; i < chunk.size(); ++i) {
        id += "+" + chunk[i].meta.task_id;
      }
      EnsembleFitResult fitted =
          fit_ensemble(chunk, num_inducing, config, std::nullopt,
                       seed + static_cast<std::uint64_t>(result.ensembles_fitted),
                       options, id);
      ++result.ensembles_fitted;
      next.push_back(std::move(fitted.model));
    }
    dictionary = std::move(next);
    ++level;
  }
  result.model = std::move(dictionary.front());
  return result;
}

struct GlobalPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::VectorXd log_density;  // empty unless outputs were supplied
};

/// Predict through an explicit observation model; a global record fitted
/// from mixed tasks can be read through either head (the heterogeneous
/// workflow).
inline GlobalPrediction global_predict(
    const ModelRecord& model, const Eigen::MatrixXd& Xstar,
    const Likelihood& lik, const QuadratureRule& rule,
    const std::optional<Eigen::VectorXd>& y = std::nullopt) {
  const Marginals marg = predictive_marginals(model, Xstar);
  GlobalPrediction out;
  out.mean = marg.mean;
  out.var = marg.var;
  if (y.has_value()) {
    if (y->size() != Xstar.rows()) {
      throw ShapeError("global_predict: y size does not match Xstar");
    }
    out.log_density.resize(y->size());
    for (Eigen::Index i = 0; i < y->size(); ++i) {
      out.log_density[i] =
          log_predictive_density((*y)[i], marg.mean[i], marg.var[i], lik, rule);
    }
  }
  return out;
}

}  // namespace gpfuse
