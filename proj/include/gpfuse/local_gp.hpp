#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gpfuse/dataset.hpp"
#include "gpfuse/kernel.hpp"
#include "gpfuse/likelihood.hpp"
#include "gpfuse/linalg.hpp"
#include "gpfuse/model.hpp"
#include "gpfuse/quadrature.hpp"
#include "gpfuse/variational.hpp"
#include "gpfuse/vem.hpp"

namespace gpfuse {

struct Marginals {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

inline constexpr double kVarianceFloor = 1e-12;

/// Marginals of q(f_i) = int p(f_i | u) q(u) du at the rows of Xstar:
///   m_i = k_i^T K^{-1} mu
///   v_i = k(x_i, x_i) - k_i^T K^{-1} k_i + k_i^T K^{-1} S K^{-1} k_i
inline Marginals predictive_marginals(const GaussianVariational& q,
                                      const KernelParams& psi,
                                      const Eigen::MatrixXd& Xstar) {
  const PsdFactor F = chol_psd(kernel_matrix(q.Z, q.Z, psi));
  const Eigen::MatrixXd Kzx = kernel_matrix(q.Z, Xstar, psi);
  const Eigen::MatrixXd A = F.solve(Kzx);
  Marginals out;
  out.mean = A.transpose() * q.mu;
  const Eigen::MatrixXd LtA = q.L.transpose() * A;
  out.var.resize(Xstar.rows());
  const double kdiag = psi.amplitude_sq();
  for (Eigen::Index i = 0; i < Xstar.rows(); ++i) {
    const double cond = kdiag - Kzx.col(i).dot(A.col(i));
    out.var[i] =
        std::max(cond + LtA.col(i).squaredNorm(), kVarianceFloor);
  }
  return out;
}

inline Marginals predictive_marginals(const ModelRecord& model,
                                      const Eigen::MatrixXd& Xstar) {
  return predictive_marginals(model.q, model.kernel, Xstar);
}

/// KL[N(mu, L L^T) || N(0, K)] with K given as a Cholesky factor:
///   (Tr(K^{-1} S) + mu^T K^{-1} mu - M + log det K - log det S) / 2
inline double kl_gauss(const Eigen::VectorXd& mu, const Eigen::MatrixXd& L,
                       const PsdFactor& prior) {
  const Eigen::Index m = mu.size();
  if (L.rows() != m || prior.dim() != m) {
    throw ShapeError("kl_gauss: dimension mismatch");
  }
  const Eigen::MatrixXd KinvL = prior.solve(L);
  const double trace = KinvL.cwiseProduct(L).sum();  // Tr(K^{-1} L L^T)
  const double quad = mu.dot(prior.solve(mu));
  const double logdet_S = 2.0 * L.diagonal().array().abs().log().sum();
  return 0.5 * (trace + quad - static_cast<double>(m) + prior.logdet() -
                logdet_S);
}

inline double kl_gauss(const GaussianVariational& q,
                       const Eigen::MatrixXd& prior_cov) {
  return kl_gauss(q.mu, q.L, chol_psd(prior_cov));
}

namespace detail {

/// Kernel-dependent state shared by the bound terms at fixed (psi, Z).
struct SparseKernelState {
  PsdFactor F;          // chol of K(Z,Z) + jitter
  Eigen::MatrixXd B;    // (K + jI)^{-1}
  Eigen::MatrixXd Kzz;  // K(Z,Z) without jitter

  static SparseKernelState build(const Eigen::MatrixXd& Z,
                                 const KernelParams& psi) {
    SparseKernelState s;
    s.Kzz = kernel_matrix(Z, Z, psi);
    s.F = chol_psd(s.Kzz);
    s.B = s.F.inverse();
    return s;
  }
};

/// Projection of one dataset through the inducing set.
struct DataProjection {
  Eigen::MatrixXd Kzx;  // M x N
  Eigen::MatrixXd A;    // (K + jI)^{-1} Kzx
  Eigen::VectorXd kdiag;

  static DataProjection build(const SparseKernelState& state,
                              const Eigen::MatrixXd& Z,
                              const Eigen::MatrixXd& X,
                              const KernelParams& psi) {
    DataProjection p;
    p.Kzx = kernel_matrix(Z, X, psi);
    p.A = state.F.solve(p.Kzx);
    p.kdiag = kernel_diag(X.rows(), psi);
    return p;
  }
};

/// Sum of expected log-likelihoods plus the per-point derivatives needed by
/// the chain rule.
struct DataTerm {
  double value = 0.0;
  Eigen::VectorXd m, v;
  Eigen::VectorXd alpha, beta;  // dE/dm, dE/dv
  double d_log_noise = 0.0;
};

inline void marginals_from_projection(const DataProjection& proj,
                                      const Eigen::VectorXd& mu,
                                      const Eigen::MatrixXd& L,
                                      Eigen::VectorXd* m, Eigen::VectorXd* v) {
  *m = proj.A.transpose() * mu;
  const Eigen::MatrixXd LtA = L.transpose() * proj.A;
  v->resize(proj.A.cols());
  for (Eigen::Index i = 0; i < proj.A.cols(); ++i) {
    const double cond = proj.kdiag[i] - proj.Kzx.col(i).dot(proj.A.col(i));
    (*v)[i] = std::max(cond + LtA.col(i).squaredNorm(), kVarianceFloor);
  }
}

inline double data_term_value(const DataProjection& proj, const Dataset& data,
                              const Likelihood& lik,
                              const Eigen::VectorXd& mu,
                              const Eigen::MatrixXd& L,
                              const QuadratureRule& rule) {
  Eigen::VectorXd m, v;
  marginals_from_projection(proj, mu, L, &m, &v);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    acc += expected_log_lik(data.y[i], m[i], v[i], lik, rule);
  }
  return acc;
}

inline DataTerm data_term_with_derivs(const DataProjection& proj,
                                      const Dataset& data,
                                      const Likelihood& lik,
                                      const Eigen::VectorXd& mu,
                                      const Eigen::MatrixXd& L,
                                      const QuadratureRule& rule) {
  DataTerm t;
  marginals_from_projection(proj, mu, L, &t.m, &t.v);
  const Eigen::Index n = data.size();
  t.alpha.resize(n);
  t.beta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ExpectedLogLik e =
        expected_log_lik_grad(data.y[i], t.m[i], t.v[i], lik, rule);
    t.value += e.value;
    t.alpha[i] = e.d_mean;
    t.beta[i] = e.d_var;
    t.d_log_noise += e.d_log_noise;
  }
  return t;
}

/// Adjoints of the data term with respect to the kernel matrices, for the
/// hyperparameter and inducing-input chains.
struct DataTermAdjoints {
  Eigen::MatrixXd Gzz;    // symmetric part included by caller
  Eigen::MatrixXd Gzx;
  // kdiag adjoint is just beta.
};

inline DataTermAdjoints data_term_kernel_adjoints(
    const SparseKernelState& state, const DataProjection& proj,
    const DataTerm& t, const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
  // For each point, with a_i = A col i and c_i = alpha_i mu - beta_i k_i
  // + 2 beta_i S a_i, the adjoints are
  //   Gzz += -sym(sum_i a_i (B c_i)^T),  Gzx col i += B c_i - beta_i a_i.
  Eigen::MatrixXd C = mu * t.alpha.transpose();
  C.noalias() -= proj.Kzx * t.beta.asDiagonal();
  C.noalias() += 2.0 * (S * proj.A) * t.beta.asDiagonal();
  const Eigen::MatrixXd Chat = state.F.solve(C);
  DataTermAdjoints adj;
  Eigen::MatrixXd G = -proj.A * Chat.transpose();
  adj.Gzz = 0.5 * (G + G.transpose());
  adj.Gzx = Chat - proj.A * t.beta.asDiagonal();
  return adj;
}

inline Eigen::MatrixXd lower_triangle_gradient(const Eigen::MatrixXd& full,
                                               const Eigen::MatrixXd& L) {
  Eigen::MatrixXd g = full.triangularView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < L.rows(); ++i) g(i, i) += 1.0 / L(i, i);
  return g;
}

}  // namespace detail

/// Gradient of the local bound in every free parameter. The kernel and noise
/// entries are derivatives in the logs.
struct LocalGradient {
  Eigen::VectorXd mu;
  Eigen::MatrixXd L;  // lower triangle, zero above the diagonal
  double log_lengthscale = 0.0;
  double log_amplitude = 0.0;
  double log_noise_var = 0.0;
  Eigen::MatrixXd Z;
};

/// Objective provider for one data partition: the sparse variational bound
///   sum_i E_{q(f_i)}[log p(y_i | f_i)] - KL[q(u) || p(u)]
/// over (mu, L, log lengthscale, log amplitude, log noise, Z), with the
/// kernel state cached across VE steps.
class LocalObjective final : public VemProblem {
 public:
  LocalObjective(Dataset data, QuadratureRule rule, GaussianVariational init,
                 KernelParams psi, Likelihood lik)
      : data_(std::move(data)),
        rule_(std::move(rule)),
        Z_(std::move(init.Z)),
        mu_(std::move(init.mu)),
        L_(std::move(init.L)),
        psi_(psi),
        lik_(lik) {
    if (data_.likelihood.kind != lik_.kind) {
      throw std::invalid_argument(
          "LocalObjective: dataset and model likelihood kinds differ");
    }
    if (Z_.cols() != data_.X.cols() && data_.size() > 0) {
      throw ShapeError("LocalObjective: Z and X column counts differ");
    }
  }

  double objective() override {
    refresh();
    const double data_term = detail::data_term_value(
        proj_, data_, lik_, mu_, L_, rule_);
    return data_term - kl_gauss(mu_, L_, state_.F);
  }

  VemGradient gradients(bool mu, bool chol, bool hyper,
                        bool inducing) override {
    refresh();
    VemGradient out;
    const detail::DataTerm t =
        detail::data_term_with_derivs(proj_, data_, lik_, mu_, L_, rule_);
    const Eigen::VectorXd Bmu = state_.B * mu_;
    if (mu) out.mu = proj_.A * t.alpha - Bmu;
    if (chol) {
      const Eigen::MatrixXd W =
          proj_.A * t.beta.asDiagonal() * proj_.A.transpose();
      out.chol = pack_lower(
          detail::lower_triangle_gradient((2.0 * W - state_.B) * L_, L_));
    }
    if (hyper || inducing) {
      const Eigen::MatrixXd S = L_ * L_.transpose();
      const detail::DataTermAdjoints adj =
          detail::data_term_kernel_adjoints(state_, proj_, t, mu_, S);
      // ELBO = data - KL, so the KL adjoint enters with a flipped sign:
      //   -dKL/dK = (B S B + (B mu)(B mu)^T - B) / 2.
      Eigen::MatrixXd Gzz = adj.Gzz;
      Gzz.noalias() += 0.5 * (state_.B * S * state_.B);
      Gzz.noalias() += 0.5 * (Bmu * Bmu.transpose());
      Gzz.noalias() -= 0.5 * state_.B;
      double dll = 0.0, dla = 0.0;
      Eigen::MatrixXd dZ;
      if (inducing) dZ = Eigen::MatrixXd::Zero(Z_.rows(), Z_.cols());
      accumulate_rbf_adjoint_self(psi_, Z_, state_.Kzz, Gzz,
                                  hyper ? &dll : nullptr,
                                  hyper ? &dla : nullptr,
                                  inducing ? &dZ : nullptr);
      accumulate_rbf_adjoint_cross(psi_, Z_, data_.X, proj_.Kzx, adj.Gzx,
                                   hyper ? &dll : nullptr,
                                   hyper ? &dla : nullptr,
                                   inducing ? &dZ : nullptr);
      if (hyper) {
        dla += 2.0 * psi_.amplitude_sq() * t.beta.sum();  // kdiag term
        dla += 2.0 * state_.F.jitter * Gzz.trace();        // jitter ladder
        Eigen::VectorXd h(has_noise() ? 3 : 2);
        h[0] = dll;
        h[1] = dla;
        if (has_noise()) h[2] = t.d_log_noise;
        out.hyper = std::move(h);
      }
      if (inducing) {
        out.inducing = Eigen::Map<Eigen::VectorXd>(dZ.data(), dZ.size());
        // Map uses column-major order; keep packing consistent with set().
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
        if (has_noise()) h[2] = lik_.log_noise_var;
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
        if (has_noise()) lik_.log_noise_var = value[2];
        kernel_dirty_ = true;
        break;
      default:
        if (value.size() != Z_.size()) throw ShapeError("set(Inducing): bad size");
        Z_ = Eigen::Map<const Eigen::MatrixXd>(value.data(), Z_.rows(),
                                               Z_.cols());
        kernel_dirty_ = true;
        break;
    }
  }

  const Dataset& data() const { return data_; }
  const KernelParams& kernel_params() const { return psi_; }
  const Likelihood& likelihood() const { return lik_; }

  GaussianVariational variational() const {
    GaussianVariational q{Z_, mu_, L_};
    q.canonicalize();
    return q;
  }

 private:
  bool has_noise() const { return lik_.kind == LikKind::Gaussian; }

  void refresh() {
    if (!kernel_dirty_) return;
    state_ = detail::SparseKernelState::build(Z_, psi_);
    proj_ = detail::DataProjection::build(state_, Z_, data_.X, psi_);
    kernel_dirty_ = false;
  }

  Dataset data_;
  QuadratureRule rule_;
  Eigen::MatrixXd Z_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd L_;
  KernelParams psi_;
  Likelihood lik_;
  bool kernel_dirty_ = true;
  detail::SparseKernelState state_;
  detail::DataProjection proj_;
};

/// The bound of one partition at the model's parameters.
inline double local_elbo(const Dataset& data, const ModelRecord& model,
                         const QuadratureRule& rule) {
  if (!model.likelihood.has_value()) {
    throw std::invalid_argument("local_elbo: model has no likelihood");
  }
  LocalObjective obj(data, rule, model.q, model.kernel, *model.likelihood);
  return obj.objective();
}

inline LocalGradient local_elbo_grad(const Dataset& data,
                                     const ModelRecord& model,
                                     const QuadratureRule& rule) {
  if (!model.likelihood.has_value()) {
    throw std::invalid_argument("local_elbo_grad: model has no likelihood");
  }
  LocalObjective obj(data, rule, model.q, model.kernel, *model.likelihood);
  const VemGradient g = obj.gradients(true, true, true, true);
  LocalGradient out;
  out.mu = g.mu;
  out.L = unpack_lower(g.chol, model.q.L.rows());
  out.log_lengthscale = g.hyper[0];
  out.log_amplitude = g.hyper[1];
  if (model.likelihood->kind == LikKind::Gaussian) {
    out.log_noise_var = g.hyper[2];
  }
  out.Z = Eigen::Map<const Eigen::MatrixXd>(g.inducing.data(),
                                            model.q.Z.rows(),
                                            model.q.Z.cols());
  return out;
}

namespace detail {

inline Eigen::MatrixXd init_inducing_inputs(const Eigen::MatrixXd& X, int m,
                                            std::uint64_t seed) {
  const Eigen::Index p = X.cols();
  const Eigen::VectorXd lo = X.colwise().minCoeff();
  const Eigen::VectorXd hi = X.colwise().maxCoeff();
  Eigen::MatrixXd Z(m, p);
  if (p == 1) {
    if (m == 1) {
      Z(0, 0) = 0.5 * (lo[0] + hi[0]);
    } else {
      for (int i = 0; i < m; ++i) {
        Z(i, 0) = lo[0] + (hi[0] - lo[0]) * i / (m - 1.0);
      }
    }
  } else if (p == 2) {
    // Equally spaced grid; the first m nodes in row-major order.
    const int g = static_cast<int>(std::ceil(std::sqrt(double(m))));
    int idx = 0;
    for (int r = 0; r < g && idx < m; ++r) {
      for (int c = 0; c < g && idx < m; ++c, ++idx) {
        Z(idx, 0) = lo[0] + (hi[0] - lo[0]) * (g == 1 ? 0.5 : c / (g - 1.0));
        Z(idx, 1) = lo[1] + (hi[1] - lo[1]) * (g == 1 ? 0.5 : r / (g - 1.0));
      }
    }
  } else {
    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> order(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < m; ++i) Z.row(i) = X.row(order[i]);
  }
  // Nudge coincident rows apart so the variational record stays valid.
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

struct LocalFitResult {
  ModelRecord model;
  VemResult optimization;
};

/// Fit one partition: initialize the variational state and hyperparameters
/// (config overrides win over the data-driven defaults), run the configured
/// optimizer, and package the result as a self-contained record.
inline LocalFitResult fit_local(const Dataset& data, int num_inducing,
                                const VEMConfig& config, std::uint64_t seed,
                                const std::string& task_id = "task") {
  data.validate();
  config.validate();
  if (num_inducing < 1 || num_inducing > data.size()) {
    throw std::invalid_argument(
        "fit_local: need 1 <= M <= N, got M=" + std::to_string(num_inducing) +
        " N=" + std::to_string(data.size()));
  }
  const Eigen::Index n = data.size();
  const double y_mean = data.y.mean();
  const double y_var =
      (n > 1) ? (data.y.array() - y_mean).square().sum() / double(n) : 1.0;
  const bool gaussian = data.likelihood.kind == LikKind::Gaussian;

  GaussianVariational q;
  q.Z = detail::init_inducing_inputs(data.X, num_inducing, seed);
  q.mu = Eigen::VectorXd::Zero(num_inducing);

  const Eigen::VectorXd ranges =
      data.X.colwise().maxCoeff() - data.X.colwise().minCoeff();
  const double mean_range = std::max(ranges.mean(), 1e-6);
  const double init_l = config.init_lengthscale.value_or(0.2 * mean_range);
  const double init_sa2 = config.init_amplitude_var.value_or(
      gaussian ? std::max(y_var, 1e-2) : 1.0);
  KernelParams psi =
      KernelParams::from_values(init_l, std::sqrt(init_sa2));
  // q starts at the prior (S = K_zz): the KL term and its gradients vanish
  // there, which keeps the fixed-rate ascent stable even when K_zz is badly
  // conditioned.
  q.L = chol_psd(kernel_matrix(q.Z, q.Z, psi)).L;

  Likelihood lik = data.likelihood;
  if (gaussian) {
    lik = Likelihood::gaussian(
        config.init_noise_var.value_or(0.1 * std::max(y_var, 1e-2)));
  }

  LocalObjective objective(data, gh_rule(20), q, psi, lik);
  const VemResult opt = fit(objective, config);

  LocalFitResult result;
  result.optimization = opt;
  result.model.q = objective.variational();
  result.model.kernel = objective.kernel_params();
  result.model.likelihood = objective.likelihood();
  result.model.meta.task_id = task_id;
  result.model.meta.n_seen = n;
  result.model.meta.elbo = opt.best_objective;
  result.model.validate();
  return result;
}

}  // namespace gpfuse
