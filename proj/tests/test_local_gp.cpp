#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "gpfuse/local_gp.hpp"
#include "gpfuse/model.hpp"
#include "gpfuse/toy.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("prior variational distribution recovers the prior marginals") {
  std::mt19937_64 rng(41);
  gpfuse::ModelRecord model = generators::random_model(5, 1, rng);
  const MatrixXd K =
      gpfuse::kernel_matrix(model.q.Z, model.q.Z, model.kernel);
  model.q.mu.setZero();
  model.q.L = gpfuse::chol_psd(K).L;
  const MatrixXd Xs = oracles::random_matrix(7, 1, rng, 4.0);
  const gpfuse::Marginals marg = gpfuse::predictive_marginals(model, Xs);
  for (Eigen::Index i = 0; i < 7; ++i) {
    REQUIRE(marg.mean[i] == Approx(0.0).margin(1e-10));
    REQUIRE(marg.var[i] ==
            Approx(model.kernel.amplitude_sq()).epsilon(1e-8));
  }
}

TEST_CASE("collapsed variational covariance interpolates at inducing inputs") {
  std::mt19937_64 rng(42);
  gpfuse::ModelRecord model = generators::random_model(4, 1, rng);
  model.q.L = 1e-7 * MatrixXd::Identity(4, 4);
  const gpfuse::Marginals marg =
      gpfuse::predictive_marginals(model, model.q.Z);
  for (Eigen::Index i = 0; i < 4; ++i) {
    REQUIRE(marg.mean[i] == Approx(model.q.mu[i]).margin(1e-6));
    REQUIRE(marg.var[i] < 1e-6);
  }
}

TEST_CASE("marginals match a Monte-Carlo oracle") {
  std::mt19937_64 rng(43);
  const gpfuse::ModelRecord model = generators::random_model(3, 1, rng);
  MatrixXd Xs(1, 1);
  Xs << model.q.Z(1, 0) + 0.4;
  const gpfuse::Marginals marg = gpfuse::predictive_marginals(model, Xs);

  // Nested sampling: u ~ q(u), then f | u from the conditional prior.
  const gpfuse::PsdFactor F =
      gpfuse::chol_psd(gpfuse::kernel_matrix(model.q.Z, model.q.Z, model.kernel));
  const VectorXd k = gpfuse::kernel_matrix(model.q.Z, Xs, model.kernel).col(0);
  const VectorXd a = F.solve(k);
  const double cond =
      std::max(model.kernel.amplitude_sq() - k.dot(a), 0.0);
  oracles::MvnSampler sample_u(model.q.mu, model.q.L, 777);
  std::mt19937_64 noise_rng(778);
  std::normal_distribution<double> normal;
  const int n = 1'000'000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = a.dot(sample_u()) + std::sqrt(cond) * normal(noise_rng);
    sum += f;
    sumsq += f * f;
  }
  const double mc_mean = sum / n;
  const double mc_var = sumsq / n - mc_mean * mc_mean;
  const double se_mean = std::sqrt(marg.var[0] / n);
  const double se_var = marg.var[0] * std::sqrt(2.0 / (n - 1.0));
  REQUIRE(std::abs(mc_mean - marg.mean[0]) < 3.0 * se_mean);
  REQUIRE(std::abs(mc_var - marg.var[0]) < 3.0 * se_var);
}

TEST_CASE("KL of the prior against itself is zero") {
  std::mt19937_64 rng(44);
  gpfuse::ModelRecord model = generators::random_model(4, 2, rng);
  const MatrixXd K =
      gpfuse::kernel_matrix(model.q.Z, model.q.Z, model.kernel);
  model.q.mu.setZero();
  model.q.L = gpfuse::chol_psd(K).L;
  REQUIRE(gpfuse::kl_gauss(model.q, K) == Approx(0.0).margin(1e-10));
}

TEST_CASE("scalar KL has the textbook value") {
  VectorXd mu(1);
  mu << 1.0;
  MatrixXd L(1, 1);
  L << 1.0;
  MatrixXd K(1, 1);
  K << 1.0;
  REQUIRE(gpfuse::kl_gauss(mu, L, gpfuse::chol_psd(K)) ==
          Approx(0.5).epsilon(1e-12));
}

TEST_CASE("KL matches a Monte-Carlo estimate of E_q[log q - log p]") {
  std::mt19937_64 rng(45);
  const gpfuse::ModelRecord model = generators::random_model(4, 1, rng);
  const MatrixXd K =
      gpfuse::kernel_matrix(model.q.Z, model.q.Z, model.kernel);
  const gpfuse::PsdFactor Fk = gpfuse::chol_psd(K);
  const double kl = gpfuse::kl_gauss(model.q.mu, model.q.L, Fk);
  const gpfuse::PsdFactor Fq{model.q.L, 0.0};
  oracles::MvnSampler sampler(model.q.mu, model.q.L, 555);
  const VectorXd zero = VectorXd::Zero(4);
  const auto est = oracles::mc_estimate(
      [&]() {
        const VectorXd u = sampler();
        return oracles::mvn_log_density(u, model.q.mu, Fq) -
               oracles::mvn_log_density(u, zero, Fk);
      },
      1'000'000);
  INFO("kl=" << kl << " mc=" << est.mean << " se=" << est.std_error);
  REQUIRE(est.within(kl, 3.0));
}

TEST_CASE("empty dataset at the prior gives a zero bound") {
  std::mt19937_64 rng(46);
  gpfuse::ModelRecord model = generators::random_model(3, 1, rng);
  const MatrixXd K =
      gpfuse::kernel_matrix(model.q.Z, model.q.Z, model.kernel);
  model.q.mu.setZero();
  model.q.L = gpfuse::chol_psd(K).L;
  const gpfuse::Dataset empty(MatrixXd::Zero(0, 1), VectorXd::Zero(0),
                              *model.likelihood);
  REQUIRE(gpfuse::local_elbo(empty, model, gpfuse::gh_rule(20)) ==
          Approx(0.0).margin(1e-10));
}

TEST_CASE("single Gaussian point matches the hand-assembled closed form") {
  // Scalar model: one inducing input, one data point, everything explicit.
  gpfuse::ModelRecord model;
  const double z = 0.3, x = 1.1, y = 0.7;
  const double ell = 0.9, sa = 1.3, mu = 0.4, l11 = 0.6, sn2 = 0.5;
  model.q.Z = MatrixXd::Constant(1, 1, z);
  model.q.mu = VectorXd::Constant(1, mu);
  model.q.L = MatrixXd::Constant(1, 1, l11);
  model.kernel = gpfuse::KernelParams::from_values(ell, sa);
  model.likelihood = gpfuse::Likelihood::gaussian(sn2);

  const double sa2 = model.kernel.amplitude_sq();
  const double l2 = model.kernel.lengthscale() * model.kernel.lengthscale();
  const double kzx = sa2 * std::exp(-(x - z) * (x - z) / (2.0 * l2));
  const double a = kzx / sa2;
  const double m = a * mu;
  const double s = l11 * l11;
  const double v = sa2 - a * kzx + a * a * s;
  const double e_term =
      -0.5 * std::log(gpfuse::kTwoPi * sn2) - ((y - m) * (y - m) + v) / (2.0 * sn2);
  const double kl =
      0.5 * (s / sa2 + mu * mu / sa2 - 1.0 + std::log(sa2) - std::log(s));
  gpfuse::Dataset data(MatrixXd::Constant(1, 1, x), VectorXd::Constant(1, y),
                       *model.likelihood);
  REQUIRE(gpfuse::local_elbo(data, model, gpfuse::gh_rule(20)) ==
          Approx(e_term - kl).epsilon(1e-12));
}

TEST_CASE("variational bound never exceeds the dense log marginal") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 12; ++trial) {
    const Eigen::Index n = 4 + trial;
    const Eigen::Index m = 2 + trial % 3;
    gpfuse::ModelRecord model = generators::random_model(m, 1, rng);
    gpfuse::Dataset data =
        generators::random_dataset(n, 1, *model.likelihood, rng);
    const double elbo = gpfuse::local_elbo(data, model, gpfuse::gh_rule(20));
    const double exact = oracles::dense_gp_log_marginal(
        data.X, data.y, model.kernel, model.likelihood->noise_var());
    REQUIRE(elbo <= exact + 1e-9);
  }
}

namespace {

Eigen::VectorXd flatten_params(const gpfuse::ModelRecord& model) {
  const Eigen::Index m = model.num_inducing();
  const Eigen::Index p = model.input_dim();
  const bool gaussian = model.likelihood->kind == gpfuse::LikKind::Gaussian;
  Eigen::VectorXd theta(m + m * (m + 1) / 2 + 2 + (gaussian ? 1 : 0) + m * p);
  Eigen::Index off = 0;
  theta.segment(off, m) = model.q.mu;
  off += m;
  theta.segment(off, m * (m + 1) / 2) = gpfuse::pack_lower(model.q.L);
  off += m * (m + 1) / 2;
  theta[off++] = model.kernel.log_lengthscale;
  theta[off++] = model.kernel.log_amplitude;
  if (gaussian) theta[off++] = model.likelihood->log_noise_var;
  theta.segment(off, m * p) =
      Eigen::Map<const Eigen::VectorXd>(model.q.Z.data(), m * p);
  return theta;
}

gpfuse::ModelRecord unflatten_params(const gpfuse::ModelRecord& like,
                                     const Eigen::VectorXd& theta) {
  gpfuse::ModelRecord model = like;
  const Eigen::Index m = like.num_inducing();
  const Eigen::Index p = like.input_dim();
  const bool gaussian = like.likelihood->kind == gpfuse::LikKind::Gaussian;
  Eigen::Index off = 0;
  model.q.mu = theta.segment(off, m);
  off += m;
  model.q.L = gpfuse::unpack_lower(theta.segment(off, m * (m + 1) / 2), m);
  off += m * (m + 1) / 2;
  model.kernel.log_lengthscale = theta[off++];
  model.kernel.log_amplitude = theta[off++];
  if (gaussian) model.likelihood->log_noise_var = theta[off++];
  model.q.Z = Eigen::Map<const MatrixXd>(theta.data() + off, m, p);
  return model;
}

Eigen::VectorXd flatten_gradient(const gpfuse::LocalGradient& g,
                                 bool gaussian) {
  const Eigen::Index m = g.mu.size();
  const Eigen::Index p = g.Z.cols();
  Eigen::VectorXd out(m + m * (m + 1) / 2 + 2 + (gaussian ? 1 : 0) + m * p);
  Eigen::Index off = 0;
  out.segment(off, m) = g.mu;
  off += m;
  out.segment(off, m * (m + 1) / 2) = gpfuse::pack_lower(g.L);
  off += m * (m + 1) / 2;
  out[off++] = g.log_lengthscale;
  out[off++] = g.log_amplitude;
  if (gaussian) out[off++] = g.log_noise_var;
  out.segment(off, m * p) =
      Eigen::Map<const Eigen::VectorXd>(g.Z.data(), m * p);
  return out;
}

}  // namespace

TEST_CASE("bound gradients match central finite differences") {
  const gpfuse::QuadratureRule rule = gpfuse::gh_rule(20);
  std::mt19937_64 rng(48);
  for (int trial = 0; trial < 10; ++trial) {
    const bool gaussian = trial % 2 == 0;
    gpfuse::ModelRecord model = generators::random_model(3, 1, rng, gaussian);
    gpfuse::Dataset data =
        generators::random_dataset(6, 1, *model.likelihood, rng);
    const gpfuse::LocalGradient grad =
        gpfuse::local_elbo_grad(data, model, rule);
    const Eigen::VectorXd analytic = flatten_gradient(grad, gaussian);
    const Eigen::VectorXd theta0 = flatten_params(model);
    const auto objective = [&](const Eigen::VectorXd& theta) {
      return gpfuse::local_elbo(data, unflatten_params(model, theta), rule);
    };
    for (Eigen::Index i = 0; i < theta0.size(); ++i) {
      const double fd = oracles::central_fd(objective, theta0, i);
      INFO("trial " << trial << " param " << i << " analytic " << analytic[i]
                    << " fd " << fd);
      REQUIRE(oracles::fd_relative_error(analytic[i], fd) < 1e-4);
    }
  }
}

TEST_CASE("KL gradient in mu vanishes at the prior") {
  std::mt19937_64 rng(49);
  gpfuse::ModelRecord model = generators::random_model(4, 1, rng);
  const MatrixXd K =
      gpfuse::kernel_matrix(model.q.Z, model.q.Z, model.kernel);
  model.q.mu.setZero();
  model.q.L = gpfuse::chol_psd(K).L;
  const gpfuse::Dataset empty(MatrixXd::Zero(0, 1), VectorXd::Zero(0),
                              *model.likelihood);
  const gpfuse::LocalGradient grad =
      gpfuse::local_elbo_grad(empty, model, gpfuse::gh_rule(20));
  REQUIRE(grad.mu.cwiseAbs().maxCoeff() == Approx(0.0).margin(1e-10));
}

TEST_CASE("fit_local recovers hyperparameters from prior-generated data") {
  // f drawn from the model's own prior, so the fitted kernel should land
  // near the truth.
  const double true_ell = 0.8, true_sa = 2.0, true_noise = 0.1;
  std::mt19937_64 rng(50);
  const int n = 300;
  MatrixXd X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = 5.0 * (i + 0.5) / n;
  const gpfuse::KernelParams psi_true =
      gpfuse::KernelParams::from_values(true_ell, true_sa);
  MatrixXd K = gpfuse::kernel_matrix(X, X, psi_true);
  K.diagonal().array() += 1e-8;
  oracles::MvnSampler sample_f(VectorXd::Zero(n), gpfuse::chol_psd(K).L, 999);
  VectorXd f = sample_f();
  std::normal_distribution<double> noise(0.0, std::sqrt(true_noise));
  VectorXd y = f;
  for (int i = 0; i < n; ++i) y[i] += noise(rng);
  gpfuse::Dataset data(X, y, gpfuse::Likelihood::gaussian(1.0));

  gpfuse::VEMConfig config;
  config.optimizer = gpfuse::VEMConfig::Optimizer::Lbfgs;
  config.lbfgs_max_iter = 80;
  config.tol = 1e-9;
  const gpfuse::LocalFitResult fit =
      gpfuse::fit_local(data, 25, config, 1, "recovery");
  const double ell = fit.model.kernel.lengthscale();
  const double sa = fit.model.kernel.amplitude();
  INFO("fitted lengthscale " << ell << " amplitude " << sa);
  REQUIRE(ell > 0.5 * true_ell);
  REQUIRE(ell < 2.0 * true_ell);
  REQUIRE(sa > 0.5 * true_sa);
  REQUIRE(sa < 2.0 * true_sa);
  // Predictive variances stay positive on the fitted model.
  const gpfuse::Marginals marg = gpfuse::predictive_marginals(fit.model, X);
  REQUIRE(marg.var.minCoeff() > 0.0);
}

TEST_CASE("toy fit improves the bound") {
  gpfuse::ToySpec spec;
  spec.function = gpfuse::ToyFunction::Biased;
  spec.n = 500;
  spec.noise_var = 2.0;
  spec.lo = 0.0;
  spec.hi = 1.1;
  spec.seed = 7;
  gpfuse::ToyData toy = gpfuse::gen_toy(spec);
  toy.data.likelihood = gpfuse::Likelihood::gaussian(1.0);

  gpfuse::VEMConfig config;  // paper rates, a few outer iterations
  config.max_outer = 5;
  const gpfuse::LocalFitResult fit =
      gpfuse::fit_local(toy.data, 15, config, 3, "toy");
  REQUIRE(fit.optimization.trace.size() > 1);
  REQUIRE(fit.optimization.best_objective > fit.optimization.trace.front());
}

TEST_CASE("experiment (i) configuration file is accepted verbatim") {
  const auto j = nlohmann::json::parse(R"({
    "ve_steps": 30, "vm_steps": 10,
    "eta_mu": 1e-3, "eta_L": 1e-6, "eta_psi": 1e-8, "eta_Z": 1e-8
  })");
  const gpfuse::VEMConfig config = gpfuse::vem_config_from_json(j);
  REQUIRE(config.ve_steps == 30);
  REQUIRE(config.vm_steps == 10);
  REQUIRE(config.eta_mu == 1e-3);
  REQUIRE(config.eta_L == 1e-6);
  REQUIRE(config.eta_psi == 1e-8);
  REQUIRE(config.eta_Z == 1e-8);
}

TEST_CASE("fit_local is bit-reproducible under a fixed seed") {
  std::mt19937_64 rng(51);
  gpfuse::Dataset data =
      generators::random_dataset(40, 3, gpfuse::Likelihood::gaussian(1.0), rng);
  gpfuse::VEMConfig config;
  config.max_outer = 3;
  const gpfuse::LocalFitResult a = gpfuse::fit_local(data, 8, config, 5, "r");
  const gpfuse::LocalFitResult b = gpfuse::fit_local(data, 8, config, 5, "r");
  REQUIRE(gpfuse::to_json(a.model).dump() == gpfuse::to_json(b.model).dump());
}

TEST_CASE("fit_local validates its preconditions") {
  std::mt19937_64 rng(52);
  gpfuse::Dataset data =
      generators::random_dataset(5, 1, gpfuse::Likelihood::gaussian(1.0), rng);
  REQUIRE_THROWS_AS(gpfuse::fit_local(data, 6, gpfuse::VEMConfig{}, 0),
                    std::invalid_argument);
}
