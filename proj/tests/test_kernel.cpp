#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "gpfuse/kernel.hpp"
#include "gpfuse/linalg.hpp"
#include "support/oracles.hpp"

using Catch::Approx;
using Eigen::MatrixXd;
using gpfuse::KernelParams;

TEST_CASE("zero distance gives amplitude squared") {
  MatrixXd X(1, 1);
  X << 0.0;
  const KernelParams psi = KernelParams::from_values(1.0, 1.0);
  const MatrixXd K = gpfuse::kernel_matrix(X, X, psi);
  REQUIRE(K(0, 0) == 1.0);
}

TEST_CASE("one lengthscale of separation gives exp(-1/2)") {
  const double ell = 0.73;
  MatrixXd X1(1, 1), X2(1, 1);
  X1 << 0.0;
  X2 << ell;
  const KernelParams psi = KernelParams::from_values(ell, 1.0);
  const MatrixXd K = gpfuse::kernel_matrix(X1, X2, psi);
  REQUIRE(K(0, 0) == Approx(std::exp(-0.5)).epsilon(1e-12));
  REQUIRE(K(0, 0) == Approx(0.6065306597126334).epsilon(1e-12));
}

TEST_CASE("vanishing amplitude sends the matrix to zero") {
  std::mt19937_64 rng(2);
  const MatrixXd X = oracles::random_matrix(4, 2, rng);
  const MatrixXd K =
      gpfuse::kernel_matrix(X, X, KernelParams::from_values(1.0, 1e-160));
  REQUIRE(K.cwiseAbs().maxCoeff() <= 1e-300);
  // Entries scale exactly with amplitude^2.
  const MatrixXd K1 =
      gpfuse::kernel_matrix(X, X, KernelParams::from_values(1.0, 1.0));
  const MatrixXd K2 =
      gpfuse::kernel_matrix(X, X, KernelParams::from_values(1.0, 3.0));
  REQUIRE((K2 - 9.0 * K1).cwiseAbs().maxCoeff() < 1e-12 * 9.0);
}

TEST_CASE("kernel matrix is symmetric with exact diagonal and factors") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 3 + trial;
    const MatrixXd X = oracles::random_matrix(n, 1 + trial % 2, rng, 2.0);
    const double sa = 0.5 + 0.3 * trial;
    const KernelParams psi = KernelParams::from_values(0.8, sa);
    const MatrixXd K = gpfuse::kernel_matrix(X, X, psi);
    REQUIRE((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      REQUIRE(K(i, i) == psi.amplitude_sq());
    }
    const gpfuse::PsdFactor f = gpfuse::chol_psd(K);
    REQUIRE(f.jitter <= 1e-4 * psi.amplitude_sq());
  }
}

TEST_CASE("stationarity: translation leaves the matrix unchanged") {
  std::mt19937_64 rng(9);
  const MatrixXd X1 = oracles::random_matrix(5, 3, rng);
  const MatrixXd X2 = oracles::random_matrix(4, 3, rng);
  const KernelParams psi = KernelParams::from_values(1.3, 2.0);
  const MatrixXd K = gpfuse::kernel_matrix(X1, X2, psi);
  Eigen::RowVectorXd shift(3);
  shift << 0.37, -1.2, 5.0;
  const MatrixXd Ks = gpfuse::kernel_matrix(X1.rowwise() + shift,
                                            X2.rowwise() + shift, psi);
  REQUIRE((K - Ks).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("column count mismatch raises a shape error") {
  const MatrixXd X1 = MatrixXd::Zero(2, 2);
  const MatrixXd X2 = MatrixXd::Zero(2, 3);
  REQUIRE_THROWS_AS(
      gpfuse::kernel_matrix(X1, X2, KernelParams::from_values(1, 1)),
      gpfuse::ShapeError);
}

TEST_CASE("adjoint accumulators agree with finite differences") {
  std::mt19937_64 rng(23);
  const Eigen::Index m = 4, n = 3, p = 2;
  const MatrixXd Z0 = oracles::random_matrix(m, p, rng);
  const MatrixXd X = oracles::random_matrix(n, p, rng);
  const MatrixXd Gself = oracles::random_matrix(m, m, rng);
  const MatrixXd Gcross = oracles::random_matrix(m, n, rng);

  // theta = [log l, log sa, vec(Z)]
  const auto value = [&](const Eigen::VectorXd& theta) {
    KernelParams psi{theta[0], theta[1]};
    const MatrixXd Z =
        Eigen::Map<const MatrixXd>(theta.data() + 2, m, p);
    const MatrixXd K = gpfuse::kernel_matrix(Z, Z, psi);
    const MatrixXd C = gpfuse::kernel_matrix(Z, X, psi);
    return (Gself.cwiseProduct(K)).sum() + (Gcross.cwiseProduct(C)).sum();
  };

  Eigen::VectorXd theta(2 + m * p);
  theta[0] = std::log(0.9);
  theta[1] = std::log(1.4);
  theta.segment(2, m * p) = Eigen::Map<const Eigen::VectorXd>(Z0.data(), m * p);

  KernelParams psi{theta[0], theta[1]};
  const MatrixXd K = gpfuse::kernel_matrix(Z0, Z0, psi);
  const MatrixXd C = gpfuse::kernel_matrix(Z0, X, psi);
  double dll = 0.0, dla = 0.0;
  MatrixXd dZ = MatrixXd::Zero(m, p);
  gpfuse::accumulate_rbf_adjoint_self(psi, Z0, K, Gself, &dll, &dla, &dZ);
  gpfuse::accumulate_rbf_adjoint_cross(psi, Z0, X, C, Gcross, &dll, &dla, &dZ);

  Eigen::VectorXd analytic(theta.size());
  analytic[0] = dll;
  analytic[1] = dla;
  analytic.segment(2, m * p) = Eigen::Map<const Eigen::VectorXd>(dZ.data(), m * p);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double fd = oracles::central_fd(value, theta, i);
    REQUIRE(oracles::fd_relative_error(analytic[i], fd) < 1e-6);
  }
}
