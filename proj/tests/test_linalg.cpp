#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "gpfuse/linalg.hpp"
#include "support/oracles.hpp"

using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("chol_psd factors the identity with zero jitter") {
  const MatrixXd I = MatrixXd::Identity(4, 4);
  const gpfuse::PsdFactor f = gpfuse::chol_psd(I, 1e-6);
  REQUIRE(f.jitter == 0.0);
  REQUIRE((f.L - I).norm() == Approx(0.0).margin(1e-15));
}

TEST_CASE("chol_psd escalates jitter on a rank-deficient matrix") {
  MatrixXd A(2, 2);
  A << 1.0, 1.0, 1.0, 1.0;
  const gpfuse::PsdFactor f = gpfuse::chol_psd(A, 1e-6);
  REQUIRE(f.jitter > 0.0);
  MatrixXd Aj = A;
  Aj.diagonal().array() += f.jitter;
  const MatrixXd R = f.L * f.L.transpose();
  REQUIRE((R - Aj).norm() / Aj.norm() < 1e-10);
}

TEST_CASE("chol_psd rejects non-finite input") {
  MatrixXd A = MatrixXd::Identity(3, 3);
  A(1, 2) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(gpfuse::chol_psd(A, 1e-6),
                    gpfuse::NotPositiveDefiniteError);
}

TEST_CASE("chol_psd rejects a hopeless matrix") {
  MatrixXd A(2, 2);
  A << -5.0, 0.0, 0.0, -5.0;
  REQUIRE_THROWS_AS(gpfuse::chol_psd(A, 1e-6),
                    gpfuse::NotPositiveDefiniteError);
}

TEST_CASE("solve with an identity factor returns the rhs") {
  const gpfuse::PsdFactor f = gpfuse::chol_psd(MatrixXd::Identity(3, 3));
  MatrixXd B(3, 2);
  B << 1, 2, 3, 4, 5, 6;
  REQUIRE((gpfuse::solve_psd(f, B) - B).norm() == Approx(0.0).margin(1e-14));
  REQUIRE(gpfuse::logdet(f) == Approx(0.0).margin(1e-15));
}

TEST_CASE("solve rejects mismatched shapes") {
  const gpfuse::PsdFactor f = gpfuse::chol_psd(MatrixXd::Identity(3, 3));
  REQUIRE_THROWS_AS(f.solve(MatrixXd::Zero(4, 1)), gpfuse::ShapeError);
}

TEST_CASE("logdet matches a cofactor-expansion determinant oracle") {
  std::mt19937_64 rng(17);
  const MatrixXd A = oracles::random_spd(5, rng);
  const gpfuse::PsdFactor f = gpfuse::chol_psd(A);
  REQUIRE(f.jitter == 0.0);
  const double det = oracles::brute_determinant(A);
  REQUIRE(f.logdet() ==
          Approx(std::log(det)).epsilon(1e-8));
}

TEST_CASE("factor round trip: L L^T = A + jitter I, positive diagonal") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + trial % 6;
    const MatrixXd A = oracles::random_spd(n, rng, trial % 3 == 0 ? 0.0 : 0.5);
    const gpfuse::PsdFactor f = gpfuse::chol_psd(A);
    MatrixXd Aj = A;
    Aj.diagonal().array() += f.jitter;
    REQUIRE((f.L * f.L.transpose() - Aj).norm() / Aj.norm() < 1e-10);
    REQUIRE(f.L.diagonal().minCoeff() > 0.0);
  }
}

TEST_CASE("solve_psd(chol_psd(A), A) is the identity") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 2 + trial;
    const MatrixXd A = oracles::random_spd(n, rng);
    const gpfuse::PsdFactor f = gpfuse::chol_psd(A);
    const MatrixXd R = gpfuse::solve_psd(f, A);
    REQUIRE((R - MatrixXd::Identity(n, n)).norm() < 1e-8 * n);
  }
}

TEST_CASE("pack_lower / unpack_lower round trip") {
  std::mt19937_64 rng(5);
  MatrixXd L = oracles::random_matrix(4, 4, rng);
  L = L.triangularView<Eigen::Lower>();
  const VectorXd packed = gpfuse::pack_lower(L);
  REQUIRE(packed.size() == 10);
  REQUIRE((gpfuse::unpack_lower(packed, 4) - L).norm() == 0.0);
  REQUIRE_THROWS_AS(gpfuse::unpack_lower(packed, 5), gpfuse::ShapeError);
}
