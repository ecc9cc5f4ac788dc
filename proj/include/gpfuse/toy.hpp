#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpfuse/dataset.hpp"

namespace gpfuse {

inline constexpr double kPi = 3.1415926535897932384626433832795;

/// The two sinusoids behind the synthetic regression experiments; the biased
/// variant adds an incremental trend.
inline double toy_f(double x) {
  return 4.5 * std::cos(2.0 * kPi * x + 1.5 * kPi) -
         3.0 * std::sin(4.3 * kPi * x + 0.3 * kPi);
}

inline double toy_f_biased(double x) { return toy_f(x) + 3.0 * x - 7.5; }

enum class ToyFunction { Plain, Biased };

struct ToySpec {
  ToyFunction function = ToyFunction::Plain;
  int n = 0;
  double noise_var = 0.0;
  double lo = 0.0;
  double hi = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1) throw std::invalid_argument("ToySpec: n must be >= 1");
    if (!(hi > lo)) throw std::invalid_argument("ToySpec: need hi > lo");
    if (noise_var < 0.0) {
      throw std::invalid_argument("ToySpec: noise variance must be >= 0");
    }
  }
};

struct ToyData {
  Dataset data;            // Gaussian-likelihood dataset with observed y
  Eigen::VectorXd truth;   // noiseless f(x) per row
};

/// Uniform inputs on [lo, hi], outputs f(x) + eps with eps ~ N(0, noise_var).
/// Identical seeds give bit-identical datasets.
inline ToyData gen_toy(const ToySpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(spec.lo, spec.hi);
  Eigen::MatrixXd X(spec.n, 1);
  for (int i = 0; i < spec.n; ++i) X(i, 0) = uniform(rng);
  Eigen::VectorXd f(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    f[i] = spec.function == ToyFunction::Plain ? toy_f(X(i, 0))
                                               : toy_f_biased(X(i, 0));
  }
  Eigen::VectorXd y = f;
  if (spec.noise_var > 0.0) {
    std::normal_distribution<double> noise(0.0, std::sqrt(spec.noise_var));
    for (int i = 0; i < spec.n; ++i) y[i] += noise(rng);
  }
  // Noise defaults to 0.1 * var as an initial guess downstream; the actual
  // likelihood is configured by the caller.
  ToyData out;
  out.data = Dataset(std::move(X), std::move(y),
                     Likelihood::gaussian(std::max(spec.noise_var, 1e-2)));
  out.truth = std::move(f);
  return out;
}

enum class PartitionMode { Contiguous, Overlapping };

/// Split a dataset into K tasks. Contiguous: sort by the first input
/// coordinate and slice into K consecutive blocks (the partitions concatenate
/// perfectly). Overlapping: K subsets of size ceil(N/K) drawn with
/// replacement across the whole index range.
inline std::vector<Dataset> partition(const Dataset& data, int num_tasks,
                                      PartitionMode mode, std::uint64_t seed) {
  const Eigen::Index n = data.size();
  if (num_tasks < 1 || num_tasks > n) {
    throw std::invalid_argument("partition: need 1 <= K <= N, got K=" +
                                std::to_string(num_tasks) +
                                " N=" + std::to_string(n));
  }
  std::vector<Dataset> out;
  out.reserve(num_tasks);
  if (mode == PartitionMode::Contiguous) {
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                       return data.X(a, 0) < data.X(b, 0);
                     });
    for (int k = 0; k < num_tasks; ++k) {
      const Eigen::Index begin = (n * k) / num_tasks;
      const Eigen::Index end = (n * (k + 1)) / num_tasks;
      Eigen::MatrixXd X(end - begin, data.X.cols());
      Eigen::VectorXd y(end - begin);
      for (Eigen::Index i = begin; i < end; ++i) {
        X.row(i - begin) = data.X.row(order[i]);
        y[i - begin] = data.y[order[i]];
      }
      out.emplace_back(std::move(X), std::move(y), data.likelihood);
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    const Eigen::Index size = (n + num_tasks - 1) / num_tasks;
    for (int k = 0; k < num_tasks; ++k) {
      Eigen::MatrixXd X(size, data.X.cols());
      Eigen::VectorXd y(size);
      for (Eigen::Index i = 0; i < size; ++i) {
        const Eigen::Index j = pick(rng);
        X.row(i) = data.X.row(j);
        y[i] = data.y[j];
      }
      out.emplace_back(std::move(X), std::move(y), data.likelihood);
    }
  }
  return out;
}

/// Deterministic train/test split: shuffle indices by seed, keep the first
/// train_fraction for training.
struct SplitData {
  Dataset train, test;
  Eigen::VectorXd train_truth, test_truth;
};

inline SplitData train_test_split(const Dataset& data,
                                  const Eigen::VectorXd& truth,
                                  double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
    throw std::invalid_argument("train_test_split: fraction in (0,1)");
  }
  const Eigen::Index n = data.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const Eigen::Index n_train =
      std::max<Eigen::Index>(1, static_cast<Eigen::Index>(n * train_fraction));
  SplitData out;
  const auto take = [&](Eigen::Index begin, Eigen::Index end, Dataset* d,
                        Eigen::VectorXd* t) {
    Eigen::MatrixXd X(end - begin, data.X.cols());
    Eigen::VectorXd y(end - begin);
    t->resize(end - begin);
    for (Eigen::Index i = begin; i < end; ++i) {
      X.row(i - begin) = data.X.row(order[i]);
      y[i - begin] = data.y[order[i]];
      (*t)[i - begin] = truth[order[i]];
    }
    *d = Dataset(std::move(X), std::move(y), data.likelihood);
  };
  take(0, n_train, &out.train, &out.train_truth);
  take(n_train, n, &out.test, &out.test_truth);
  return out;
}

}  // namespace gpfuse
