#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include "gpfuse/dataset.hpp"
#include "gpfuse/ensemble.hpp"
#include "gpfuse/errors.hpp"
#include "gpfuse/model.hpp"

namespace gpfuse {

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

struct AxisMap {
  double lo, hi, px0, px1;
  double operator()(double v) const {
    return px0 + (v - lo) / (hi - lo) * (px1 - px0);
  }
};

}  // namespace detail

/// Predictive mean with a +-2 sigma band, inducing-input ticks and an
/// optional data scatter for 1-D models; a probability heat grid plus class
/// scatter for 2-D Bernoulli models. Output is plain deterministic SVG text.
inline void plot_model(const ModelRecord& model, const std::string& path,
                       const std::optional<Dataset>& data = std::nullopt,
                       std::optional<std::pair<double, double>> range =
                           std::nullopt) {
  const Eigen::Index p = model.input_dim();
  if (p > 2) {
    throw UnsupportedDimensionError(
        "plot: inputs of dimension " + std::to_string(p) + " not supported");
  }
  const int width = 720, height = 420, margin = 40;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write SVG file: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  if (p == 1) {
    double lo = model.q.Z.col(0).minCoeff();
    double hi = model.q.Z.col(0).maxCoeff();
    if (data.has_value() && data->size() > 0) {
      lo = std::min(lo, data->X.col(0).minCoeff());
      hi = std::max(hi, data->X.col(0).maxCoeff());
    }
    if (range.has_value()) {
      lo = range->first;
      hi = range->second;
    }
    if (!(hi > lo)) hi = lo + 1.0;

    const int grid = 400;
    Eigen::MatrixXd Xg(grid, 1);
    for (int i = 0; i < grid; ++i) {
      Xg(i, 0) = lo + (hi - lo) * i / (grid - 1.0);
    }
    const Marginals marg = predictive_marginals(model, Xg);
    Eigen::VectorXd upper = marg.mean, lower = marg.mean;
    for (int i = 0; i < grid; ++i) {
      const double sd = std::sqrt(marg.var[i]);
      upper[i] += 2.0 * sd;
      lower[i] -= 2.0 * sd;
    }
    double ylo = lower.minCoeff(), yhi = upper.maxCoeff();
    if (data.has_value() && data->size() > 0) {
      ylo = std::min(ylo, data->y.minCoeff());
      yhi = std::max(yhi, data->y.maxCoeff());
    }
    const double pad = 0.05 * (yhi - ylo + 1e-9);
    ylo -= pad;
    yhi += pad;
    const detail::AxisMap xm{lo, hi, double(margin), double(width - margin)};
    const detail::AxisMap ym{ylo, yhi, double(height - margin), double(margin)};

    out << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" "
           "points=\"";
    for (int i = 0; i < grid; ++i) {
      out << detail::svg_num(xm(Xg(i, 0))) << ","
          << detail::svg_num(ym(upper[i])) << " ";
    }
    for (int i = grid - 1; i >= 0; --i) {
      out << detail::svg_num(xm(Xg(i, 0))) << ","
          << detail::svg_num(ym(lower[i])) << " ";
    }
    out << "\"/>\n";

    if (data.has_value()) {
      for (Eigen::Index i = 0; i < data->size(); ++i) {
        out << "<circle cx=\"" << detail::svg_num(xm(data->X(i, 0)))
            << "\" cy=\"" << detail::svg_num(ym(data->y[i]))
            << "\" r=\"1.5\" fill=\"#636363\" fill-opacity=\"0.6\"/>\n";
      }
    }

    out << "<path fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" d=\"";
    for (int i = 0; i < grid; ++i) {
      out << (i == 0 ? "M" : "L") << detail::svg_num(xm(Xg(i, 0))) << " "
          << detail::svg_num(ym(marg.mean[i]));
    }
    out << "\"/>\n";

    for (Eigen::Index i = 0; i < model.q.Z.rows(); ++i) {
      const double x = xm(model.q.Z(i, 0));
      out << "<line x1=\"" << detail::svg_num(x) << "\" y1=\""
          << height - margin + 2 << "\" x2=\"" << detail::svg_num(x)
          << "\" y2=\"" << height - margin + 12
          << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    }
  } else {
    // 2-D Bernoulli heat grid of p(y = 1).
    Eigen::VectorXd lo = model.q.Z.colwise().minCoeff();
    Eigen::VectorXd hi = model.q.Z.colwise().maxCoeff();
    if (data.has_value() && data->size() > 0) {
      lo = lo.cwiseMin(data->X.colwise().minCoeff().transpose());
      hi = hi.cwiseMax(data->X.colwise().maxCoeff().transpose());
    }
    const int grid = 60;
    const QuadratureRule rule = gh_rule(20);
    const Likelihood lik = Likelihood::bernoulli();
    const detail::AxisMap xm{lo[0], hi[0], double(margin),
                             double(width - margin)};
    const detail::AxisMap ym{lo[1], hi[1], double(height - margin),
                             double(margin)};
    const double cell_w = (width - 2.0 * margin) / grid;
    const double cell_h = (height - 2.0 * margin) / grid;
    Eigen::MatrixXd Xg(grid * grid, 2);
    for (int r = 0; r < grid; ++r) {
      for (int c = 0; c < grid; ++c) {
        Xg(r * grid + c, 0) = lo[0] + (hi[0] - lo[0]) * (c + 0.5) / grid;
        Xg(r * grid + c, 1) = lo[1] + (hi[1] - lo[1]) * (r + 0.5) / grid;
      }
    }
    const Marginals marg = predictive_marginals(model, Xg);
    for (int r = 0; r < grid; ++r) {
      for (int c = 0; c < grid; ++c) {
        const Eigen::Index idx = r * grid + c;
        const double p1 = predictive_density(1.0, marg.mean[idx],
                                             marg.var[idx], lik, rule);
        const int shade = static_cast<int>(std::lround(255.0 * (1.0 - p1)));
        out << "<rect x=\"" << detail::svg_num(margin + c * cell_w)
            << "\" y=\"" << detail::svg_num(height - margin - (r + 1) * cell_h)
            << "\" width=\"" << detail::svg_num(cell_w) << "\" height=\""
            << detail::svg_num(cell_h) << "\" fill=\"rgb(" << shade << ","
            << shade << ",255)\"/>\n";
      }
    }
    if (data.has_value()) {
      for (Eigen::Index i = 0; i < data->size(); ++i) {
        const char* color = data->y[i] > 0.5 ? "#d62728" : "#2ca02c";
        out << "<circle cx=\"" << detail::svg_num(xm(data->X(i, 0)))
            << "\" cy=\"" << detail::svg_num(ym(data->X(i, 1)))
            << "\" r=\"2\" fill=\"" << color << "\"/>\n";
      }
    }
    for (Eigen::Index i = 0; i < model.q.Z.rows(); ++i) {
      out << "<circle cx=\"" << detail::svg_num(xm(model.q.Z(i, 0)))
          << "\" cy=\"" << detail::svg_num(ym(model.q.Z(i, 1)))
          << "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
    }
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("write failed for SVG file: " + path);
}

}  // namespace gpfuse
