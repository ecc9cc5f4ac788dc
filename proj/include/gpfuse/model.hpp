#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpfuse/kernel.hpp"
#include "gpfuse/likelihood.hpp"
#include "gpfuse/linalg.hpp"
#include "gpfuse/variational.hpp"

namespace gpfuse {

/// Everything a fitted model needs to be predicted from or merged into an
/// ensemble later: variational parameters, kernel hyperparameters, inducing
/// inputs, the observation model and a little provenance. This record is the
/// only thing that crosses task boundaries; the training data never does.
///
/// Serialized as a versioned JSON document:
///   {version, task_id, likelihood:{kind, noise_var?}, kernel:{lengthscale,
///    amplitude}, Z:[[..]], mu:[..], L:[packed lower triangle], meta:{..}}
struct ModelRecord {
  GaussianVariational q;
  KernelParams kernel;
  // Ensembles built from mixed-likelihood dictionaries store no observation
  // model; prediction then requires an explicit likelihood argument.
  std::optional<Likelihood> likelihood;

  struct Meta {
    std::string task_id;
    std::int64_t n_seen = 0;
    double elbo = 0.0;
    // Present on fitted ensembles only.
    std::vector<std::string> source_task_ids;
    std::optional<double> bound_value;
    int pyramid_depth = 0;
  };
  Meta meta;

  Eigen::Index num_inducing() const { return q.num_inducing(); }
  Eigen::Index input_dim() const { return q.input_dim(); }

  void validate() const { q.validate(); }
};

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const ModelRecord& model) {
  nlohmann::json j;
  j["version"] = kModelFormatVersion;
  j["task_id"] = model.meta.task_id;
  if (model.likelihood.has_value()) {
    if (model.likelihood->kind == LikKind::Gaussian) {
      j["likelihood"] = {{"kind", "gaussian"},
                         {"noise_var", model.likelihood->noise_var()}};
    } else {
      j["likelihood"] = {{"kind", "bernoulli"}};
    }
  } else {
    j["likelihood"] = {{"kind", "none"}};
  }
  j["kernel"] = {{"lengthscale", model.kernel.lengthscale()},
                 {"amplitude", model.kernel.amplitude()}};
  nlohmann::json zrows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.q.Z.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < model.q.Z.cols(); ++c) {
      row.push_back(model.q.Z(i, c));
    }
    zrows.push_back(std::move(row));
  }
  j["Z"] = std::move(zrows);
  j["mu"] = std::vector<double>(model.q.mu.data(),
                                model.q.mu.data() + model.q.mu.size());
  const Eigen::VectorXd packed = pack_lower(model.q.L);
  j["L"] = std::vector<double>(packed.data(), packed.data() + packed.size());
  nlohmann::json meta;
  meta["n_seen"] = model.meta.n_seen;
  meta["elbo"] = model.meta.elbo;
  if (!model.meta.source_task_ids.empty()) {
    meta["source_task_ids"] = model.meta.source_task_ids;
  }
  if (model.meta.bound_value.has_value()) {
    meta["bound_value"] = *model.meta.bound_value;
  }
  if (model.meta.pyramid_depth > 0) {
    meta["pyramid_depth"] = model.meta.pyramid_depth;
  }
  j["meta"] = std::move(meta);
  return j;
}

inline ModelRecord model_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != kModelFormatVersion) {
    throw std::runtime_error("model JSON: unsupported or missing version");
  }
  ModelRecord model;
  model.meta.task_id = j.at("task_id").get<std::string>();
  const auto& lik = j.at("likelihood");
  const std::string kind = lik.at("kind").get<std::string>();
  if (kind == "gaussian") {
    model.likelihood = Likelihood::gaussian(lik.at("noise_var").get<double>());
  } else if (kind == "bernoulli") {
    model.likelihood = Likelihood::bernoulli();
  } else if (kind == "none") {
    model.likelihood = std::nullopt;
  } else {
    throw std::runtime_error("model JSON: unknown likelihood kind '" + kind + "'");
  }
  model.kernel =
      KernelParams::from_values(j.at("kernel").at("lengthscale").get<double>(),
                                j.at("kernel").at("amplitude").get<double>());
  const auto& zrows = j.at("Z");
  const Eigen::Index m = static_cast<Eigen::Index>(zrows.size());
  if (m == 0) throw std::runtime_error("model JSON: empty inducing set");
  const Eigen::Index p = static_cast<Eigen::Index>(zrows.at(0).size());
  model.q.Z.resize(m, p);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (static_cast<Eigen::Index>(zrows.at(i).size()) != p) {
      throw std::runtime_error("model JSON: ragged Z rows");
    }
    for (Eigen::Index c = 0; c < p; ++c) {
      model.q.Z(i, c) = zrows.at(i).at(c).get<double>();
    }
  }
  const auto mu = j.at("mu").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(mu.size()) != m) {
    throw std::runtime_error("model JSON: mu size mismatch");
  }
  model.q.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), m);
  const auto packed = j.at("L").get<std::vector<double>>();
  model.q.L = unpack_lower(
      Eigen::Map<const Eigen::VectorXd>(packed.data(),
                                        static_cast<Eigen::Index>(packed.size())),
      m);
  const auto& meta = j.at("meta");
  model.meta.n_seen = meta.at("n_seen").get<std::int64_t>();
  model.meta.elbo = meta.at("elbo").get<double>();
  if (meta.contains("source_task_ids")) {
    model.meta.source_task_ids =
        meta.at("source_task_ids").get<std::vector<std::string>>();
  }
  if (meta.contains("bound_value")) {
    model.meta.bound_value = meta.at("bound_value").get<double>();
  }
  if (meta.contains("pyramid_depth")) {
    model.meta.pyramid_depth = meta.at("pyramid_depth").get<int>();
  }
  model.validate();
  return model;
}

inline void save_model(const ModelRecord& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << to_json(model).dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for model file: " + path);
}

inline ModelRecord load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace gpfuse
