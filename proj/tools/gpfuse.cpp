// gpfuse command-line front end: generate -> fit-local (per partition) ->
// ensemble -> predict / evaluate / baseline / plot. Model JSON files are the
// only channel between fit-local and ensemble; the ensemble never sees data.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gpfuse/baselines.hpp"
#include "gpfuse/csv.hpp"
#include "gpfuse/dataset.hpp"
#include "gpfuse/ensemble.hpp"
#include "gpfuse/errors.hpp"
#include "gpfuse/local_gp.hpp"
#include "gpfuse/manifest.hpp"
#include "gpfuse/metrics.hpp"
#include "gpfuse/model.hpp"
#include "gpfuse/svg_plot.hpp"
#include "gpfuse/toy.hpp"
#include "gpfuse/vem.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw CLI::ValidationError("--range", "expected lo:hi");
  }
  return {std::stod(text.substr(0, colon)), std::stod(text.substr(colon + 1))};
}

gpfuse::VEMConfig load_config(const std::string& path) {
  if (path.empty()) return gpfuse::VEMConfig{};
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return gpfuse::vem_config_from_json(j);
}

gpfuse::Likelihood parse_likelihood(const std::string& kind,
                                    double noise_var) {
  if (kind == "gaussian") return gpfuse::Likelihood::gaussian(noise_var);
  if (kind == "bernoulli") return gpfuse::Likelihood::bernoulli();
  throw std::runtime_error("unknown likelihood '" + kind + "'");
}

gpfuse::Dataset load_dataset(const std::string& path,
                             const gpfuse::Likelihood& lik, bool log1p) {
  gpfuse::CsvData csv = gpfuse::read_csv(path);
  if (log1p) {
    csv.y = (csv.y.array() + 1.0).log().matrix();
  }
  return gpfuse::Dataset(std::move(csv.X), std::move(csv.y), lik);
}

std::string default_manifest_path(const std::string& out) {
  return out + ".manifest.json";
}

void emit_manifest(const std::string& command, const nlohmann::json& config,
                   std::uint64_t seed,
                   const std::vector<std::string>& inputs,
                   const std::vector<std::string>& outputs, double wall,
                   const std::string& manifest_path) {
  gpfuse::RunManifest manifest;
  manifest.command = command;
  manifest.config = config;
  manifest.seed = seed;
  manifest.inputs = inputs;
  manifest.outputs = outputs;
  manifest.wall_clock_sec = wall;
  manifest.write(manifest_path);
}

/// Resolve the likelihood used at prediction time: an explicit flag wins,
/// then the model's own descriptor.
gpfuse::Likelihood prediction_likelihood(const gpfuse::ModelRecord& model,
                                         const std::string& flag,
                                         double noise_var_flag) {
  if (!flag.empty()) {
    if (flag == "gaussian") {
      double nv = noise_var_flag;
      if (!(nv > 0.0)) {
        if (model.likelihood &&
            model.likelihood->kind == gpfuse::LikKind::Gaussian) {
          nv = model.likelihood->noise_var();
        } else {
          throw std::runtime_error(
              "Gaussian prediction needs --noise-var (model stores none)");
        }
      }
      return gpfuse::Likelihood::gaussian(nv);
    }
    if (flag == "bernoulli") return gpfuse::Likelihood::bernoulli();
    throw std::runtime_error("unknown likelihood '" + flag + "'");
  }
  if (!model.likelihood.has_value()) {
    throw std::runtime_error(
        "model stores no likelihood; pass --likelihood explicitly");
  }
  gpfuse::Likelihood lik = *model.likelihood;
  if (lik.kind == gpfuse::LikKind::Gaussian && noise_var_flag > 0.0) {
    lik = gpfuse::Likelihood::gaussian(noise_var_flag);
  }
  return lik;
}

void write_predictions_csv(const std::string& path,
                           const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const gpfuse::GlobalPrediction& pred,
                           bool bernoulli,
                           const gpfuse::QuadratureRule& rule) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions: " + path);
  for (Eigen::Index c = 0; c < X.cols(); ++c) out << "x" << c << ",";
  out << "y,mean,var,log_density";
  if (bernoulli) out << ",p1";
  out << "\n";
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      out << gpfuse::detail::format_double(X(i, c)) << ",";
    }
    out << gpfuse::detail::format_double(y[i]) << ","
        << gpfuse::detail::format_double(pred.mean[i]) << ","
        << gpfuse::detail::format_double(pred.var[i]) << ","
        << gpfuse::detail::format_double(pred.log_density[i]);
    if (bernoulli) {
      const double p1 = gpfuse::predictive_density(
          1.0, pred.mean[i], pred.var[i], gpfuse::Likelihood::bernoulli(),
          rule);
      out << "," << gpfuse::detail::format_double(p1);
    }
    out << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse variational GP fitting and model-merging toolkit"};
  app.require_subcommand(1);

  // generate ---------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Write a synthetic toy CSV");
  std::string gen_function = "plain", gen_range = "0:1", gen_out;
  std::string gen_truth_out, gen_manifest;
  int gen_n = 100;
  double gen_noise = 2.0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--function", gen_function, "plain|biased")
      ->check(CLI::IsMember({"plain", "biased"}));
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--noise-var", gen_noise, "noise variance");
  gen->add_option("--range", gen_range, "input range lo:hi");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "output CSV")->required();
  gen->add_option("--truth-out", gen_truth_out,
                  "also write the noiseless f(x) CSV");
  gen->add_option("--manifest-out", gen_manifest, "manifest path");

  // fit-local ----------------------------------------------------------------
  auto* fitl = app.add_subcommand("fit-local", "Fit one local sparse GP");
  std::string fitl_data, fitl_lik = "gaussian", fitl_config, fitl_out;
  std::string fitl_task_id, fitl_manifest;
  int fitl_m = 10;
  std::uint64_t fitl_seed = 0;
  bool fitl_log1p = false;
  double fitl_noise = 1.0;
  fitl->add_option("--data", fitl_data, "training CSV")->required();
  fitl->add_option("--likelihood", fitl_lik, "gaussian|bernoulli")
      ->check(CLI::IsMember({"gaussian", "bernoulli"}));
  fitl->add_option("--m", fitl_m, "number of inducing inputs")->required();
  fitl->add_option("--config", fitl_config, "VEM config JSON");
  fitl->add_option("--seed", fitl_seed, "RNG seed");
  fitl->add_option("--out", fitl_out, "output model JSON")->required();
  fitl->add_option("--task-id", fitl_task_id, "task id (default: out stem)");
  fitl->add_flag("--log1p", fitl_log1p, "apply log(1+y) to outputs on load");
  fitl->add_option("--manifest-out", fitl_manifest, "manifest path");

  // ensemble -----------------------------------------------------------------
  auto* ens = app.add_subcommand(
      "ensemble", "Merge fitted models by maximizing the ensemble bound");
  std::vector<std::string> ens_models;
  std::string ens_config, ens_out, ens_task_id, ens_manifest;
  std::string ens_data, ens_data_lik = "gaussian", ens_cross = "global";
  int ens_m = 10, ens_branching = 0, ens_jobs = 1;
  std::uint64_t ens_seed = 0;
  bool ens_log1p = false;
  double ens_noise = 1.0;
  ens->add_option("--models", ens_models, "model JSON files")
      ->expected(-1);
  ens->add_option("--m", ens_m, "global inducing count")->required();
  ens->add_option("--config", ens_config, "VEM config JSON");
  ens->add_option("--data", ens_data, "optional fresh data CSV");
  ens->add_option("--likelihood", ens_data_lik,
                  "likelihood of the fresh data")
      ->check(CLI::IsMember({"gaussian", "bernoulli"}));
  ens->add_option("--noise-var", ens_noise,
                  "initial noise variance of fresh Gaussian data");
  ens->add_option("--pyramid-branching", ens_branching,
                  "recycle ensembles recursively with this branching");
  ens->add_option("--cross-kernel", ens_cross, "global|local")
      ->check(CLI::IsMember({"global", "local"}));
  ens->add_option("--jobs", ens_jobs, "parallel per-task workers");
  ens->add_option("--seed", ens_seed, "RNG seed");
  ens->add_option("--out", ens_out, "output model JSON")->required();
  ens->add_option("--task-id", ens_task_id, "task id for the global model");
  ens->add_flag("--log1p", ens_log1p, "apply log(1+y) to fresh outputs");
  ens->add_option("--manifest-out", ens_manifest, "manifest path");

  // predict --------------------------------------------------------------
  auto* pred = app.add_subcommand("predict", "Per-point predictions CSV");
  std::string pred_model, pred_data, pred_out, pred_lik, pred_manifest;
  double pred_noise = 0.0;
  bool pred_log1p = false;
  pred->add_option("--model", pred_model, "model JSON")->required();
  pred->add_option("--data", pred_data, "test CSV")->required();
  pred->add_option("--likelihood", pred_lik, "gaussian|bernoulli override");
  pred->add_option("--noise-var", pred_noise, "Gaussian noise override");
  pred->add_flag("--log1p", pred_log1p, "apply log(1+y) to outputs on load");
  pred->add_option("--out", pred_out, "output CSV")->required();
  pred->add_option("--manifest-out", pred_manifest, "manifest path");

  // evaluate -------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "NLPD/RMSE/MAE metrics JSON");
  std::string eval_model, eval_data, eval_truth, eval_out, eval_lik;
  std::string eval_manifest;
  double eval_noise = 0.0;
  bool eval_log1p = false;
  eval->add_option("--model", eval_model, "model JSON")->required();
  eval->add_option("--data", eval_data, "test CSV")->required();
  eval->add_option("--truth", eval_truth,
                   "CSV of noiseless function values (default: observed y)");
  eval->add_option("--likelihood", eval_lik, "gaussian|bernoulli override");
  eval->add_option("--noise-var", eval_noise, "Gaussian noise override");
  eval->add_flag("--log1p", eval_log1p, "apply log(1+y) to outputs on load");
  eval->add_option("--out", eval_out, "output metrics JSON")->required();
  eval->add_option("--manifest-out", eval_manifest, "manifest path");

  // baseline ---------------------------------------------------------------
  auto* base = app.add_subcommand(
      "baseline", "Combine expert predictions (PoE/GPoE/BCM/RBCM)");
  std::string base_method = "poe", base_data, base_truth, base_out;
  std::string base_pred_out, base_manifest;
  std::vector<std::string> base_models;
  base->add_option("--method", base_method, "poe|gpoe|bcm|rbcm")
      ->check(CLI::IsMember({"poe", "gpoe", "bcm", "rbcm"}));
  base->add_option("--models", base_models, "expert model JSON files")
      ->required()
      ->expected(-1);
  base->add_option("--data", base_data, "test CSV")->required();
  base->add_option("--truth", base_truth, "CSV of noiseless function values");
  base->add_option("--out", base_out, "output metrics JSON")->required();
  base->add_option("--pred-out", base_pred_out, "optional predictions CSV");
  base->add_option("--manifest-out", base_manifest, "manifest path");

  // plot --------------------------------------------------------------------
  auto* plot = app.add_subcommand("plot", "Render a model to SVG");
  std::string plot_model, plot_data, plot_out, plot_range, plot_manifest;
  plot->add_option("--model", plot_model, "model JSON")->required();
  plot->add_option("--data", plot_data, "optional data CSV scatter");
  plot->add_option("--range", plot_range, "x range lo:hi (1-D only)");
  plot->add_option("--out", plot_out, "output SVG")->required();
  plot->add_option("--manifest-out", plot_manifest, "manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  Timer timer;
  try {
    if (gen->parsed()) {
      const auto [lo, hi] = parse_range(gen_range);
      gpfuse::ToySpec spec;
      spec.function = gen_function == "biased" ? gpfuse::ToyFunction::Biased
                                               : gpfuse::ToyFunction::Plain;
      spec.n = gen_n;
      spec.noise_var = gen_noise;
      spec.lo = lo;
      spec.hi = hi;
      spec.seed = gen_seed;
      const gpfuse::ToyData toy = gpfuse::gen_toy(spec);
      gpfuse::write_csv(gen_out, toy.data.X, toy.data.y);
      std::vector<std::string> outputs{gen_out};
      if (!gen_truth_out.empty()) {
        gpfuse::write_csv(gen_truth_out, toy.data.X, toy.truth);
        outputs.push_back(gen_truth_out);
      }
      emit_manifest("generate",
                    {{"function", gen_function},
                     {"n", gen_n},
                     {"noise_var", gen_noise},
                     {"range", gen_range}},
                    gen_seed, {}, outputs, timer.seconds(),
                    gen_manifest.empty() ? default_manifest_path(gen_out)
                                         : gen_manifest);
    } else if (fitl->parsed()) {
      const gpfuse::VEMConfig config = load_config(fitl_config);
      const gpfuse::Likelihood lik = parse_likelihood(fitl_lik, fitl_noise);
      const gpfuse::Dataset data = load_dataset(fitl_data, lik, fitl_log1p);
      if (fitl_task_id.empty()) {
        fitl_task_id = std::filesystem::path(fitl_out).stem().string();
      }
      const gpfuse::LocalFitResult result =
          gpfuse::fit_local(data, fitl_m, config, fitl_seed, fitl_task_id);
      gpfuse::save_model(result.model, fitl_out);
      emit_manifest("fit-local",
                    {{"likelihood", fitl_lik},
                     {"m", fitl_m},
                     {"config", gpfuse::vem_config_to_json(config)},
                     {"log1p", fitl_log1p},
                     {"task_id", fitl_task_id}},
                    fitl_seed, {fitl_data}, {fitl_out}, timer.seconds(),
                    fitl_manifest.empty() ? default_manifest_path(fitl_out)
                                          : fitl_manifest);
    } else if (ens->parsed()) {
      const gpfuse::VEMConfig config = load_config(ens_config);
      gpfuse::EnsembleOptions options;
      options.cross_kernel = ens_cross == "local"
                                 ? gpfuse::CrossKernel::Local
                                 : gpfuse::CrossKernel::Global;
      options.jobs = ens_jobs;
      std::vector<gpfuse::ModelRecord> dictionary;
      for (const std::string& path : ens_models) {
        dictionary.push_back(gpfuse::load_model(path));
      }
      std::optional<gpfuse::Dataset> fresh;
      if (!ens_data.empty()) {
        fresh = load_dataset(ens_data,
                             parse_likelihood(ens_data_lik, ens_noise),
                             ens_log1p);
      }
      if (dictionary.empty() && !fresh.has_value()) {
        throw std::runtime_error(
            "ensemble: need at least one model or a fresh dataset");
      }
      if (ens_task_id.empty()) {
        ens_task_id = std::filesystem::path(ens_out).stem().string();
      }
      gpfuse::ModelRecord model;
      if (ens_branching >= 2) {
        if (fresh.has_value()) {
          throw std::runtime_error(
              "ensemble: --pyramid-branching does not take fresh data");
        }
        gpfuse::PyramidResult pyramid = gpfuse::pyramid_ensemble(
            dictionary, ens_branching, ens_m, config, ens_seed, options);
        model = std::move(pyramid.model);
        model.meta.task_id = ens_task_id;
      } else {
        gpfuse::EnsembleFitResult result =
            gpfuse::fit_ensemble(dictionary, ens_m, config, std::move(fresh),
                                 ens_seed, options, ens_task_id);
        model = std::move(result.model);
      }
      gpfuse::save_model(model, ens_out);
      std::vector<std::string> inputs = ens_models;
      if (!ens_data.empty()) inputs.push_back(ens_data);
      emit_manifest("ensemble",
                    {{"m", ens_m},
                     {"config", gpfuse::vem_config_to_json(config)},
                     {"cross_kernel", ens_cross},
                     {"pyramid_branching", ens_branching},
                     {"jobs", ens_jobs},
                     {"task_id", ens_task_id}},
                    ens_seed, inputs, {ens_out}, timer.seconds(),
                    ens_manifest.empty() ? default_manifest_path(ens_out)
                                         : ens_manifest);
    } else if (pred->parsed()) {
      const gpfuse::ModelRecord model = gpfuse::load_model(pred_model);
      const gpfuse::CsvData csv = gpfuse::read_csv(pred_data);
      Eigen::VectorXd y = csv.y;
      if (pred_log1p) y = (y.array() + 1.0).log().matrix();
      const gpfuse::Likelihood lik =
          prediction_likelihood(model, pred_lik, pred_noise);
      const gpfuse::QuadratureRule rule = gpfuse::gh_rule(20);
      const gpfuse::GlobalPrediction prediction =
          gpfuse::global_predict(model, csv.X, lik, rule, y);
      write_predictions_csv(pred_out, csv.X, y, prediction,
                            lik.kind == gpfuse::LikKind::Bernoulli, rule);
      emit_manifest("predict",
                    {{"likelihood", pred_lik}, {"noise_var", pred_noise}},
                    0, {pred_model, pred_data}, {pred_out}, timer.seconds(),
                    pred_manifest.empty() ? default_manifest_path(pred_out)
                                          : pred_manifest);
    } else if (eval->parsed()) {
      const gpfuse::ModelRecord model = gpfuse::load_model(eval_model);
      const gpfuse::CsvData csv = gpfuse::read_csv(eval_data);
      Eigen::VectorXd y = csv.y;
      if (eval_log1p) y = (y.array() + 1.0).log().matrix();
      Eigen::VectorXd truth = y;
      if (!eval_truth.empty()) {
        const gpfuse::CsvData tcsv = gpfuse::read_csv(eval_truth);
        if (tcsv.y.size() != y.size()) {
          throw std::runtime_error("evaluate: truth row count differs");
        }
        truth = tcsv.y;
      }
      const gpfuse::Likelihood lik =
          prediction_likelihood(model, eval_lik, eval_noise);
      const gpfuse::QuadratureRule rule = gpfuse::gh_rule(20);
      const gpfuse::Marginals marg = gpfuse::predictive_marginals(model, csv.X);
      const gpfuse::MetricsReport report =
          gpfuse::metrics(marg.mean, marg.var, y, truth, lik, rule);
      std::ofstream out(eval_out);
      if (!out) throw std::runtime_error("cannot write metrics: " + eval_out);
      out << gpfuse::metrics_to_json(report).dump(2) << "\n";
      out.close();
      std::vector<std::string> inputs{eval_model, eval_data};
      if (!eval_truth.empty()) inputs.push_back(eval_truth);
      emit_manifest("evaluate",
                    {{"likelihood", eval_lik}, {"noise_var", eval_noise}},
                    0, inputs, {eval_out}, timer.seconds(),
                    eval_manifest.empty() ? default_manifest_path(eval_out)
                                          : eval_manifest);
    } else if (base->parsed()) {
      const gpfuse::CombineMethod method =
          gpfuse::combine_method_from_string(base_method);
      const gpfuse::CsvData csv = gpfuse::read_csv(base_data);
      Eigen::VectorXd truth = csv.y;
      if (!base_truth.empty()) {
        const gpfuse::CsvData tcsv = gpfuse::read_csv(base_truth);
        if (tcsv.y.size() != csv.y.size()) {
          throw std::runtime_error("baseline: truth row count differs");
        }
        truth = tcsv.y;
      }
      std::vector<gpfuse::ModelRecord> experts;
      for (const std::string& path : base_models) {
        experts.push_back(gpfuse::load_model(path));
        if (!experts.back().likelihood.has_value() ||
            experts.back().likelihood->kind != gpfuse::LikKind::Gaussian) {
          throw std::runtime_error(
              "baseline: expert '" + path + "' is not Gaussian");
        }
      }
      const Eigen::Index n = csv.X.rows();
      std::vector<gpfuse::Marginals> expert_marginals;
      expert_marginals.reserve(experts.size());
      for (const gpfuse::ModelRecord& expert : experts) {
        expert_marginals.push_back(
            gpfuse::predictive_marginals(expert, csv.X));
      }
      Eigen::VectorXd mean(n), var(n);
      Eigen::VectorXd valid(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<gpfuse::ExpertPrediction> preds;
        preds.reserve(experts.size());
        for (std::size_t k = 0; k < experts.size(); ++k) {
          const double noise = experts[k].likelihood->noise_var();
          gpfuse::ExpertPrediction e;
          e.mean = expert_marginals[k].mean[i];
          e.var = expert_marginals[k].var[i] + noise;
          e.prior_var = experts[k].kernel.amplitude_sq() + noise;
          preds.push_back(e);
        }
        const gpfuse::CombinedPrediction c = gpfuse::combine(method, preds);
        mean[i] = c.mean;
        var[i] = c.var;
        valid[i] = c.valid ? 1.0 : 0.0;
      }
      double nlpd_sum = 0.0;
      Eigen::Index n_valid = 0;
      double sq = 0.0, abse = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (valid[i] > 0.5) {
          const double r = csv.y[i] - mean[i];
          nlpd_sum += 0.5 * std::log(gpfuse::kTwoPi * var[i]) +
                      0.5 * r * r / var[i];
          ++n_valid;
        }
        const double err = mean[i] - truth[i];
        sq += err * err;
        abse += std::abs(err);
      }
      nlohmann::json j;
      if (n_valid > 0) {
        j["nlpd_sum"] = nlpd_sum;
        j["nlpd_mean"] = nlpd_sum / n_valid;
      } else {
        j["nlpd_sum"] = nullptr;
        j["nlpd_mean"] = nullptr;
      }
      j["rmse"] = std::sqrt(sq / n);
      j["mae"] = abse / n;
      j["n_test"] = n;
      j["n_invalid"] = n - n_valid;
      std::ofstream out(base_out);
      if (!out) throw std::runtime_error("cannot write metrics: " + base_out);
      out << j.dump(2) << "\n";
      out.close();
      std::vector<std::string> outputs{base_out};
      if (!base_pred_out.empty()) {
        gpfuse::write_csv(base_pred_out, csv.X, mean);
        outputs.push_back(base_pred_out);
      }
      std::vector<std::string> inputs = base_models;
      inputs.push_back(base_data);
      if (!base_truth.empty()) inputs.push_back(base_truth);
      emit_manifest("baseline", {{"method", base_method}}, 0, inputs, outputs,
                    timer.seconds(),
                    base_manifest.empty() ? default_manifest_path(base_out)
                                          : base_manifest);
    } else if (plot->parsed()) {
      const gpfuse::ModelRecord model = gpfuse::load_model(plot_model);
      std::optional<gpfuse::Dataset> data;
      if (!plot_data.empty()) {
        gpfuse::CsvData csv = gpfuse::read_csv(plot_data);
        gpfuse::Likelihood lik =
            model.likelihood.value_or(gpfuse::Likelihood::gaussian(1.0));
        bool binary = true;
        for (Eigen::Index i = 0; i < csv.y.size() && binary; ++i) {
          binary = csv.y[i] == 0.0 || csv.y[i] == 1.0;
        }
        if (!binary && lik.kind == gpfuse::LikKind::Bernoulli) {
          lik = gpfuse::Likelihood::gaussian(1.0);
        }
        data = gpfuse::Dataset(std::move(csv.X), std::move(csv.y),
                               binary ? gpfuse::Likelihood::bernoulli() : lik);
      }
      std::optional<std::pair<double, double>> range;
      if (!plot_range.empty()) range = parse_range(plot_range);
      gpfuse::plot_model(model, plot_out, data, range);
      std::vector<std::string> inputs{plot_model};
      if (!plot_data.empty()) inputs.push_back(plot_data);
      emit_manifest("plot", {{"range", plot_range}}, 0, inputs, {plot_out},
                    timer.seconds(),
                    plot_manifest.empty() ? default_manifest_path(plot_out)
                                          : plot_manifest);
    }
  } catch (const gpfuse::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
