#pragma once

#include "fedfact/inprocessing.hpp"
#include "fedfact/oracle.hpp"
#include "fedfact/postprocessing.hpp"

#include "json.hpp"

namespace fedfact {

enum class Method { Inprocessing, Postprocessing, FedAvgBaseline, Oracle };

std::string method_name(Method m);
Method parse_method(const std::string& s);

struct ExperimentConfig {
  // dataset
  bool synthetic = true;
  SyntheticSpec synth;
  std::string csv_path;
  CsvSchema schema;

  // partition: "given" keeps the loaded client assignment
  std::string partition = "given";  // given | dirichlet | hetero
  int clients = 2;
  double gamma = 0.5;        // dirichlet concentration
  double corr_lo = 0.2;      // hetero range
  double corr_hi = 0.8;

  double train_frac = 0.6;

  FairnessSpec fairness;
  Method method = Method::Postprocessing;

  InprocessingHyper train_hyper;    // also drives fedavg and plug-in pretraining
  PostprocessingHyper post_hyper;

  uint64_t seed = 1;
  bool drop_degenerate_probes = false;
  double jitter = 0.0;  // score noise magnitude, 0 = off
  std::string out_dir;

  nlohmann::json echo;  // the normalized config this run used

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct SplitMetrics {
  double accuracy = 0.0;
  double max_global_disparity = 0.0;
  double max_local_disparity = 0.0;
  std::vector<std::pair<std::string, double>> per_probe;
  int dropped_probes = 0;
};

// Accuracy and measured disparities of fixed per-client predictions, with
// constraints rebuilt from this split's own stats. Degenerate probes are
// dropped (and counted) rather than aborting evaluation.
SplitMetrics evaluate_predictions(const std::vector<std::vector<int>>& preds,
                                  const FederatedDataset& data,
                                  const FairnessSpec& spec);

struct ExperimentReport {
  ExperimentConfig config;
  SplitMetrics train;
  SplitMetrics test;
  std::vector<double> trajectory;       // method-specific round values
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

// Grid sweep: {"base": <config>, "grid": {"<dotted.key>": [values...]}}.
// Cartesian product in fixed key order; per-run failures are recorded and do
// not stop the sweep.
struct SweepResult {
  std::vector<ExperimentReport> reports;
  std::vector<std::string> errors;  // aligned with configs, empty = ok
  std::string csv;                  // one row per run
  nlohmann::json summary;           // seed-aggregated mean/std + monotonicity
};
SweepResult run_sweep(const nlohmann::json& sweep_spec);

std::vector<ExperimentConfig> expand_grid(const nlohmann::json& sweep_spec);

// Non-dominated extraction over (accuracy up, global disparity down).
struct ParetoPoint {
  double accuracy = 0.0;
  double disparity = 0.0;
  bool dominated = false;
  std::string tag;
};
std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points);
std::string pareto_csv(const std::vector<ParetoPoint>& points);

}  // namespace fedfact
