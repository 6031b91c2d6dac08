#pragma once

#include "fedfact/calibration.hpp"
#include "fedfact/inprocessing.hpp"

#include "json.hpp"

namespace fedfact {

// Plug-in class-probability estimates per sample. Labels ride along for
// evaluation and stats only; calibration and prediction never read them.
struct ScoreRow {
  std::vector<double> probs;  // point in the simplex
  int group = 0;
  int label = -1;  // -1 when unknown
};

struct PluginScores {
  std::vector<std::vector<ScoreRow>> clients;
  int num_classes = 0;
  int num_groups = 0;

  int num_clients() const { return static_cast<int>(clients.size()); }
  void validate(double tol = 1e-9) const;
};

// x (+) one-hot(a) features, as consumed by the attribute-aware plug-in.
FederatedDataset augment_with_group(const FederatedDataset& data);

// Attribute-aware FedAvg pretraining on x concatenated with one-hot(a),
// then per-sample softmax probabilities on the same data.
PluginScores pretrain_plugin(const FederatedDataset& data,
                             const InprocessingHyper& hyper);

// Scores of an already trained attribute-aware model (input x (+) one-hot(a)).
PluginScores plugin_scores(const ScoringModel& model, const FederatedDataset& data);

// CSV rows: client_id, group, m probabilities, optional label.
PluginScores load_scores_csv(const std::string& path, int num_classes,
                             int num_groups);
void save_scores_csv(const PluginScores& scores, const std::string& path);

// Optional tie-breaking noise: uniform +-magnitude per entry, clipped at zero
// and renormalized. Off by default everywhere.
void jitter_scores(PluginScores& scores, double magnitude, uint64_t seed);

// Stats of the calibration split, from the labels carried in the score rows.
PopulationStats stats_from_scores(const PluginScores& scores);

struct PostprocessingHyper {
  int rounds = 30;        // T
  int inner_steps = 5;    // R
  double lr_dual = 0.2;   // eta_d
  double beta = 0.1;      // sigma_beta temperature
  double dual_bound = 5;  // B_d
  // after the smoothed descent, nudge duals against the measured hard
  // disparities of the argmax rule; rounds out atoms the relaxation ties.
  // Needs labelled score rows; 0 disables.
  int refine_steps = 600;
  double refine_step_size = 0.005;
  bool drop_degenerate_probes = false;
};

// Softmax-weighted average sum_i softmax(x/beta)_i x_i and its gradient.
double soft_max_beta(const std::vector<double>& x, double beta);
std::vector<double> soft_max_beta_grad(const std::vector<double>& x, double beta);

// H'_k(lambda, mu_k) = (1/n_k) sum_i sigma_beta(M(a_i,k)^T eta_i)
//                      + xi_g ||lambda||_1 + (xi_l / p_k) ||mu_k||_1.
double relaxed_local_objective(const DualState& dual, const ConstraintSet& constraints,
                               const PopulationStats& stats,
                               const PluginScores& scores, int client, double beta,
                               double xi_global, double xi_local);

struct LocalGradient {
  std::vector<double> lambda1, lambda2;
  std::vector<double> mu1, mu2;
};

// Analytic gradient of the objective above in all four dual blocks.
LocalGradient objective_gradient(const DualState& dual,
                                 const ConstraintSet& constraints,
                                 const PopulationStats& stats,
                                 const PluginScores& scores, int client, double beta,
                                 double xi_global, double xi_local);

// Final product of the calibration: predictions are a pure function of
// (eta-hat, a, k) given the frozen duals and stats.
struct CalibratedClassifier {
  DualState dual;
  ConstraintSet constraints;
  PopulationStats stats;
  FairnessSpec spec;
  bool drop_degenerate = false;

  int predict(const std::vector<double>& probs, int group, int client) const;
  std::vector<std::vector<int>> predict_all(const PluginScores& scores) const;

  nlohmann::json to_json() const;
  static CalibratedClassifier from_json(const nlohmann::json& j);
};

struct PostprocessingResult {
  CalibratedClassifier classifier;
  // F(t) = sum_k p_k H'_k(lambda^t, mu_k^t), one entry per round plus the
  // value after the final update.
  std::vector<double> trajectory;
};

// Bi-level dual descent: per round every client takes R projected-gradient
// steps on its mu_k (warm started), returns grad_lambda at the new mu_k, and
// the server takes one projected weighted-descent step on lambda.
PostprocessingResult run_postprocessing(const PluginScores& scores,
                                        const PopulationStats& stats,
                                        const FairnessSpec& spec,
                                        const PostprocessingHyper& hyper);

}  // namespace fedfact
