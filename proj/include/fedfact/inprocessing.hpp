#pragma once

#include "fedfact/calibration.hpp"
#include "fedfact/model.hpp"

namespace fedfact {

struct InprocessingHyper {
  int rounds = 30;             // T
  int local_steps = 10;        // R
  double lr = 0.05;            // eta
  double lr_dual = 0.1;        // eta_d
  double lr_weight = 0.3;      // eta_w
  size_t batch_size = 64;
  double dual_bound = 5.0;     // B_d
  int hidden_dim = 0;          // 0 -> linear model
  uint64_t seed = 1;
  int average_window = 1;      // classifiers mixed into the output (1 = last round)
  bool drop_degenerate_probes = false;
};

// Per-client ensemble of the unified and personalized model.
struct EnsembleState {
  ScoringModel unified;
  std::vector<ScoringModel> personalized;
  std::vector<double> weights;  // w_k in (0, 1)

  std::vector<double> ensemble_probs(int client, const std::vector<double>& x) const;
  int ensemble_predict(int client, const std::vector<double>& x) const;
};

struct RoundReport {
  int round = 0;
  double risk = 0.0;
  double max_global_disparity = 0.0;
  double max_local_disparity = 0.0;
  double lambda_l1 = 0.0;
  double max_mu_l1 = 0.0;
  std::vector<double> weights;
  std::vector<double> unified_losses;
  std::vector<double> personalized_losses;
  double lagrangian_gap = 0.0;  // equilibrium monitor
};

struct InprocessingResult {
  EnsembleState ensemble;
  DualState dual;
  std::vector<RoundReport> reports;
  // Snapshots of the last `average_window` rounds' ensembles, newest last.
  std::vector<EnsembleState> snapshot_window;
  ConstraintSet constraints;
  PopulationStats stats;
};

// w' = 1 / (1 + ((1-w)/w) exp(-eta_w (L_phi - L_theta))); stays in (0, 1).
double update_weight(double w, double loss_personalized, double loss_unified,
                     double lr_weight);

// Raw per-probe client signal g_{k,u} = sum_a <D^{a,k}_u, C^{a,k}(h_k)>.
std::vector<double> client_dual_signal(const std::vector<ConstraintMatrix>& probes,
                                       const ConfusionFamily& confusions, int client);

// lambda ascent with the slack subtracted once at the server, then projection.
void server_dual_update(DualState& dual, const std::vector<double>& summed_signals,
                        double xi_global, double lr_dual);

// Projected ascent on client k's local multipliers.
void local_dual_update(DualState& dual, int client,
                       const std::vector<double>& signals, double xi_local,
                       double lr_dual);

InprocessingResult run_inprocessing(const FederatedDataset& data,
                                    const FairnessSpec& spec,
                                    const InprocessingHyper& hyper);

// Plain FedAvg with cross-entropy: the degenerate case of the loop above and
// the accuracy baseline in reports.
struct FedAvgResult {
  ScoringModel unified;
  std::vector<double> round_losses;
};

FedAvgResult run_fedavg(const FederatedDataset& data, const InprocessingHyper& hyper);

// Predictions of the trained ensemble on an arbitrary dataset (per client).
std::vector<std::vector<int>> ensemble_predictions(const EnsembleState& ensemble,
                                                   const FederatedDataset& data);

// Mixture evaluation over snapshots: confusion cells are averaged over the
// snapshot window, which evaluates the uniform classifier mixture exactly.
ConfusionFamily mixture_confusions(const std::vector<EnsembleState>& snapshots,
                                   const FederatedDataset& data);
double mixture_risk(const std::vector<EnsembleState>& snapshots,
                    const FederatedDataset& data);

}  // namespace fedfact
