#include "fedfact/inprocessing.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace fedfact {

namespace {

Rng batch_rng(uint64_t seed, int round, int client) {
  return make_rng(seed, 0xba7c0000u + static_cast<uint64_t>(round), client);
}

ScoringModel make_model(const FederatedDataset& data, const InprocessingHyper& hyper) {
  if (hyper.hidden_dim > 0)
    return ScoringModel::mlp(data.feature_dim(), hyper.hidden_dim, data.num_classes,
                             hyper.seed);
  return ScoringModel::linear(data.feature_dim(), data.num_classes, hyper.seed);
}

// theta <- theta + sum_k p_k * delta_k, fixed client order.
void fedavg_aggregate(ScoringModel& unified,
                      const std::vector<std::vector<double>>& deltas,
                      const std::vector<double>& client_mass) {
  for (size_t k = 0; k < deltas.size(); ++k)
    for (size_t i = 0; i < unified.params.size(); ++i)
      unified.params[i] += client_mass[k] * deltas[k][i];
}

CostRowFn calibration_cost(const CalibrationFamily& fam) {
  return [&fam](const Sample& s) {
    const Mat& m = fam.mbar_by_group[s.group];
    std::vector<double> row(m.cols);
    for (int j = 0; j < m.cols; ++j) row[j] = m(s.label, j);
    return row;
  };
}

double lagrangian(const ConstraintSet& constraints, const ConfusionFamily& conf,
                  double risk_value, const DualState& dual, double xi_g,
                  double xi_l) {
  double v = risk_value;
  for (size_t u = 0; u < constraints.global_constraints.size(); ++u) {
    double d = disparity(constraints.global_constraints[u], conf);
    v += (dual.lambda1[u] - dual.lambda2[u]) * d -
         (dual.lambda1[u] + dual.lambda2[u]) * xi_g;
  }
  for (size_t k = 0; k < constraints.local_constraints.size(); ++k)
    for (size_t u = 0; u < constraints.local_constraints[k].size(); ++u) {
      double d = disparity(constraints.local_constraints[k][u], conf);
      v += (dual.mu1[k][u] - dual.mu2[k][u]) * d -
           (dual.mu1[k][u] + dual.mu2[k][u]) * xi_l;
    }
  return v;
}

}  // namespace

std::vector<double> EnsembleState::ensemble_probs(int client,
                                                  const std::vector<double>& x) const {
  auto pu = softmax(unified.forward(x));
  auto pp = softmax(personalized[client].forward(x));
  double w = weights[client];
  for (size_t i = 0; i < pu.size(); ++i) pu[i] = w * pu[i] + (1.0 - w) * pp[i];
  return pu;
}

int EnsembleState::ensemble_predict(int client, const std::vector<double>& x) const {
  return argmax_lowest(ensemble_probs(client, x));
}

double update_weight(double w, double loss_personalized, double loss_unified,
                     double lr_weight) {
  w = std::clamp(w, 1e-6, 1.0 - 1e-6);
  double ratio = (1.0 - w) / w *
                 std::exp(-lr_weight * (loss_personalized - loss_unified));
  return std::clamp(1.0 / (1.0 + ratio), 1e-6, 1.0 - 1e-6);
}

std::vector<double> client_dual_signal(const std::vector<ConstraintMatrix>& probes,
                                       const ConfusionFamily& confusions,
                                       int client) {
  std::vector<double> g(probes.size(), 0.0);
  for (size_t u = 0; u < probes.size(); ++u)
    for (int a = 0; a < confusions.num_groups; ++a) {
      if (probes[u].coef(a, client) == 0.0) continue;
      const Mat* c = confusions.get(a, client);
      if (!c)
        throw EmptyCellError("missing confusion cell for dual signal, probe " +
                             probes[u].index.describe());
      g[u] += probes[u].inner(a, client, *c);
    }
  return g;
}

void server_dual_update(DualState& dual, const std::vector<double>& summed_signals,
                        double xi_global, double lr_dual) {
  for (size_t u = 0; u < dual.lambda1.size(); ++u) {
    dual.lambda1[u] += lr_dual * (summed_signals[u] - xi_global);
    dual.lambda2[u] += lr_dual * (-summed_signals[u] - xi_global);
  }
  dual.project_lambda();
}

void local_dual_update(DualState& dual, int client,
                       const std::vector<double>& signals, double xi_local,
                       double lr_dual) {
  for (size_t u = 0; u < dual.mu1[client].size(); ++u) {
    dual.mu1[client][u] += lr_dual * (signals[u] - xi_local);
    dual.mu2[client][u] += lr_dual * (-signals[u] - xi_local);
  }
  dual.project_mu(client);
}

std::vector<std::vector<int>> ensemble_predictions(const EnsembleState& ensemble,
                                                   const FederatedDataset& data) {
  std::vector<std::vector<int>> preds(data.num_clients());
  for (int k = 0; k < data.num_clients(); ++k) {
    preds[k].reserve(data.clients[k].size());
    for (const auto& s : data.clients[k])
      preds[k].push_back(ensemble.ensemble_predict(k, s.features));
  }
  return preds;
}

ConfusionFamily mixture_confusions(const std::vector<EnsembleState>& snapshots,
                                   const FederatedDataset& data) {
  ConfusionFamily acc;
  double w = 1.0 / snapshots.size();
  for (size_t s = 0; s < snapshots.size(); ++s) {
    auto conf = compute_confusions(ensemble_predictions(snapshots[s], data), data);
    if (s == 0) {
      acc = conf;
      for (auto& row : acc.cells)
        for (auto& cell : row)
          if (cell)
            for (double& v : cell->entries.data) v *= w;
    } else {
      for (int a = 0; a < acc.num_groups; ++a)
        for (int k = 0; k < acc.num_clients; ++k)
          if (acc.cells[a][k] && conf.cells[a][k])
            for (size_t i = 0; i < acc.cells[a][k]->entries.data.size(); ++i)
              acc.cells[a][k]->entries.data[i] +=
                  w * conf.cells[a][k]->entries.data[i];
    }
  }
  return acc;
}

double mixture_risk(const std::vector<EnsembleState>& snapshots,
                    const FederatedDataset& data) {
  auto r = RiskMatrix::classification_error(data.num_classes);
  double total = 0.0;
  for (const auto& snap : snapshots)
    total += risk(ensemble_predictions(snap, data), data, r);
  return total / snapshots.size();
}

InprocessingResult run_inprocessing(const FederatedDataset& data,
                                    const FairnessSpec& spec,
                                    const InprocessingHyper& hyper) {
  data.validate();
  const int N = data.num_clients();
  const int m = data.num_classes;
  auto stats = compute_stats(data);
  auto constraints =
      build_constraint_set(spec, stats, hyper.drop_degenerate_probes);
  auto risk_matrix = RiskMatrix::classification_error(m);

  InprocessingResult result;
  result.constraints = constraints;
  result.stats = stats;

  EnsembleState ens;
  ens.unified = make_model(data, hyper);
  ens.personalized.assign(N, ens.unified);
  ens.weights.assign(N, 0.5);

  DualState dual = DualState::zeros(constraints, hyper.dual_bound);

  std::vector<double> client_mass(N);
  for (int k = 0; k < N; ++k) client_mass[k] = stats.p_k(k);

  // running averages for the equilibrium monitor
  ConfusionFamily avg_conf;
  double avg_risk = 0.0;
  DualState avg_dual = dual;

  // candidate set for the inner minimization of the monitor: the m constant
  // classifiers (their confusions never change)
  std::vector<std::pair<double, ConfusionFamily>> constant_candidates;
  for (int y = 0; y < m; ++y) {
    std::vector<std::vector<int>> preds(N);
    for (int k = 0; k < N; ++k) preds[k].assign(data.clients[k].size(), y);
    constant_candidates.emplace_back(risk(preds, data, risk_matrix),
                                     compute_confusions(preds, data));
  }

  std::deque<EnsembleState> window;

  for (int t = 0; t < hyper.rounds; ++t) {
    // per-client cost matrices for this round's duals
    std::vector<CalibrationFamily> calib(N);
    for (int k = 0; k < N; ++k)
      calib[k] = build_calibration(dual, constraints, stats, k);

    auto preds = ensemble_predictions(ens, data);
    auto conf = compute_confusions(preds, data);
    double round_risk = risk(preds, data, risk_matrix);

    RoundReport rep;
    rep.round = t;
    rep.risk = round_risk;
    auto disp = evaluate_disparities(constraints, conf);
    rep.max_global_disparity = disp.max_global;
    rep.max_local_disparity = disp.max_local;

    std::vector<std::vector<double>> global_signals(N);
    std::vector<std::vector<double>> deltas(N);
    for (int k = 0; k < N; ++k) {
      global_signals[k] =
          client_dual_signal(constraints.global_constraints, conf, k);
      auto local_signals =
          client_dual_signal(constraints.local_constraints[k], conf, k);
      local_dual_update(dual, k, local_signals, spec.xi_local, hyper.lr_dual);

      CostRowFn cost = calibration_cost(calib[k]);
      double loss_theta = shard_loss(ens.unified, data.clients[k], cost);
      double loss_phi = shard_loss(ens.personalized[k], data.clients[k], cost);
      rep.unified_losses.push_back(loss_theta);
      rep.personalized_losses.push_back(loss_phi);
      ens.weights[k] =
          update_weight(ens.weights[k], loss_phi, loss_theta, hyper.lr_weight);

      // R local steps on a theta copy and on phi_k, same batches for both
      ScoringModel theta_k = ens.unified;
      BatchSchedule schedule(data.clients[k].size(),
                             batch_rng(hyper.seed, t, k));
      for (int r = 0; r < hyper.local_steps; ++r) {
        auto batch = schedule.next_batch(hyper.batch_size);
        auto g_theta = batch_gradient(theta_k, data.clients[k], batch, cost);
        for (size_t i = 0; i < theta_k.params.size(); ++i)
          theta_k.params[i] -= hyper.lr * g_theta[i];
        auto g_phi =
            batch_gradient(ens.personalized[k], data.clients[k], batch, cost);
        for (size_t i = 0; i < ens.personalized[k].params.size(); ++i)
          ens.personalized[k].params[i] -= hyper.lr * g_phi[i];
      }
      deltas[k].resize(theta_k.params.size());
      for (size_t i = 0; i < theta_k.params.size(); ++i)
        deltas[k][i] = theta_k.params[i] - ens.unified.params[i];
    }

    fedavg_aggregate(ens.unified, deltas, client_mass);

    std::vector<double> summed(constraints.global_constraints.size(), 0.0);
    for (int k = 0; k < N; ++k)
      for (size_t u = 0; u < summed.size(); ++u) summed[u] += global_signals[k][u];
    server_dual_update(dual, summed, spec.xi_global, hyper.lr_dual);

    // equilibrium monitor: gap between the best dual response to the running
    // classifier average and the best classifier response to the running
    // dual average
    double wa = 1.0 / (t + 1);
    if (t == 0) {
      avg_conf = conf;
      avg_risk = round_risk;
    } else {
      for (int a = 0; a < avg_conf.num_groups; ++a)
        for (int k = 0; k < avg_conf.num_clients; ++k)
          if (avg_conf.cells[a][k] && conf.cells[a][k])
            for (size_t i = 0; i < avg_conf.cells[a][k]->entries.data.size(); ++i)
              avg_conf.cells[a][k]->entries.data[i] =
                  (1 - wa) * avg_conf.cells[a][k]->entries.data[i] +
                  wa * conf.cells[a][k]->entries.data[i];
      avg_risk = (1 - wa) * avg_risk + wa * round_risk;
    }
    for (size_t u = 0; u < dual.lambda1.size(); ++u) {
      avg_dual.lambda1[u] = (1 - wa) * avg_dual.lambda1[u] + wa * dual.lambda1[u];
      avg_dual.lambda2[u] = (1 - wa) * avg_dual.lambda2[u] + wa * dual.lambda2[u];
    }
    for (int k = 0; k < N; ++k)
      for (size_t u = 0; u < dual.mu1[k].size(); ++u) {
        avg_dual.mu1[k][u] = (1 - wa) * avg_dual.mu1[k][u] + wa * dual.mu1[k][u];
        avg_dual.mu2[k][u] = (1 - wa) * avg_dual.mu2[k][u] + wa * dual.mu2[k][u];
      }

    double best_dual_value = avg_risk;
    {
      // best lambda in the l1 ball puts all mass on the worst violated probe
      double worst = 0.0;
      for (size_t u = 0; u < constraints.global_constraints.size(); ++u) {
        double d = disparity(constraints.global_constraints[u], avg_conf);
        worst = std::max(worst, std::fabs(d) - spec.xi_global);
      }
      best_dual_value += hyper.dual_bound * std::max(0.0, worst);
      for (int k = 0; k < N; ++k) {
        double worst_l = 0.0;
        for (size_t u = 0; u < constraints.local_constraints[k].size(); ++u) {
          double d = disparity(constraints.local_constraints[k][u], avg_conf);
          worst_l = std::max(worst_l, std::fabs(d) - spec.xi_local);
        }
        best_dual_value += hyper.dual_bound * std::max(0.0, worst_l);
      }
    }
    double best_primal = lagrangian(constraints, conf, round_risk, avg_dual,
                                    spec.xi_global, spec.xi_local);
    for (const auto& [crisk, cconf] : constant_candidates)
      best_primal = std::min(best_primal,
                             lagrangian(constraints, cconf, crisk, avg_dual,
                                        spec.xi_global, spec.xi_local));
    rep.lagrangian_gap = best_dual_value - best_primal;
    rep.lambda_l1 = dual.lambda_l1();
    for (int k = 0; k < N; ++k)
      rep.max_mu_l1 = std::max(rep.max_mu_l1, dual.mu_l1(k));
    rep.weights = ens.weights;
    result.reports.push_back(std::move(rep));

    window.push_back(ens);
    while (static_cast<int>(window.size()) > std::max(1, hyper.average_window))
      window.pop_front();
  }

  result.ensemble = ens;
  result.dual = dual;
  result.snapshot_window.assign(window.begin(), window.end());
  return result;
}

FedAvgResult run_fedavg(const FederatedDataset& data, const InprocessingHyper& hyper) {
  data.validate();
  const int N = data.num_clients();
  auto stats = compute_stats(data);
  FedAvgResult result;
  result.unified = make_model(data, hyper);
  CostRowFn cost = cross_entropy_cost(data.num_classes);
  std::vector<double> client_mass(N);
  for (int k = 0; k < N; ++k) client_mass[k] = stats.p_k(k);

  for (int t = 0; t < hyper.rounds; ++t) {
    std::vector<std::vector<double>> deltas(N);
    double round_loss = 0.0;
    for (int k = 0; k < N; ++k) {
      ScoringModel theta_k = result.unified;
      BatchSchedule schedule(data.clients[k].size(), batch_rng(hyper.seed, t, k));
      for (int r = 0; r < hyper.local_steps; ++r) {
        auto batch = schedule.next_batch(hyper.batch_size);
        auto g = batch_gradient(theta_k, data.clients[k], batch, cost);
        for (size_t i = 0; i < theta_k.params.size(); ++i)
          theta_k.params[i] -= hyper.lr * g[i];
      }
      deltas[k].resize(theta_k.params.size());
      for (size_t i = 0; i < theta_k.params.size(); ++i)
        deltas[k][i] = theta_k.params[i] - result.unified.params[i];
      round_loss += client_mass[k] * shard_loss(theta_k, data.clients[k], cost);
    }
    fedavg_aggregate(result.unified, deltas, client_mass);
    result.round_losses.push_back(round_loss);
  }
  return result;
}

}  // namespace fedfact
