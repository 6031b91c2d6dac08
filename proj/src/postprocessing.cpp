#include "fedfact/postprocessing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fedfact {

void PluginScores::validate(double tol) const {
  for (size_t k = 0; k < clients.size(); ++k)
    for (size_t i = 0; i < clients[k].size(); ++i) {
      const auto& r = clients[k][i];
      if (static_cast<int>(r.probs.size()) != num_classes)
        throw DataError("score row " + std::to_string(i) + " of client " +
                        std::to_string(k) + " has wrong arity");
      double sum = 0.0;
      for (double p : r.probs) {
        if (!(p >= 0.0))
          throw DataError("negative probability in score row " + std::to_string(i) +
                          " of client " + std::to_string(k));
        sum += p;
      }
      if (std::fabs(sum - 1.0) > tol)
        throw DataError("score row " + std::to_string(i) + " of client " +
                        std::to_string(k) + " sums to " + std::to_string(sum));
      if (r.group < 0 || r.group >= num_groups)
        throw DataError("score row group out of range");
      if (r.label >= num_classes)
        throw DataError("score row label out of range");
    }
}

FederatedDataset augment_with_group(const FederatedDataset& data) {
  FederatedDataset aug = data;
  for (auto& shard : aug.clients)
    for (auto& s : shard) {
      std::vector<double> onehot(data.num_groups, 0.0);
      onehot[s.group] = 1.0;
      s.features.insert(s.features.end(), onehot.begin(), onehot.end());
    }
  return aug;
}

PluginScores plugin_scores(const ScoringModel& model, const FederatedDataset& data) {
  FederatedDataset aug = augment_with_group(data);
  PluginScores scores;
  scores.num_classes = data.num_classes;
  scores.num_groups = data.num_groups;
  scores.clients.resize(data.num_clients());
  for (int k = 0; k < data.num_clients(); ++k) {
    scores.clients[k].reserve(aug.clients[k].size());
    for (const auto& s : aug.clients[k]) {
      ScoreRow row;
      row.probs = model.probabilities(s.features);
      for (double p : row.probs)
        if (!std::isfinite(p)) throw NumericError("non-finite plug-in probability");
      row.group = s.group;
      row.label = s.label;
      scores.clients[k].push_back(std::move(row));
    }
  }
  return scores;
}

PluginScores pretrain_plugin(const FederatedDataset& data,
                             const InprocessingHyper& hyper) {
  data.validate();
  FederatedDataset aug = augment_with_group(data);
  FedAvgResult trained = run_fedavg(aug, hyper);
  for (double l : trained.round_losses)
    if (!std::isfinite(l)) throw NumericError("plug-in pretraining diverged");
  return plugin_scores(trained.unified, data);
}

PluginScores load_scores_csv(const std::string& path, int num_classes,
                             int num_groups) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open score file: " + path);
  PluginScores scores;
  scores.num_classes = num_classes;
  scores.num_groups = num_groups;
  std::string line;
  size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> fields;
    while (std::getline(ss, tok, ',')) fields.push_back(tok);
    size_t expected = 2 + static_cast<size_t>(num_classes);
    if (fields.size() != expected && fields.size() != expected + 1)
      throw DataError("score file row " + std::to_string(row_no) +
                      ": expected " + std::to_string(expected) + " or " +
                      std::to_string(expected + 1) + " fields, got " +
                      std::to_string(fields.size()));
    try {
      int client = std::stoi(fields[0]);
      if (client < 0) throw DataError("negative client id");
      if (client >= static_cast<int>(scores.clients.size()))
        scores.clients.resize(client + 1);
      ScoreRow row;
      row.group = std::stoi(fields[1]);
      row.probs.resize(num_classes);
      for (int j = 0; j < num_classes; ++j) row.probs[j] = std::stod(fields[2 + j]);
      if (fields.size() == expected + 1) row.label = std::stoi(fields[expected]);
      scores.clients[client].push_back(std::move(row));
    } catch (const std::invalid_argument&) {
      throw DataError("score file row " + std::to_string(row_no) +
                      ": unparsable field");
    }
  }
  scores.validate();
  return scores;
}

void save_scores_csv(const PluginScores& scores, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write score file: " + path);
  out.precision(17);
  for (size_t k = 0; k < scores.clients.size(); ++k)
    for (const auto& row : scores.clients[k]) {
      out << k << ',' << row.group;
      for (double p : row.probs) out << ',' << p;
      if (row.label >= 0) out << ',' << row.label;
      out << '\n';
    }
}

void jitter_scores(PluginScores& scores, double magnitude, uint64_t seed) {
  Rng rng = make_rng(seed, 0x71e2u);
  std::uniform_real_distribution<double> ud(-magnitude, magnitude);
  for (auto& shard : scores.clients)
    for (auto& row : shard) {
      double sum = 0.0;
      for (double& p : row.probs) {
        p = std::max(0.0, p + ud(rng));
        sum += p;
      }
      if (sum <= 0.0) {
        for (double& p : row.probs) p = 1.0 / row.probs.size();
      } else {
        for (double& p : row.probs) p /= sum;
      }
    }
}

PopulationStats stats_from_scores(const PluginScores& scores) {
  PopulationStats st;
  st.num_classes = scores.num_classes;
  st.num_groups = scores.num_groups;
  st.num_clients = scores.num_clients();
  st.count.assign(st.num_groups,
                  std::vector<std::vector<long long>>(
                      st.num_classes, std::vector<long long>(st.num_clients, 0)));
  for (int k = 0; k < st.num_clients; ++k)
    for (const auto& row : scores.clients[k]) {
      if (row.label < 0)
        throw DataError("stats_from_scores needs labelled score rows");
      ++st.count[row.group][row.label][k];
      ++st.total;
    }
  if (st.total == 0) throw DataError("no score rows");
  return st;
}

double soft_max_beta(const std::vector<double>& x, double beta) {
  if (beta <= 0.0) throw ConfigError("temperature must be positive");
  double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0, num = 0.0;
  for (double v : x) {
    double w = std::exp((v - mx) / beta);
    z += w;
    num += w * v;
  }
  return num / z;
}

std::vector<double> soft_max_beta_grad(const std::vector<double>& x, double beta) {
  double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp((x[i] - mx) / beta);
    z += p[i];
  }
  double sigma = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    p[i] /= z;
    sigma += p[i] * x[i];
  }
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    g[i] = p[i] * (1.0 + (x[i] - sigma) / beta);
  return g;
}

double relaxed_local_objective(const DualState& dual, const ConstraintSet& constraints,
                               const PopulationStats& stats,
                               const PluginScores& scores, int client, double beta,
                               double xi_global, double xi_local) {
  const auto& shard = scores.clients[client];
  if (shard.empty()) throw DataError("client has no score rows");
  double pk = stats.p_k(client);
  if (pk <= 0.0) throw DataError("client has zero mass in stats");
  double acc = 0.0;
  for (const auto& row : shard) {
    auto z = calibrated_scores(dual, constraints, stats, client, row.group, row.probs);
    acc += soft_max_beta(z, beta);
  }
  double v = acc / shard.size();
  v += xi_global * dual.lambda_l1();
  v += xi_local / pk * dual.mu_l1(client);
  return v;
}

LocalGradient objective_gradient(const DualState& dual,
                                 const ConstraintSet& constraints,
                                 const PopulationStats& stats,
                                 const PluginScores& scores, int client, double beta,
                                 double xi_global, double xi_local) {
  const auto& shard = scores.clients[client];
  if (shard.empty()) throw DataError("client has no score rows");
  const auto& local = constraints.local_constraints[client];
  LocalGradient g;
  g.lambda1.assign(constraints.global_constraints.size(), 0.0);
  g.lambda2.assign(constraints.global_constraints.size(), 0.0);
  g.mu1.assign(local.size(), 0.0);
  g.mu2.assign(local.size(), 0.0);

  double inv_n = 1.0 / shard.size();
  for (const auto& row : shard) {
    auto z = calibrated_scores(dual, constraints, stats, client, row.group, row.probs);
    auto dsig = soft_max_beta_grad(z, beta);
    double p_cell = stats.p_ak(row.group, client);
    auto accumulate = [&](const ConstraintMatrix& d, double& g1, double& g2) {
      double t = d.transpose_apply_at_column(row.group, client, row.probs);
      if (t == 0.0) return;
      if (p_cell <= 0.0)
        throw EmptyCellError("gradient needs empty cell (a=" +
                             std::to_string(row.group) + ", k=" +
                             std::to_string(client) + ")");
      // z[col] depends on the dual pair through -(delta / p_cell) * t
      double contrib = dsig[d.column] * (-t / p_cell) * inv_n;
      g1 += contrib;
      g2 -= contrib;
    };
    for (size_t u = 0; u < constraints.global_constraints.size(); ++u)
      accumulate(constraints.global_constraints[u], g.lambda1[u], g.lambda2[u]);
    for (size_t u = 0; u < local.size(); ++u)
      accumulate(local[u], g.mu1[u], g.mu2[u]);
  }

  double pk = stats.p_k(client);
  for (double& v : g.lambda1) v += xi_global;
  for (double& v : g.lambda2) v += xi_global;
  for (double& v : g.mu1) v += xi_local / pk;
  for (double& v : g.mu2) v += xi_local / pk;
  return g;
}

int CalibratedClassifier::predict(const std::vector<double>& probs, int group,
                                  int client) const {
  auto z = calibrated_scores(dual, constraints, stats, client, group, probs);
  return argmax_lowest(z);
}

std::vector<std::vector<int>> CalibratedClassifier::predict_all(
    const PluginScores& scores) const {
  std::vector<std::vector<int>> preds(scores.clients.size());
  for (size_t k = 0; k < scores.clients.size(); ++k) {
    preds[k].reserve(scores.clients[k].size());
    for (const auto& row : scores.clients[k])
      preds[k].push_back(predict(row.probs, row.group, static_cast<int>(k)));
  }
  return preds;
}

nlohmann::json CalibratedClassifier::to_json() const {
  nlohmann::json j;
  j["num_classes"] = stats.num_classes;
  j["num_groups"] = stats.num_groups;
  j["num_clients"] = stats.num_clients;
  j["counts"] = stats.count;
  j["criterion"] = criterion_name(spec.criterion);
  j["xi_global"] = spec.xi_global;
  j["xi_local"] = spec.xi_local;
  j["enable_global"] = spec.enable_global;
  j["enable_local"] = spec.enable_local;
  j["drop_degenerate"] = drop_degenerate;
  j["dual_bound"] = dual.dual_bound;
  j["lambda1"] = dual.lambda1;
  j["lambda2"] = dual.lambda2;
  j["mu1"] = dual.mu1;
  j["mu2"] = dual.mu2;
  std::vector<std::string> probes;
  for (const auto& c : constraints.global_constraints)
    probes.push_back(c.index.describe());
  for (const auto& per_client : constraints.local_constraints)
    for (const auto& c : per_client) probes.push_back(c.index.describe());
  j["probes"] = probes;
  return j;
}

CalibratedClassifier CalibratedClassifier::from_json(const nlohmann::json& j) {
  CalibratedClassifier c;
  c.stats.num_classes = j.at("num_classes").get<int>();
  c.stats.num_groups = j.at("num_groups").get<int>();
  c.stats.num_clients = j.at("num_clients").get<int>();
  c.stats.count =
      j.at("counts").get<std::vector<std::vector<std::vector<long long>>>>();
  c.stats.total = 0;
  for (const auto& by_y : c.stats.count)
    for (const auto& by_k : by_y)
      for (long long n : by_k) c.stats.total += n;
  c.spec.criterion = parse_criterion(j.at("criterion").get<std::string>());
  c.spec.xi_global = j.at("xi_global").get<double>();
  c.spec.xi_local = j.at("xi_local").get<double>();
  c.spec.enable_global = j.at("enable_global").get<bool>();
  c.spec.enable_local = j.at("enable_local").get<bool>();
  c.drop_degenerate = j.at("drop_degenerate").get<bool>();
  c.constraints = build_constraint_set(c.spec, c.stats, c.drop_degenerate);

  std::vector<std::string> probes;
  for (const auto& cm : c.constraints.global_constraints)
    probes.push_back(cm.index.describe());
  for (const auto& per_client : c.constraints.local_constraints)
    for (const auto& cm : per_client) probes.push_back(cm.index.describe());
  auto stored = j.at("probes").get<std::vector<std::string>>();
  if (stored != probes)
    throw ConfigError("stored probe list does not match rebuilt constraints");

  c.dual = DualState::zeros(c.constraints, j.at("dual_bound").get<double>());
  c.dual.lambda1 = j.at("lambda1").get<std::vector<double>>();
  c.dual.lambda2 = j.at("lambda2").get<std::vector<double>>();
  c.dual.mu1 = j.at("mu1").get<std::vector<std::vector<double>>>();
  c.dual.mu2 = j.at("mu2").get<std::vector<std::vector<double>>>();
  if (c.dual.lambda1.size() != c.constraints.global_constraints.size() ||
      c.dual.mu1.size() != c.constraints.local_constraints.size())
    throw ConfigError("stored dual dimensions do not match constraints");
  return c;
}

PostprocessingResult run_postprocessing(const PluginScores& scores,
                                        const PopulationStats& stats,
                                        const FairnessSpec& spec,
                                        const PostprocessingHyper& hyper) {
  scores.validate();
  if (hyper.rounds <= 0 || hyper.inner_steps < 0 || hyper.lr_dual <= 0.0 ||
      hyper.beta <= 0.0 || hyper.dual_bound <= 0.0)
    throw ConfigError("post-processing hyperparameters must be positive");
  const int N = scores.num_clients();
  auto constraints =
      build_constraint_set(spec, stats, hyper.drop_degenerate_probes);
  DualState dual = DualState::zeros(constraints, hyper.dual_bound);

  std::vector<double> mass(N);
  for (int k = 0; k < N; ++k) mass[k] = stats.p_k(k);

  auto weighted_objective = [&]() {
    double f = 0.0;
    for (int k = 0; k < N; ++k)
      f += mass[k] * relaxed_local_objective(dual, constraints, stats, scores, k,
                                             hyper.beta, spec.xi_global,
                                             spec.xi_local);
    return f;
  };

  auto descent_round = [&](double step) {
    std::vector<double> dl1(dual.lambda1.size(), 0.0);
    std::vector<double> dl2(dual.lambda2.size(), 0.0);
    for (int k = 0; k < N; ++k) {
      for (int r = 0; r < hyper.inner_steps; ++r) {
        auto g = objective_gradient(dual, constraints, stats, scores, k,
                                    hyper.beta, spec.xi_global, spec.xi_local);
        for (size_t u = 0; u < dual.mu1[k].size(); ++u) {
          dual.mu1[k][u] -= step * g.mu1[u];
          dual.mu2[k][u] -= step * g.mu2[u];
        }
        dual.project_mu(k);
      }
      auto g = objective_gradient(dual, constraints, stats, scores, k,
                                  hyper.beta, spec.xi_global, spec.xi_local);
      for (size_t u = 0; u < dl1.size(); ++u) {
        dl1[u] += mass[k] * g.lambda1[u];
        dl2[u] += mass[k] * g.lambda2[u];
      }
    }
    for (size_t u = 0; u < dual.lambda1.size(); ++u) {
      dual.lambda1[u] -= step * dl1[u];
      dual.lambda2[u] -= step * dl2[u];
    }
    dual.project_lambda();
  };

  // The objective is piecewise-smooth and nearly piecewise-linear for small
  // beta, so a fixed step oscillates. Each round restarts from the best duals
  // seen and tries a ladder of step lengths, keeping the first that improves
  // the weighted objective; the recorded trajectory is non-increasing by
  // construction and flattens once no scale makes progress.
  PostprocessingResult result;
  DualState best = dual;
  double best_f = weighted_objective();
  for (int t = 0; t < hyper.rounds; ++t) {
    result.trajectory.push_back(best_f);
    double step = hyper.lr_dual;
    for (int attempt = 0; attempt < 6; ++attempt, step *= 0.5) {
      dual = best;
      descent_round(step);
      double f = weighted_objective();
      if (f < best_f) {
        best_f = f;
        best = dual;
        break;
      }
    }
  }
  result.trajectory.push_back(best_f);

  // Hard refinement: the relaxed optimum leaves near-ties that the argmax
  // rule can break toward the unfair side. Measure the actual disparities of
  // the hard rule on the labelled calibration rows and push the dual of the
  // worst violated probe until every probe sits within its slack.
  bool labelled = true;
  for (const auto& shard : scores.clients)
    for (const auto& row : shard)
      if (row.label < 0) labelled = false;
  if (labelled && hyper.refine_steps > 0) {
    CalibratedClassifier probe_clf;
    probe_clf.constraints = constraints;
    probe_clf.stats = stats;
    for (int it = 0; it < hyper.refine_steps; ++it) {
      probe_clf.dual = best;
      auto preds = probe_clf.predict_all(scores);
      ConfusionFamily conf;
      conf.num_groups = stats.num_groups;
      conf.num_clients = N;
      conf.cells.assign(stats.num_groups,
                        std::vector<std::optional<ConfusionMatrix>>(N));
      for (int k = 0; k < N; ++k) {
        std::vector<Mat> counts(stats.num_groups,
                                Mat(stats.num_classes, stats.num_classes, 0.0));
        std::vector<long long> cell_n(stats.num_groups, 0);
        for (size_t i = 0; i < scores.clients[k].size(); ++i) {
          const auto& row = scores.clients[k][i];
          counts[row.group](row.label, preds[k][i]) += 1.0;
          ++cell_n[row.group];
        }
        for (int a = 0; a < stats.num_groups; ++a) {
          if (cell_n[a] == 0) continue;
          ConfusionMatrix cm;
          cm.group = a;
          cm.client = k;
          cm.entries = counts[a];
          for (double& v : cm.entries.data) v /= cell_n[a];
          conf.cells[a][k] = std::move(cm);
        }
      }
      double worst = 0.0;
      double* bump = nullptr;
      int bump_client = -1;
      for (size_t u = 0; u < constraints.global_constraints.size(); ++u) {
        double d = disparity(constraints.global_constraints[u], conf);
        if (d - spec.xi_global > worst) {
          worst = d - spec.xi_global;
          bump = &best.lambda1[u];
          bump_client = -1;
        }
        if (-d - spec.xi_global > worst) {
          worst = -d - spec.xi_global;
          bump = &best.lambda2[u];
          bump_client = -1;
        }
      }
      for (int k = 0; k < N; ++k)
        for (size_t u = 0; u < constraints.local_constraints[k].size(); ++u) {
          double d = disparity(constraints.local_constraints[k][u], conf);
          if (d - spec.xi_local > worst) {
            worst = d - spec.xi_local;
            bump = &best.mu1[k][u];
            bump_client = k;
          }
          if (-d - spec.xi_local > worst) {
            worst = -d - spec.xi_local;
            bump = &best.mu2[k][u];
            bump_client = k;
          }
        }
      if (bump == nullptr) break;  // every probe within slack
      *bump += hyper.refine_step_size;
      if (bump_client < 0)
        best.project_lambda();
      else
        best.project_mu(bump_client);
    }
  }

  result.classifier.dual = std::move(best);
  result.classifier.constraints = std::move(constraints);
  result.classifier.stats = stats;
  result.classifier.spec = spec;
  result.classifier.drop_degenerate = hyper.drop_degenerate_probes;
  return result;
}

}  // namespace fedfact
