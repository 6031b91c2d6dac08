#include "fedfact/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedfact {

long long DiscreteInstance::total_weight() const {
  long long t = 0;
  for (const auto& by_a : weight)
    for (const auto& by_y : by_a)
      for (const auto& by_k : by_y)
        for (long long w : by_k) t += w;
  return t;
}

double DiscreteInstance::prob(int x, int a, int y, int k) const {
  return static_cast<double>(weight[x][a][y][k]) / total_weight();
}

long long DiscreteInstance::weight_xak(int x, int a, int k) const {
  long long t = 0;
  for (int y = 0; y < num_classes; ++y) t += weight[x][a][y][k];
  return t;
}

double DiscreteInstance::mass_cell(int a, int k) const {
  long long t = 0;
  for (int x = 0; x < num_support; ++x) t += weight_xak(x, a, k);
  return static_cast<double>(t) / total_weight();
}

std::vector<double> DiscreteInstance::posterior(int x, int a, int k) const {
  long long t = weight_xak(x, a, k);
  if (t == 0)
    throw DataError("posterior of empty cell (x=" + std::to_string(x) + ", a=" +
                    std::to_string(a) + ", k=" + std::to_string(k) + ")");
  std::vector<double> eta(num_classes);
  for (int y = 0; y < num_classes; ++y)
    eta[y] = static_cast<double>(weight[x][a][y][k]) / t;
  return eta;
}

PopulationStats DiscreteInstance::stats() const {
  PopulationStats st;
  st.num_classes = num_classes;
  st.num_groups = num_groups;
  st.num_clients = num_clients;
  st.count.assign(num_groups,
                  std::vector<std::vector<long long>>(
                      num_classes, std::vector<long long>(num_clients, 0)));
  for (int x = 0; x < num_support; ++x)
    for (int a = 0; a < num_groups; ++a)
      for (int y = 0; y < num_classes; ++y)
        for (int k = 0; k < num_clients; ++k) {
          st.count[a][y][k] += weight[x][a][y][k];
          st.total += weight[x][a][y][k];
        }
  return st;
}

void DiscreteInstance::validate() const {
  if (num_support <= 0 || num_classes <= 0 || num_groups <= 0 || num_clients <= 0)
    throw DataError("instance dimensions must be positive");
  if (static_cast<int>(weight.size()) != num_support)
    throw DataError("weight table has wrong support size");
  for (const auto& by_a : weight) {
    if (static_cast<int>(by_a.size()) != num_groups)
      throw DataError("weight table has wrong group size");
    for (const auto& by_y : by_a) {
      if (static_cast<int>(by_y.size()) != num_classes)
        throw DataError("weight table has wrong class size");
      for (const auto& by_k : by_y) {
        if (static_cast<int>(by_k.size()) != num_clients)
          throw DataError("weight table has wrong client size");
        for (long long w : by_k)
          if (w < 0) throw DataError("negative weight");
      }
    }
  }
  if (total_weight() <= 0) throw DataError("instance has zero total weight");
}

nlohmann::json DiscreteInstance::to_json() const {
  nlohmann::json j;
  j["num_support"] = num_support;
  j["num_classes"] = num_classes;
  j["num_groups"] = num_groups;
  j["num_clients"] = num_clients;
  j["weight"] = weight;
  return j;
}

DiscreteInstance DiscreteInstance::from_json(const nlohmann::json& j) {
  DiscreteInstance inst;
  inst.num_support = j.at("num_support").get<int>();
  inst.num_classes = j.at("num_classes").get<int>();
  inst.num_groups = j.at("num_groups").get<int>();
  inst.num_clients = j.at("num_clients").get<int>();
  inst.weight = j.at("weight")
                    .get<std::vector<
                        std::vector<std::vector<std::vector<long long>>>>>();
  inst.validate();
  return inst;
}

DiscreteInstance random_instance(int num_support, int num_classes, int num_groups,
                                 int num_clients, uint64_t seed) {
  DiscreteInstance inst;
  inst.num_support = num_support;
  inst.num_classes = num_classes;
  inst.num_groups = num_groups;
  inst.num_clients = num_clients;
  Rng rng = make_rng(seed, 0x0acceu);
  std::uniform_int_distribution<long long> wd(1, 9);
  inst.weight.assign(
      num_support,
      std::vector<std::vector<std::vector<long long>>>(
          num_groups, std::vector<std::vector<long long>>(
                          num_classes, std::vector<long long>(num_clients, 0))));
  for (int x = 0; x < num_support; ++x)
    for (int a = 0; a < num_groups; ++a)
      for (int y = 0; y < num_classes; ++y)
        for (int k = 0; k < num_clients; ++k) inst.weight[x][a][y][k] = wd(rng);
  return inst;
}

PluginScores exact_scores(const DiscreteInstance& instance) {
  PluginScores scores;
  scores.num_classes = instance.num_classes;
  scores.num_groups = instance.num_groups;
  scores.clients.resize(instance.num_clients);
  for (int k = 0; k < instance.num_clients; ++k)
    for (int x = 0; x < instance.num_support; ++x)
      for (int a = 0; a < instance.num_groups; ++a) {
        if (instance.weight_xak(x, a, k) == 0) continue;
        auto eta = instance.posterior(x, a, k);
        for (int y = 0; y < instance.num_classes; ++y)
          for (long long c = 0; c < instance.weight[x][a][y][k]; ++c) {
            ScoreRow row;
            row.probs = eta;
            row.group = a;
            row.label = y;
            scores.clients[k].push_back(std::move(row));
          }
      }
  return scores;
}

std::vector<LPSolution::Cell> oracle_cells(const DiscreteInstance& instance,
                                           OracleMode mode) {
  std::vector<LPSolution::Cell> cells;
  for (int k = 0; k < instance.num_clients; ++k)
    for (int x = 0; x < instance.num_support; ++x) {
      if (mode == OracleMode::AttributeBlind) {
        long long w = 0;
        for (int a = 0; a < instance.num_groups; ++a)
          w += instance.weight_xak(x, a, k);
        if (w > 0) cells.push_back({k, x, -1});
      } else {
        for (int a = 0; a < instance.num_groups; ++a)
          if (instance.weight_xak(x, a, k) > 0) cells.push_back({k, x, a});
      }
    }
  return cells;
}

namespace {

// Per (cell, y) coefficients of the linear functionals the LP needs:
// `gain` is the correct-classification mass, `probe[u]` the disparity weight.
struct CellCoefficients {
  std::vector<std::vector<double>> gain;                // [cell][y]
  std::vector<std::vector<std::vector<double>>> probe;  // [u][cell][y]
  std::vector<double> slack;                            // per probe u
  size_t num_global = 0;
};

// D_u's nonzero rows at its column, as a set membership test.
bool row_active(const ConstraintMatrix& d, int i) {
  switch (d.row_kind) {
    case ConstraintMatrix::RowKind::AllRows:
      return true;
    case ConstraintMatrix::RowKind::DiagOnly:
      return i == d.column;
    case ConstraintMatrix::RowKind::OffDiagRows:
      return i != d.column;
  }
  return false;
}

CellCoefficients build_coefficients(const DiscreteInstance& instance,
                                    const ConstraintSet& constraints,
                                    const FairnessSpec& spec,
                                    const std::vector<LPSolution::Cell>& cells) {
  const int m = instance.num_classes;
  CellCoefficients cc;
  cc.num_global = constraints.global_constraints.size();
  double total = static_cast<double>(instance.total_weight());

  cc.gain.assign(cells.size(), std::vector<double>(m, 0.0));
  for (size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    for (int a = 0; a < instance.num_groups; ++a) {
      if (cell.group >= 0 && a != cell.group) continue;
      for (int y = 0; y < m; ++y)
        cc.gain[c][y] += instance.weight[cell.support][a][y][cell.client] / total;
    }
  }

  std::vector<const ConstraintMatrix*> probes;
  for (const auto& d : constraints.global_constraints) {
    probes.push_back(&d);
    cc.slack.push_back(spec.xi_global);
  }
  for (const auto& per_client : constraints.local_constraints)
    for (const auto& d : per_client) {
      probes.push_back(&d);
      cc.slack.push_back(spec.xi_local);
    }

  cc.probe.assign(probes.size(),
                  std::vector<std::vector<double>>(cells.size(),
                                                   std::vector<double>(m, 0.0)));
  for (size_t u = 0; u < probes.size(); ++u) {
    const ConstraintMatrix& d = *probes[u];
    for (size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      int k = cell.client;
      for (int a = 0; a < instance.num_groups; ++a) {
        if (cell.group >= 0 && a != cell.group) continue;
        double coef = d.coef(a, k);
        if (coef == 0.0) continue;
        double cell_mass = instance.mass_cell(a, k);
        if (cell_mass <= 0.0) continue;
        // contribution of h(yhat = column | cell) to <D^{a,k}, C^{a,k}>
        double w = 0.0;
        for (int i = 0; i < d.num_classes; ++i)
          if (row_active(d, i))
            w += instance.weight[cell.support][a][i][k] / total;
        cc.probe[u][c][d.column] += coef * w / cell_mass;
      }
    }
  }
  return cc;
}

double dot_rows(const std::vector<std::vector<double>>& coef,
                const std::vector<std::vector<double>>& rows) {
  double v = 0.0;
  for (size_t c = 0; c < coef.size(); ++c)
    for (size_t y = 0; y < coef[c].size(); ++y) v += coef[c][y] * rows[c][y];
  return v;
}

}  // namespace

LinearProgramResult solve_lp(const LinearProgram& lp) {
  const size_t n = lp.objective.size();
  const size_t m = lp.rows.size();
  const double eps = 1e-9;

  // Build [A | slack | artificial] with nonnegative rhs.
  std::vector<std::vector<double>> A(m);
  std::vector<double> b(m);
  std::vector<bool> needs_artificial(m, false);
  size_t num_slack = 0;
  for (size_t i = 0; i < m; ++i)
    if (!lp.is_equality[i]) ++num_slack;

  size_t slack_base = n;
  size_t art_base = n + num_slack;
  size_t total_cols = art_base + m;  // at most one artificial per row

  std::vector<int> slack_col(m, -1);
  size_t next_slack = 0;
  for (size_t i = 0; i < m; ++i) {
    A[i].assign(total_cols, 0.0);
    double sign = (lp.rhs[i] < 0.0) ? -1.0 : 1.0;
    for (size_t j = 0; j < n; ++j) A[i][j] = sign * lp.rows[i][j];
    b[i] = sign * lp.rhs[i];
    if (!lp.is_equality[i]) {
      slack_col[i] = static_cast<int>(slack_base + next_slack);
      ++next_slack;
      // a <= row negated becomes >=: slack enters with -1 and the row needs
      // an artificial basis column
      A[i][slack_col[i]] = sign;
      needs_artificial[i] = (sign < 0.0);
    } else {
      needs_artificial[i] = true;
    }
  }

  std::vector<int> basis(m, -1);
  for (size_t i = 0; i < m; ++i) {
    if (!needs_artificial[i]) {
      basis[i] = slack_col[i];
    } else {
      basis[i] = static_cast<int>(art_base + i);
      A[i][basis[i]] = 1.0;
    }
  }

  auto run_simplex = [&](const std::vector<double>& cost, size_t col_limit) {
    size_t iter_cap = 200000;
    for (size_t iter = 0; iter < iter_cap; ++iter) {
      // reduced costs z_j = c_j - c_B^T A_j over the maintained tableau
      int enter = -1;
      for (size_t j = 0; j < col_limit; ++j) {
        double z = cost[j];
        for (size_t i = 0; i < m; ++i)
          if (cost[basis[i]] != 0.0) z -= cost[basis[i]] * A[i][j];
        if (z < -eps) {
          enter = static_cast<int>(j);
          break;  // Bland: lowest eligible index
        }
      }
      if (enter < 0) return;
      int leave = -1;
      double best_ratio = 0.0;
      for (size_t i = 0; i < m; ++i) {
        if (A[i][enter] > eps) {
          double ratio = b[i] / A[i][enter];
          if (leave < 0 || ratio < best_ratio - eps ||
              (ratio < best_ratio + eps && basis[i] < basis[leave]))
            leave = static_cast<int>(i), best_ratio = ratio;
        }
      }
      if (leave < 0) throw NumericError("unbounded linear program");
      // pivot
      double piv = A[leave][enter];
      for (size_t j = 0; j < total_cols; ++j) A[leave][j] /= piv;
      b[leave] /= piv;
      for (size_t i = 0; i < m; ++i) {
        if (static_cast<int>(i) == leave) continue;
        double f = A[i][enter];
        if (f == 0.0) continue;
        for (size_t j = 0; j < total_cols; ++j) A[i][j] -= f * A[leave][j];
        b[i] -= f * b[leave];
      }
      basis[leave] = enter;
    }
    throw NumericError("simplex iteration cap exceeded");
  };

  // Phase 1: drive the artificials to zero.
  std::vector<double> phase1_cost(total_cols, 0.0);
  for (size_t i = 0; i < m; ++i)
    if (needs_artificial[i]) phase1_cost[art_base + i] = 1.0;
  run_simplex(phase1_cost, total_cols);

  double infeas = 0.0;
  for (size_t i = 0; i < m; ++i)
    if (basis[i] >= static_cast<int>(art_base)) infeas += b[i];
  LinearProgramResult result;
  if (infeas > 1e-7) {
    result.feasible = false;
    return result;
  }
  // pivot any degenerate artificial out of the basis if possible
  for (size_t i = 0; i < m; ++i) {
    if (basis[i] < static_cast<int>(art_base)) continue;
    int enter = -1;
    for (size_t j = 0; j < art_base; ++j)
      if (std::fabs(A[i][j]) > eps) {
        enter = static_cast<int>(j);
        break;
      }
    if (enter < 0) continue;  // redundant row, stays at zero
    double piv = A[i][enter];
    for (size_t j = 0; j < total_cols; ++j) A[i][j] /= piv;
    b[i] /= piv;
    for (size_t r = 0; r < m; ++r) {
      if (r == i) continue;
      double f = A[r][enter];
      if (f == 0.0) continue;
      for (size_t j = 0; j < total_cols; ++j) A[r][j] -= f * A[i][j];
      b[r] -= f * b[i];
    }
    basis[i] = enter;
  }

  // Phase 2: artificial columns stay out of pricing.
  std::vector<double> phase2_cost(total_cols, 0.0);
  for (size_t j = 0; j < n; ++j) phase2_cost[j] = lp.objective[j];
  run_simplex(phase2_cost, art_base);

  result.x.assign(n, 0.0);
  for (size_t i = 0; i < m; ++i)
    if (basis[i] < static_cast<int>(n)) result.x[basis[i]] = b[i];
  result.value = 0.0;
  for (size_t j = 0; j < n; ++j) result.value += lp.objective[j] * result.x[j];
  return result;
}

LPSolution solve_primal_lp(const DiscreteInstance& instance, const FairnessSpec& spec,
                           OracleMode mode) {
  instance.validate();
  auto st = instance.stats();
  auto constraints = build_constraint_set(spec, st, false);
  auto cells = oracle_cells(instance, mode);
  auto cc = build_coefficients(instance, constraints, spec, cells);
  const int m = instance.num_classes;
  const size_t nvars = cells.size() * m;

  LinearProgram lp;
  lp.objective.assign(nvars, 0.0);
  for (size_t c = 0; c < cells.size(); ++c)
    for (int y = 0; y < m; ++y) lp.objective[c * m + y] = -cc.gain[c][y];

  for (size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> row(nvars, 0.0);
    for (int y = 0; y < m; ++y) row[c * m + y] = 1.0;
    lp.rows.push_back(std::move(row));
    lp.rhs.push_back(1.0);
    lp.is_equality.push_back(true);
  }
  for (size_t u = 0; u < cc.probe.size(); ++u) {
    std::vector<double> pos(nvars, 0.0);
    for (size_t c = 0; c < cells.size(); ++c)
      for (int y = 0; y < m; ++y) pos[c * m + y] = cc.probe[u][c][y];
    std::vector<double> neg(nvars);
    for (size_t j = 0; j < nvars; ++j) neg[j] = -pos[j];
    lp.rows.push_back(std::move(pos));
    lp.rhs.push_back(cc.slack[u]);
    lp.is_equality.push_back(false);
    lp.rows.push_back(std::move(neg));
    lp.rhs.push_back(cc.slack[u]);
    lp.is_equality.push_back(false);
  }

  auto lpres = solve_lp(lp);
  LPSolution sol;
  sol.cells = cells;
  sol.feasible = lpres.feasible;
  if (!lpres.feasible) return sol;
  sol.rows.assign(cells.size(), std::vector<double>(m, 0.0));
  for (size_t c = 0; c < cells.size(); ++c)
    for (int y = 0; y < m; ++y) sol.rows[c][y] = lpres.x[c * m + y];
  sol.risk = 1.0 + lpres.value;
  for (size_t u = 0; u < cc.probe.size(); ++u)
    sol.probe_disparities.push_back(dot_rows(cc.probe[u], sol.rows));
  return sol;
}

LPSolution solve_bayes(const DiscreteInstance& instance, OracleMode mode) {
  FairnessSpec vacuous;
  vacuous.enable_global = false;
  vacuous.enable_local = false;
  return solve_primal_lp(instance, vacuous, mode);
}

OracleEvaluation evaluate_randomized(const DiscreteInstance& instance,
                                     const FairnessSpec& spec, OracleMode mode,
                                     const std::vector<LPSolution::Cell>& cells,
                                     const std::vector<std::vector<double>>& rows) {
  auto st = instance.stats();
  auto constraints = build_constraint_set(spec, st, false);
  auto cc = build_coefficients(instance, constraints, spec, cells);
  (void)mode;
  OracleEvaluation ev;
  double gain = dot_rows(cc.gain, rows);
  ev.risk = 1.0 - gain;
  for (size_t u = 0; u < cc.probe.size(); ++u) {
    double d = dot_rows(cc.probe[u], rows);
    ev.probe_disparities.push_back(d);
    if (u < cc.num_global)
      ev.max_abs_global = std::max(ev.max_abs_global, std::fabs(d));
    else
      ev.max_abs_local = std::max(ev.max_abs_local, std::fabs(d));
  }
  return ev;
}

DeterministicEnumeration enumerate_deterministic(const DiscreteInstance& instance,
                                                 const FairnessSpec& spec,
                                                 OracleMode mode,
                                                 double feasibility_tol,
                                                 size_t max_enumeration) {
  auto st = instance.stats();
  auto constraints = build_constraint_set(spec, st, false);
  auto cells = oracle_cells(instance, mode);
  auto cc = build_coefficients(instance, constraints, spec, cells);
  const int m = instance.num_classes;

  double budget = std::pow(static_cast<double>(m),
                           static_cast<double>(cells.size()));
  if (budget > static_cast<double>(max_enumeration))
    throw ConfigError("deterministic enumeration budget exceeded");

  DeterministicEnumeration out;
  out.total = static_cast<size_t>(budget + 0.5);
  out.best_feasible_risk = std::numeric_limits<double>::infinity();

  std::vector<int> decisions(cells.size(), 0);
  while (true) {
    double gain = 0.0;
    bool feasible = true;
    for (size_t u = 0; u < cc.probe.size() && feasible; ++u) {
      double d = 0.0;
      for (size_t c = 0; c < cells.size(); ++c) d += cc.probe[u][c][decisions[c]];
      if (std::fabs(d) > cc.slack[u] + feasibility_tol) feasible = false;
    }
    if (feasible) {
      for (size_t c = 0; c < cells.size(); ++c) gain += cc.gain[c][decisions[c]];
      ++out.feasible_count;
      double r = 1.0 - gain;
      if (r < out.best_feasible_risk) {
        out.best_feasible_risk = r;
        out.best_decisions = decisions;
      }
    }
    // odometer increment
    size_t pos = 0;
    while (pos < decisions.size() && ++decisions[pos] == m) {
      decisions[pos] = 0;
      ++pos;
    }
    if (pos == decisions.size()) break;
  }
  return out;
}

double dual_value(const DiscreteInstance& instance, const ConstraintSet& constraints,
                  const DualState& dual, double xi_global, double xi_local) {
  auto st = instance.stats();
  double h = 0.0;
  for (int k = 0; k < instance.num_clients; ++k)
    for (int a = 0; a < instance.num_groups; ++a) {
      double p_cell = st.p_ak(a, k);
      if (p_cell <= 0.0) continue;
      long long cell_w = 0;
      for (int x = 0; x < instance.num_support; ++x)
        cell_w += instance.weight_xak(x, a, k);
      double exp_max = 0.0;
      for (int x = 0; x < instance.num_support; ++x) {
        long long w = instance.weight_xak(x, a, k);
        if (w == 0) continue;
        auto z = calibrated_scores(dual, constraints, st, k, a,
                                   instance.posterior(x, a, k));
        exp_max += static_cast<double>(w) / cell_w *
                   *std::max_element(z.begin(), z.end());
      }
      h += p_cell * exp_max;
    }
  h += xi_global * dual.lambda_l1();
  for (size_t k = 0; k < dual.mu1.size(); ++k)
    h += xi_local * dual.mu_l1(static_cast<int>(k));
  return h;
}

nlohmann::json solution_to_json(const LPSolution& sol) {
  nlohmann::json j;
  j["feasible"] = sol.feasible;
  j["risk"] = sol.risk;
  j["probe_disparities"] = sol.probe_disparities;
  nlohmann::json cells = nlohmann::json::array();
  for (size_t c = 0; c < sol.cells.size(); ++c) {
    nlohmann::json cj;
    cj["client"] = sol.cells[c].client;
    cj["support"] = sol.cells[c].support;
    cj["group"] = sol.cells[c].group;
    cj["row"] = sol.rows.empty() ? std::vector<double>{} : sol.rows[c];
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  return j;
}

}  // namespace fedfact
