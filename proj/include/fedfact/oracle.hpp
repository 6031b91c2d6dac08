#pragma once

#include "fedfact/calibration.hpp"
#include "fedfact/postprocessing.hpp"

#include "json.hpp"

namespace fedfact {

// A fully known finite population. Weights are nonnegative integers so every
// probability is an exact ratio and the stats table is exact.
struct DiscreteInstance {
  int num_support = 0;
  int num_classes = 0;
  int num_groups = 0;
  int num_clients = 0;
  // weight[x][a][y][k]
  std::vector<std::vector<std::vector<std::vector<long long>>>> weight;

  long long total_weight() const;
  double prob(int x, int a, int y, int k) const;
  // P(A=a, K=k) and P(x | a, k)
  double mass_cell(int a, int k) const;
  long long weight_xak(int x, int a, int k) const;
  // eta_y(x, a, k) = P(Y=y | x, a, k); throws on empty conditioning cell.
  std::vector<double> posterior(int x, int a, int k) const;
  PopulationStats stats() const;
  void validate() const;

  nlohmann::json to_json() const;
  static DiscreteInstance from_json(const nlohmann::json& j);
};

// All cell weights drawn uniformly from {1, ..., 9}: every marginal any
// constraint needs is positive by construction.
DiscreteInstance random_instance(int num_support, int num_classes, int num_groups,
                                 int num_clients, uint64_t seed);

// Exact plug-in scores: one labelled row per unit of weight, probs equal to
// the true posterior. stats_from_scores of the result equals instance.stats().
PluginScores exact_scores(const DiscreteInstance& instance);

// Attribute-aware classifiers index decisions by (k, x, a); attribute-blind
// ones share the decision across groups at the same (k, x).
enum class OracleMode { AttributeAware, AttributeBlind };

struct LPSolution {
  // rows[cell][y]: randomized decision per LP cell, each row in the simplex.
  std::vector<std::vector<double>> rows;
  // cell identity (k, x, a); a = -1 in attribute-blind mode.
  struct Cell {
    int client = 0, support = 0, group = -1;
  };
  std::vector<Cell> cells;
  double risk = 0.0;
  std::vector<double> probe_disparities;  // global probes then local, flat
  bool feasible = true;
};

// Exact optimum of the fair-classification linear program over randomized
// classifiers: minimize risk subject to |disparity_u| <= slack_u per probe.
LPSolution solve_primal_lp(const DiscreteInstance& instance, const FairnessSpec& spec,
                           OracleMode mode);

// Unconstrained variant (vacuous slacks): the Bayes optimum.
LPSolution solve_bayes(const DiscreteInstance& instance, OracleMode mode);

struct DeterministicEnumeration {
  size_t total = 0;
  size_t feasible_count = 0;
  double best_feasible_risk = 0.0;  // infinity if none feasible
  std::vector<int> best_decisions;  // per cell, same cell order as the LP
};

// Exhaustive sweep over all m^(#cells) deterministic classifiers.
// Throws ConfigError when the budget m^(#cells) exceeds max_enumeration.
DeterministicEnumeration enumerate_deterministic(const DiscreteInstance& instance,
                                                 const FairnessSpec& spec,
                                                 OracleMode mode,
                                                 double feasibility_tol = 1e-9,
                                                 size_t max_enumeration = 1000000);

// Risk and signed per-probe disparities of a randomized classifier given as
// simplex rows over the same cell list the LP uses.
struct OracleEvaluation {
  double risk = 0.0;
  std::vector<double> probe_disparities;
  double max_abs_global = 0.0;
  double max_abs_local = 0.0;
};
OracleEvaluation evaluate_randomized(const DiscreteInstance& instance,
                                     const FairnessSpec& spec, OracleMode mode,
                                     const std::vector<LPSolution::Cell>& cells,
                                     const std::vector<std::vector<double>>& rows);

// Cell list the LP and the enumeration share for a given mode, in fixed order.
std::vector<LPSolution::Cell> oracle_cells(const DiscreteInstance& instance,
                                           OracleMode mode);

// Exact hard-max dual value of Eq-style H(lambda, mu):
// sum_{k,a} p_{a,k} E_x[max_y (M(a,k)^T eta)_y] + slack l1 terms.
double dual_value(const DiscreteInstance& instance, const ConstraintSet& constraints,
                  const DualState& dual, double xi_global, double xi_local);

nlohmann::json solution_to_json(const LPSolution& sol);

// Generic dense LP in the form: minimize c.x, subject to A x (<=|=) b, x >= 0.
// Two-phase simplex with Bland's rule. Exposed for direct testing.
struct LinearProgram {
  std::vector<double> objective;
  std::vector<std::vector<double>> rows;
  std::vector<double> rhs;
  std::vector<bool> is_equality;  // parallel to rows
};
struct LinearProgramResult {
  bool feasible = true;
  double value = 0.0;
  std::vector<double> x;
};
LinearProgramResult solve_lp(const LinearProgram& lp);

}  // namespace fedfact
