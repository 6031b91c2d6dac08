#pragma once

#include <optional>
#include <vector>

#include "fedfact/dataset.hpp"

namespace fedfact {

enum class Criterion { DP, EOP, EO };

std::string criterion_name(Criterion c);
Criterion parse_criterion(const std::string& s);

// Empirical joint distribution of (Y, Yhat) conditioned on (A = a, K = k).
struct ConfusionMatrix {
  Mat entries;  // m x m, rows = true label, cols = prediction
  int group = 0;
  int client = 0;
};

// One fairness probe: (criterion, scope, probed group a', probed class y).
// EO splits into two linear branches (0 = TPR, 1 = FPR).
struct ConstraintIndex {
  Criterion criterion = Criterion::DP;
  bool global = true;
  int client = -1;  // scope client for local probes
  int probe_group = 0;
  int probe_class = 0;
  int branch = 0;  // nonzero only for EO

  std::string describe() const;
};

// The family {D^{a,k}_u}. Every D in this formulation is zero outside a
// single column, and within that column touches either all rows, the
// diagonal row only, or all rows but the diagonal, with one shared
// coefficient per (a, k). We store exactly that.
struct ConstraintMatrix {
  enum class RowKind { AllRows, DiagOnly, OffDiagRows };

  ConstraintIndex index;
  RowKind row_kind = RowKind::AllRows;
  int column = 0;               // the probed class y
  Mat coef;                     // |A| x N, coefficient per (a, k)
  int num_classes = 0;

  // <D^{a,k}, C>
  double inner(int a, int k, const Mat& confusion) const;
  // (D^{a,k})^T v for an m-vector v; nonzero only at `column`.
  double transpose_apply_at_column(int a, int k, const std::vector<double>& v) const;
  // Dense D^{a,k} for tests and the oracle LP.
  Mat dense(int a, int k) const;
};

struct FairnessSpec {
  Criterion criterion = Criterion::DP;
  double xi_global = 0.01;
  double xi_local = 0.01;  // same slack for every client
  bool enable_global = true;
  bool enable_local = true;
};

// All probe indices for a criterion at the given scope.
std::vector<ConstraintIndex> enumerate_probes(Criterion c, bool global, int client,
                                              int num_groups, int num_classes);

// Builds the constraint family for one probe from empirical stats.
// Throws EmptyCellError when a denominator probability is zero.
ConstraintMatrix build_constraint(const ConstraintIndex& index,
                                  const PopulationStats& stats);

struct ConstraintSet {
  std::vector<ConstraintMatrix> global_constraints;               // indexed by U_g
  std::vector<std::vector<ConstraintMatrix>> local_constraints;   // [client][u]
  std::vector<ConstraintIndex> dropped;  // probes skipped as degenerate
};

// Builds every enabled probe. With drop_degenerate, unbuildable probes are
// recorded and skipped instead of aborting the run.
ConstraintSet build_constraint_set(const FairnessSpec& spec,
                                   const PopulationStats& stats,
                                   bool drop_degenerate = false);

ConfusionMatrix empirical_confusion(const std::vector<int>& predictions,
                                    const std::vector<Sample>& shard, int group,
                                    int client);

// All (a, k) confusion cells; cells with no samples are left empty.
struct ConfusionFamily {
  int num_groups = 0;
  int num_clients = 0;
  std::vector<std::vector<std::optional<ConfusionMatrix>>> cells;  // [a][k]

  const Mat* get(int a, int k) const {
    return cells[a][k] ? &cells[a][k]->entries : nullptr;
  }
};

ConfusionFamily compute_confusions(
    const std::vector<std::vector<int>>& predictions_per_client,
    const FederatedDataset& data);

// Signed disparity sum_{a,k} <D^{a,k}, C^{a,k}>. Cells with zero D are
// allowed to be missing; a missing cell under a nonzero D is an error.
double disparity(const ConstraintMatrix& constraint, const ConfusionFamily& confusions);

struct RiskMatrix {
  Mat entries;
  static RiskMatrix classification_error(int m) {
    RiskMatrix r;
    r.entries = Mat(m, m, 1.0);
    for (int i = 0; i < m; ++i) r.entries(i, i) = 0.0;
    return r;
  }
};

double risk(const std::vector<std::vector<int>>& predictions_per_client,
            const FederatedDataset& data, const RiskMatrix& r);

// Reported metric: max |disparity| over probes (per Appendix-style EO
// averaging of the two branch magnitudes per probe pair).
struct DisparityReport {
  double max_global = 0.0;
  double max_local = 0.0;  // max over clients of their local metric
  std::vector<std::pair<ConstraintIndex, double>> per_probe;
};

DisparityReport evaluate_disparities(const ConstraintSet& constraints,
                                     const ConfusionFamily& confusions);

}  // namespace fedfact
