#include "fedfact/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedfact {

void project_l1_ball(std::vector<double>& x, double radius) {
  double sum = 0.0;
  for (double& v : x) {
    if (v < 0.0) v = 0.0;
    sum += v;
  }
  if (sum <= radius) return;
  // sort-and-threshold projection onto the simplex of the given radius
  std::vector<double> u = x;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  for (size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    double t = (cum - radius) / static_cast<double>(j + 1);
    if (t >= u[j] && j > 0) break;
    theta = t;
  }
  for (double& v : x) v = std::max(0.0, v - theta);
}

DualState DualState::zeros(const ConstraintSet& constraints, double bound) {
  DualState d;
  d.dual_bound = bound;
  d.lambda1.assign(constraints.global_constraints.size(), 0.0);
  d.lambda2.assign(constraints.global_constraints.size(), 0.0);
  d.mu1.resize(constraints.local_constraints.size());
  d.mu2.resize(constraints.local_constraints.size());
  for (size_t k = 0; k < constraints.local_constraints.size(); ++k) {
    d.mu1[k].assign(constraints.local_constraints[k].size(), 0.0);
    d.mu2[k].assign(constraints.local_constraints[k].size(), 0.0);
  }
  return d;
}

void DualState::project_lambda() {
  std::vector<double> stacked(lambda1);
  stacked.insert(stacked.end(), lambda2.begin(), lambda2.end());
  project_l1_ball(stacked, dual_bound);
  size_t n = lambda1.size();
  std::copy(stacked.begin(), stacked.begin() + n, lambda1.begin());
  std::copy(stacked.begin() + n, stacked.end(), lambda2.begin());
}

void DualState::project_mu(int k) {
  std::vector<double> stacked(mu1[k]);
  stacked.insert(stacked.end(), mu2[k].begin(), mu2[k].end());
  project_l1_ball(stacked, dual_bound);
  size_t n = mu1[k].size();
  std::copy(stacked.begin(), stacked.begin() + n, mu1[k].begin());
  std::copy(stacked.begin() + n, stacked.end(), mu2[k].begin());
}

double DualState::lambda_l1() const {
  double s = 0.0;
  for (double v : lambda1) s += std::fabs(v);
  for (double v : lambda2) s += std::fabs(v);
  return s;
}

double DualState::mu_l1(int k) const {
  double s = 0.0;
  for (double v : mu1[k]) s += std::fabs(v);
  for (double v : mu2[k]) s += std::fabs(v);
  return s;
}

bool DualState::feasible(double tol) const {
  for (double v : lambda1)
    if (v < -tol) return false;
  for (double v : lambda2)
    if (v < -tol) return false;
  if (lambda_l1() > dual_bound + tol) return false;
  for (size_t k = 0; k < mu1.size(); ++k) {
    for (double v : mu1[k])
      if (v < -tol) return false;
    for (double v : mu2[k])
      if (v < -tol) return false;
    if (mu_l1(static_cast<int>(k)) > dual_bound + tol) return false;
  }
  return true;
}

namespace {

void subtract_scaled_constraint(Mat& m, const ConstraintMatrix& d, int a, int k,
                                double scale) {
  double c = d.coef(a, k);
  if (c == 0.0 || scale == 0.0) return;
  double v = scale * c;
  switch (d.row_kind) {
    case ConstraintMatrix::RowKind::AllRows:
      for (int i = 0; i < d.num_classes; ++i) m(i, d.column) -= v;
      break;
    case ConstraintMatrix::RowKind::DiagOnly:
      m(d.column, d.column) -= v;
      break;
    case ConstraintMatrix::RowKind::OffDiagRows:
      for (int i = 0; i < d.num_classes; ++i)
        if (i != d.column) m(i, d.column) -= v;
      break;
  }
}

}  // namespace

CalibrationFamily build_calibration(const DualState& dual,
                                    const ConstraintSet& constraints,
                                    const PopulationStats& stats, int client) {
  CalibrationFamily fam;
  fam.num_classes = stats.num_classes;
  fam.num_groups = stats.num_groups;
  fam.m_by_group.resize(stats.num_groups);
  for (int a = 0; a < stats.num_groups; ++a) {
    Mat m = Mat::identity(stats.num_classes);
    bool touched = false;
    for (size_t u = 0; u < constraints.global_constraints.size(); ++u) {
      double dl = dual.lambda1[u] - dual.lambda2[u];
      if (dl != 0.0 && constraints.global_constraints[u].coef(a, client) != 0.0)
        touched = true;
      subtract_scaled_constraint(m, constraints.global_constraints[u], a, client,
                                 dl / std::max(stats.p_ak(a, client), 1e-300));
    }
    if (client < static_cast<int>(constraints.local_constraints.size())) {
      const auto& local = constraints.local_constraints[client];
      for (size_t u = 0; u < local.size(); ++u) {
        double dm = dual.mu1[client][u] - dual.mu2[client][u];
        if (dm != 0.0 && local[u].coef(a, client) != 0.0) touched = true;
        subtract_scaled_constraint(m, local[u], a, client,
                                   dm / std::max(stats.p_ak(a, client), 1e-300));
      }
    }
    if (touched && stats.c_ak(a, client) == 0)
      throw EmptyCellError("calibration for empty cell (a=" + std::to_string(a) +
                           ", k=" + std::to_string(client) + ")");
    fam.m_by_group[a] = std::move(m);
  }
  double mn = 0.0;
  for (const auto& m : fam.m_by_group) mn = std::min(mn, m.min_entry());
  fam.kappa = (mn < 0.0) ? -mn + 1e-6 : 0.0;
  fam.mbar_by_group = fam.m_by_group;
  for (auto& m : fam.mbar_by_group)
    for (double& v : m.data) v += fam.kappa;
  return fam;
}

std::vector<double> calibrated_scores(const DualState& dual,
                                      const ConstraintSet& constraints,
                                      const PopulationStats& stats, int client,
                                      int group, const std::vector<double>& eta) {
  std::vector<double> z = eta;  // I^T eta
  double p = stats.p_ak(group, client);
  auto accumulate = [&](const ConstraintMatrix& d, double delta) {
    if (delta == 0.0) return;
    double t = d.transpose_apply_at_column(group, client, eta);
    if (t == 0.0) return;
    if (p <= 0.0)
      throw EmptyCellError("calibrated score needs empty cell (a=" +
                           std::to_string(group) + ", k=" + std::to_string(client) +
                           ")");
    z[d.column] -= delta / p * t;
  };
  for (size_t u = 0; u < constraints.global_constraints.size(); ++u)
    accumulate(constraints.global_constraints[u], dual.lambda1[u] - dual.lambda2[u]);
  const auto& local = constraints.local_constraints[client];
  for (size_t u = 0; u < local.size(); ++u)
    accumulate(local[u], dual.mu1[client][u] - dual.mu2[client][u]);
  return z;
}

}  // namespace fedfact
