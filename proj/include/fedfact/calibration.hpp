#pragma once

#include "fedfact/constraints.hpp"

namespace fedfact {

// Euclidean projection onto {x >= 0, ||x||_1 <= radius}: clip negatives to
// zero, then if still outside the ball apply the sort-and-threshold simplex
// projection.
void project_l1_ball(std::vector<double>& x, double radius);

// Paired nonnegative multipliers for the absolute-value constraints.
// lambda covers global probes; mu[k] covers client k's local probes. Each
// stacked vector is l1-bounded by dual_bound after every projection.
struct DualState {
  std::vector<double> lambda1, lambda2;             // |U_g| each
  std::vector<std::vector<double>> mu1, mu2;        // [client][|U_{l,k}|]
  double dual_bound = 5.0;

  static DualState zeros(const ConstraintSet& constraints, double bound);

  void project_lambda();
  void project_mu(int k);
  double lambda_l1() const;
  double mu_l1(int k) const;
  bool feasible(double tol = 1e-12) const;
};

// The dual-adjusted decision matrices M(a, k) for one client, and the
// kappa-shifted strictly positive variant used as training costs.
struct CalibrationFamily {
  int num_classes = 0;
  int num_groups = 0;
  std::vector<Mat> m_by_group;      // M(a, k) for the owning client
  std::vector<Mat> mbar_by_group;   // M + kappa * 1
  double kappa = 0.0;
};

// M(a,k) = I - (1/p_ak) [ sum_u (l1-l2)_u D^{a,k}_u + sum_u (m1-m2)_{k,u} D^{a,k}_u ].
// kappa is the minimal shift making every entry of the family strictly
// positive (zero when nothing is negative, so zero duals give exact
// cross-entropy costs downstream).
CalibrationFamily build_calibration(const DualState& dual,
                                    const ConstraintSet& constraints,
                                    const PopulationStats& stats, int client);

// M(a,k)^T eta without materializing dense matrices; used by the
// post-processing objective where this product is the hot path.
std::vector<double> calibrated_scores(const DualState& dual,
                                      const ConstraintSet& constraints,
                                      const PopulationStats& stats, int client,
                                      int group, const std::vector<double>& eta);

}  // namespace fedfact
