#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedfact/common.hpp"

namespace fedfact {

// One labelled observation. Label and group are dense 0-based indices.
struct Sample {
  std::vector<double> features;
  int label = 0;
  int group = 0;
};

struct FederatedDataset {
  std::vector<std::vector<Sample>> clients;
  int num_classes = 0;
  int num_groups = 0;
  // Reverse maps from dense indices back to the raw CSV tokens, for reporting.
  std::vector<std::string> label_names;
  std::vector<std::string> group_names;

  int num_clients() const { return static_cast<int>(clients.size()); }
  int feature_dim() const {
    return clients.empty() || clients[0].empty()
               ? 0
               : static_cast<int>(clients[0][0].features.size());
  }
  size_t total_samples() const {
    size_t n = 0;
    for (const auto& c : clients) n += c.size();
    return n;
  }
  void validate() const;
};

// Empirical probabilities of the (A, Y, K) marginals and joints.
// All families derive from the integer count table, so joint/marginal
// consistency is exact up to one division per entry.
struct PopulationStats {
  int num_classes = 0;
  int num_groups = 0;
  int num_clients = 0;
  size_t total = 0;

  // count[a][y][k]
  std::vector<std::vector<std::vector<long long>>> count;

  double p_ayk(int a, int y, int k) const {
    return static_cast<double>(count[a][y][k]) / total;
  }
  double p_ak(int a, int k) const { return static_cast<double>(c_ak(a, k)) / total; }
  double p_ay(int a, int y) const { return static_cast<double>(c_ay(a, y)) / total; }
  double p_yk(int y, int k) const { return static_cast<double>(c_yk(y, k)) / total; }
  double p_a(int a) const { return static_cast<double>(c_a(a)) / total; }
  double p_y(int y) const { return static_cast<double>(c_y(y)) / total; }
  double p_k(int k) const { return static_cast<double>(c_k(k)) / total; }
  double p_a_given_k(int a, int k) const {
    return static_cast<double>(c_ak(a, k)) / c_k(k);
  }
  double p_k_given_a(int k, int a) const {
    long long na = c_a(a);
    if (na == 0) return 0.0;
    return static_cast<double>(c_ak(a, k)) / na;
  }

  long long c_ak(int a, int k) const {
    long long s = 0;
    for (int y = 0; y < num_classes; ++y) s += count[a][y][k];
    return s;
  }
  long long c_ay(int a, int y) const {
    long long s = 0;
    for (int k = 0; k < num_clients; ++k) s += count[a][y][k];
    return s;
  }
  long long c_yk(int y, int k) const {
    long long s = 0;
    for (int a = 0; a < num_groups; ++a) s += count[a][y][k];
    return s;
  }
  long long c_a(int a) const {
    long long s = 0;
    for (int y = 0; y < num_classes; ++y) s += c_ay(a, y);
    return s;
  }
  long long c_y(int y) const {
    long long s = 0;
    for (int a = 0; a < num_groups; ++a) s += c_ay(a, y);
    return s;
  }
  long long c_k(int k) const {
    long long s = 0;
    for (int y = 0; y < num_classes; ++y) s += c_yk(y, k);
    return s;
  }
};

PopulationStats compute_stats(const FederatedDataset& data);

struct CsvSchema {
  std::string label_col;
  std::string group_col;
  std::optional<std::string> client_col;  // absent -> single client
};

FederatedDataset load_csv(const std::string& path, const CsvSchema& schema);

// Pools all clients into one shard (used before re-partitioning).
FederatedDataset pool_clients(const FederatedDataset& data);

// Splits the sensitive groups across clients with a Dir(gamma) draw per group.
// Deterministic for a fixed seed. Retries a bounded number of times if a
// client ends up empty, then errors.
FederatedDataset dirichlet_partition(const FederatedDataset& data, int num_clients,
                                     double gamma, uint64_t seed);

// Appendix-style correlation-controlled split for binary A and Y: client k
// draws weight gamma_k ~ Uniform[lo, hi]; joint class (i, j) counts are
// floor-allocated proportional to the weights with largest-remainder
// assignment of the leftovers (ties to the lowest client index).
FederatedDataset heterogeneous_split(const FederatedDataset& data, int num_clients,
                                     double corr_lo, double corr_hi, uint64_t seed);

// floor(w_k / W * n) per client, with the leftover units going to the largest
// fractional remainders (ties to the lowest index). Sums to n exactly.
std::vector<long long> largest_remainder_allocation(const std::vector<double>& weights,
                                                    long long n);

struct GaussianCellSpec {
  int client = 0;
  int group = 0;
  int label = 0;
  std::vector<double> mean;
  std::vector<double> var;  // diagonal covariance, entries > 0
  int count = 0;
};

struct SyntheticSpec {
  int num_clients = 1;
  int num_classes = 2;
  int num_groups = 2;
  std::vector<GaussianCellSpec> cells;
};

FederatedDataset synth_gaussian_mixture(const SyntheticSpec& spec, uint64_t seed);

// True class-posterior under the generating mixture, eta_y(x, a, k).
// The oracle and post-processing tests use this as the exact eta.
std::vector<double> synth_posterior(const SyntheticSpec& spec,
                                    const std::vector<double>& x, int group,
                                    int client);

// Deterministic per-client train/test split (60/40 by default).
struct SplitDataset {
  FederatedDataset train;
  FederatedDataset test;
};
SplitDataset train_test_split(const FederatedDataset& data, double train_frac,
                              uint64_t seed);

}  // namespace fedfact
