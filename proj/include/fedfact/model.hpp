#pragma once

#include <functional>

#include "fedfact/dataset.hpp"

namespace fedfact {

// Parametric scoring function s(x; phi): R^d -> R^m with a softmax head.
// Linear or one-hidden-layer rectifier MLP, parameters in one flat vector so
// FedAvg aggregation and SGD are plain vector arithmetic.
struct ScoringModel {
  enum class Arch { Linear, Mlp };

  Arch arch = Arch::Linear;
  int input_dim = 0;
  int hidden_dim = 0;  // unused for Linear
  int output_dim = 0;
  std::vector<double> params;

  static ScoringModel linear(int d, int m, uint64_t seed);
  static ScoringModel mlp(int d, int h, int m, uint64_t seed);

  size_t param_count() const;
  std::vector<double> forward(const std::vector<double>& x) const;
  // Accumulates d(loss)/d(params) into grad given d(loss)/d(scores).
  void backward(const std::vector<double>& x, const std::vector<double>& dscores,
                std::vector<double>& grad) const;

  std::vector<double> probabilities(const std::vector<double>& x) const {
    return softmax(forward(x));
  }
  int predict(const std::vector<double>& x) const {
    return argmax_lowest(forward(x));
  }
};

// -sum_i c_i log softmax(s)_i. Reduces to cross-entropy when c = e_y.
double cost_sensitive_loss(const std::vector<double>& scores,
                           const std::vector<double>& cost_row);

// d/ds of the loss above: softmax(s) * sum(c) - c.
std::vector<double> cost_sensitive_loss_grad(const std::vector<double>& scores,
                                             const std::vector<double>& cost_row);

// Supplies the per-sample target weight vector (row y of M-bar for the
// sample's (a, k) cell). Cross-entropy is cost_row = e_y.
using CostRowFn =
    std::function<std::vector<double>(const Sample&)>;

CostRowFn cross_entropy_cost(int m);

// Mean loss over a shard.
double shard_loss(const ScoringModel& model, const std::vector<Sample>& shard,
                  const CostRowFn& cost);

// Analytic gradient of the mean loss over a batch of sample indices.
std::vector<double> batch_gradient(const ScoringModel& model,
                                   const std::vector<Sample>& shard,
                                   const std::vector<size_t>& batch,
                                   const CostRowFn& cost);

// R mini-batch SGD steps with deterministic shuffling. Consumes the supplied
// RNG so callers can share one batch schedule across two models.
struct BatchSchedule {
  std::vector<size_t> order;
  size_t cursor = 0;
  Rng rng;

  BatchSchedule(size_t n, Rng r) : rng(std::move(r)) {
    order.resize(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    reshuffle();
  }
  void reshuffle() {
    std::shuffle(order.begin(), order.end(), rng);
    cursor = 0;
  }
  std::vector<size_t> next_batch(size_t batch_size) {
    if (cursor >= order.size()) reshuffle();
    size_t end = std::min(cursor + batch_size, order.size());
    std::vector<size_t> b(order.begin() + cursor, order.begin() + end);
    cursor = end;
    return b;
  }
};

void sgd_steps(ScoringModel& model, const std::vector<Sample>& shard,
               const CostRowFn& cost, int steps, double lr, size_t batch_size,
               BatchSchedule& schedule);

}  // namespace fedfact
