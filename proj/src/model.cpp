#include "fedfact/model.hpp"

#include <algorithm>
#include <cmath>

namespace fedfact {

namespace {

// Kaiming-style scaled uniform init with an explicit seed.
void init_uniform(std::vector<double>& w, size_t begin, size_t end, int fan_in,
                  Rng& rng) {
  double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> ud(-bound, bound);
  for (size_t i = begin; i < end; ++i) w[i] = ud(rng);
}

}  // namespace

ScoringModel ScoringModel::linear(int d, int m, uint64_t seed) {
  ScoringModel mod;
  mod.arch = Arch::Linear;
  mod.input_dim = d;
  mod.output_dim = m;
  mod.params.assign(static_cast<size_t>(m) * d + m, 0.0);
  Rng rng = make_rng(seed, 0x11du);
  init_uniform(mod.params, 0, static_cast<size_t>(m) * d, d, rng);
  return mod;
}

ScoringModel ScoringModel::mlp(int d, int h, int m, uint64_t seed) {
  ScoringModel mod;
  mod.arch = Arch::Mlp;
  mod.input_dim = d;
  mod.hidden_dim = h;
  mod.output_dim = m;
  size_t n1 = static_cast<size_t>(h) * d + h;
  size_t n2 = static_cast<size_t>(m) * h + m;
  mod.params.assign(n1 + n2, 0.0);
  Rng rng = make_rng(seed, 0x31fu);
  init_uniform(mod.params, 0, static_cast<size_t>(h) * d, d, rng);
  init_uniform(mod.params, n1, n1 + static_cast<size_t>(m) * h, h, rng);
  return mod;
}

size_t ScoringModel::param_count() const { return params.size(); }

std::vector<double> ScoringModel::forward(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != input_dim)
    throw DataError("feature dimension mismatch in forward pass");
  if (arch == Arch::Linear) {
    // params: W (m x d) row-major, then b (m)
    std::vector<double> s(output_dim, 0.0);
    const double* W = params.data();
    const double* b = W + static_cast<size_t>(output_dim) * input_dim;
    for (int j = 0; j < output_dim; ++j) {
      double v = b[j];
      for (int i = 0; i < input_dim; ++i) v += W[j * input_dim + i] * x[i];
      s[j] = v;
    }
    return s;
  }
  // MLP: W1 (h x d), b1 (h), W2 (m x h), b2 (m)
  const double* W1 = params.data();
  const double* b1 = W1 + static_cast<size_t>(hidden_dim) * input_dim;
  const double* W2 = b1 + hidden_dim;
  const double* b2 = W2 + static_cast<size_t>(output_dim) * hidden_dim;
  std::vector<double> hidden(hidden_dim);
  for (int j = 0; j < hidden_dim; ++j) {
    double v = b1[j];
    for (int i = 0; i < input_dim; ++i) v += W1[j * input_dim + i] * x[i];
    hidden[j] = std::max(0.0, v);
  }
  std::vector<double> s(output_dim);
  for (int j = 0; j < output_dim; ++j) {
    double v = b2[j];
    for (int i = 0; i < hidden_dim; ++i) v += W2[j * hidden_dim + i] * hidden[i];
    s[j] = v;
  }
  return s;
}

void ScoringModel::backward(const std::vector<double>& x,
                            const std::vector<double>& dscores,
                            std::vector<double>& grad) const {
  if (arch == Arch::Linear) {
    double* gW = grad.data();
    double* gb = gW + static_cast<size_t>(output_dim) * input_dim;
    for (int j = 0; j < output_dim; ++j) {
      for (int i = 0; i < input_dim; ++i) gW[j * input_dim + i] += dscores[j] * x[i];
      gb[j] += dscores[j];
    }
    return;
  }
  const double* W1 = params.data();
  const double* b1 = W1 + static_cast<size_t>(hidden_dim) * input_dim;
  const double* W2 = b1 + hidden_dim;
  std::vector<double> pre(hidden_dim), hidden(hidden_dim);
  for (int j = 0; j < hidden_dim; ++j) {
    double v = b1[j];
    for (int i = 0; i < input_dim; ++i) v += W1[j * input_dim + i] * x[i];
    pre[j] = v;
    hidden[j] = std::max(0.0, v);
  }
  size_t n1 = static_cast<size_t>(hidden_dim) * input_dim + hidden_dim;
  double* gW1 = grad.data();
  double* gb1 = gW1 + static_cast<size_t>(hidden_dim) * input_dim;
  double* gW2 = grad.data() + n1;
  double* gb2 = gW2 + static_cast<size_t>(output_dim) * hidden_dim;
  std::vector<double> dhidden(hidden_dim, 0.0);
  for (int j = 0; j < output_dim; ++j) {
    for (int i = 0; i < hidden_dim; ++i) {
      gW2[j * hidden_dim + i] += dscores[j] * hidden[i];
      dhidden[i] += dscores[j] * W2[j * hidden_dim + i];
    }
    gb2[j] += dscores[j];
  }
  for (int j = 0; j < hidden_dim; ++j) {
    if (pre[j] <= 0.0) continue;
    for (int i = 0; i < input_dim; ++i) gW1[j * input_dim + i] += dhidden[j] * x[i];
    gb1[j] += dhidden[j];
  }
}

double cost_sensitive_loss(const std::vector<double>& scores,
                           const std::vector<double>& cost_row) {
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("non-finite score in loss");
  double lse = log_sum_exp(scores);
  double loss = 0.0;
  for (size_t i = 0; i < scores.size(); ++i)
    loss += cost_row[i] * (lse - scores[i]);
  return loss;
}

std::vector<double> cost_sensitive_loss_grad(const std::vector<double>& scores,
                                             const std::vector<double>& cost_row) {
  auto p = softmax(scores);
  double csum = 0.0;
  for (double c : cost_row) csum += c;
  std::vector<double> g(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) g[i] = p[i] * csum - cost_row[i];
  return g;
}

CostRowFn cross_entropy_cost(int m) {
  return [m](const Sample& s) {
    std::vector<double> row(m, 0.0);
    row[s.label] = 1.0;
    return row;
  };
}

double shard_loss(const ScoringModel& model, const std::vector<Sample>& shard,
                  const CostRowFn& cost) {
  double total = 0.0;
  for (const auto& s : shard)
    total += cost_sensitive_loss(model.forward(s.features), cost(s));
  return total / shard.size();
}

std::vector<double> batch_gradient(const ScoringModel& model,
                                   const std::vector<Sample>& shard,
                                   const std::vector<size_t>& batch,
                                   const CostRowFn& cost) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<double> grad(model.param_count(), 0.0);
  for (size_t idx : batch) {
    const auto& s = shard[idx];
    auto scores = model.forward(s.features);
    auto dscores = cost_sensitive_loss_grad(scores, cost(s));
    model.backward(s.features, dscores, grad);
  }
  double inv = 1.0 / batch.size();
  for (double& g : grad) g *= inv;
  return grad;
}

void sgd_steps(ScoringModel& model, const std::vector<Sample>& shard,
               const CostRowFn& cost, int steps, double lr, size_t batch_size,
               BatchSchedule& schedule) {
  for (int r = 0; r < steps; ++r) {
    auto batch = schedule.next_batch(batch_size);
    auto grad = batch_gradient(model, shard, batch, cost);
    for (size_t i = 0; i < model.params.size(); ++i) model.params[i] -= lr * grad[i];
  }
}

}  // namespace fedfact
