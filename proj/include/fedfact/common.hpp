#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedfact {

// Row-major m x n matrix of doubles. Everything in this project is
// desk-scale, so a flat vector is all we need.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(int i, int j) { return data[i * cols + j]; }
  double operator()(int i, int j) const { return data[i * cols + j]; }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double min_entry() const {
    double v = data.empty() ? 0.0 : data[0];
    for (double x : data) v = std::min(v, x);
    return v;
  }
};

inline double frobenius_inner(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// y = A^T x  (A: m x m, x: length m)
inline std::vector<double> transpose_apply(const Mat& a, const std::vector<double>& x) {
  std::vector<double> y(a.cols, 0.0);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) y[j] += a(i, j) * x[i];
  return y;
}

inline std::vector<double> softmax(const std::vector<double>& s) {
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  std::vector<double> p(s.size());
  double z = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    p[i] = std::exp(s[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

inline double log_sum_exp(const std::vector<double>& s) {
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  return mx + std::log(z);
}

inline int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Deterministic RNG; state is always explicit, never global.
using Rng = std::mt19937_64;

// Derives an independent stream for (seed, tag...) so parallel clients and
// rounds never share state.
inline Rng make_rng(uint64_t seed, uint64_t tag1 = 0, uint64_t tag2 = 0) {
  std::seed_seq seq{seed, tag1, tag2};
  return Rng(seq);
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a constraint needs a probability that is empirically zero
// (e.g. an empty (group, client) cell). Names the offending cell.
struct EmptyCellError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedfact
