#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace slg {

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double gelu_grad(double x) {
  const double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// In-place stable softmax over a contiguous row.
inline void softmax_row(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
}

// Backward of softmax_row: ds = p * (dp - sum(p * dp)), written over dp.
inline void softmax_row_backward(const double* p, double* dp, std::size_t n) {
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += p[i] * dp[i];
  for (std::size_t i = 0; i < n; ++i) dp[i] = p[i] * (dp[i] - dot);
}

}  // namespace slg
