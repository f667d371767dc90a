#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "slg/rng.hpp"

namespace slg {

// Row-major double matrix plus the handful of kernels the model needs.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a[r * cols + c];
  }
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
  std::size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const {
    return rows == o.rows && cols == o.cols;
  }
  void zero() { a.assign(a.size(), 0.0); }

  void fill_gaussian(Rng& rng, double sd) {
    for (auto& v : a) v = rng.gaussian(0.0, sd);
  }
};

// C = A * B^T   (A: n x k, B: m x k) -> n x m
inline void matmul_nt(const Mat& A, const Mat& B, Mat& C) {
  if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: inner dim");
  C = Mat(A.rows, B.rows);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (std::size_t j = 0; j < B.rows; ++j) {
      const double* bj = B.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < A.cols; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
}

// C = A * B   (A: n x k, B: k x m) -> n x m
inline void matmul_nn(const Mat& A, const Mat& B, Mat& C) {
  if (A.cols != B.rows) throw std::invalid_argument("matmul_nn: inner dim");
  C = Mat(A.rows, B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double* ai = A.row(i);
    double* ci = C.row(i);
    for (std::size_t k = 0; k < A.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = B.row(k);
      for (std::size_t j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

// C += A^T * B  (A: n x r, B: n x m) -> r x m accumulated
inline void matmul_tn_acc(const Mat& A, const Mat& B, Mat& C) {
  if (A.rows != B.rows) throw std::invalid_argument("matmul_tn_acc: inner dim");
  if (C.rows != A.cols || C.cols != B.cols)
    throw std::invalid_argument("matmul_tn_acc: output shape");
  for (std::size_t n = 0; n < A.rows; ++n) {
    const double* an = A.row(n);
    const double* bn = B.row(n);
    for (std::size_t i = 0; i < A.cols; ++i) {
      const double v = an[i];
      if (v == 0.0) continue;
      double* ci = C.row(i);
      for (std::size_t j = 0; j < B.cols; ++j) ci[j] += v * bn[j];
    }
  }
}

// Y = X * W^T + b   (X: n x in, W: out x in, b: out)
inline void linear_forward(const Mat& X, const Mat& W,
                           const std::vector<double>& b, Mat& Y) {
  matmul_nt(X, W, Y);
  for (std::size_t i = 0; i < Y.rows; ++i) {
    double* yi = Y.row(i);
    for (std::size_t j = 0; j < Y.cols; ++j) yi[j] += b[j];
  }
}

// Backward of linear_forward. dX += dY * W, dW += dY^T * X, db += colsum(dY).
// Any of the outputs may be null to skip that accumulation.
inline void linear_backward(const Mat& X, const Mat& W, const Mat& dY, Mat* dX,
                            Mat* dW, std::vector<double>* db) {
  if (dX) {
    if (dX->rows != X.rows || dX->cols != X.cols)
      throw std::invalid_argument("linear_backward: dX shape");
    for (std::size_t i = 0; i < dY.rows; ++i) {
      const double* di = dY.row(i);
      double* xi = dX->row(i);
      for (std::size_t o = 0; o < W.rows; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        const double* wo = W.row(o);
        for (std::size_t k = 0; k < W.cols; ++k) xi[k] += d * wo[k];
      }
    }
  }
  if (dW) matmul_tn_acc(dY, X, *dW);
  if (db) {
    for (std::size_t i = 0; i < dY.rows; ++i) {
      const double* di = dY.row(i);
      for (std::size_t j = 0; j < dY.cols; ++j) (*db)[j] += di[j];
    }
  }
}

}  // namespace slg
