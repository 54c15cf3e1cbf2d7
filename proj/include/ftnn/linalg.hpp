#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ftnn/error.hpp"

namespace ftnn {

// y += W x  with W stored row-major as rows x cols.
inline void matvec_add(std::span<const double> w, std::size_t rows, std::size_t cols,
                       std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// grad_w += dy x^T and grad_x += W^T dy, the backward pair of matvec_add.
inline void matvec_backward(std::span<const double> w, std::size_t rows, std::size_t cols,
                            std::span<const double> x, std::span<const double> dy,
                            std::span<double> grad_w, std::span<double> grad_x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double d = dy[r];
    if (d == 0.0) continue;
    double* gw = grad_w.data() + r * cols;
    const double* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      gw[c] += d * x[c];
      grad_x[c] += d * wr[c];
    }
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double log_sum_exp(std::span<const double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double acc = 0.0;
  for (double v : logits) acc += std::exp(v - m);
  return m + std::log(acc);
}

// In-place softmax with max subtraction; every output is strictly positive.
inline void softmax_inplace(std::span<double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  require(sum > 0.0 && std::isfinite(sum), ErrorKind::Numeric, "softmax normalizer not positive");
  for (auto& x : v) x /= sum;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Index of the maximum element; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace ftnn
