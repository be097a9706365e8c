// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small dense-math kernels shared by the neural models. Parameters live in
// one flat vector per model; layers are views (offset, rows, cols) into it.

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "slu/rng.hpp"

namespace slu::nn {

/// Row-major matrix view into a flat parameter vector.
struct Block {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::size_t size() const { return rows * cols; }
  bool operator==(const Block&) const = default;
};

/// Hands out consecutive blocks of a flat parameter vector.
class Layout {
 public:
  Block add(std::size_t rows, std::size_t cols = 1) {
    Block b{size_, rows, cols};
    size_ += rows * cols;
    return b;
  }
  std::size_t size() const { return size_; }

 private:
  std::size_t size_ = 0;
};

inline const double* at(const std::vector<double>& p, const Block& b) { return p.data() + b.offset; }
inline double* at(std::vector<double>& p, const Block& b) { return p.data() + b.offset; }

/// Four interleaved partial sums combined in a fixed order, so the result
/// is reproducible while the loop still vectorizes.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

/// y (+)= W x for W rows x cols.
inline void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y,
                 bool accumulate = false) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = (accumulate ? y[r] : 0.0) + dot(w + r * cols, x, cols);
}

/// dx += W^T dy.
inline void gemv_t(const double* w, std::size_t rows, std::size_t cols, const double* dy, double* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w + r * cols;
    const double g = dy[r];
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * g;
  }
}

/// dW += dy x^T.
inline void outer(double* dw, std::size_t rows, std::size_t cols, const double* dy, const double* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* row = dw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// In-place softmax; returns log of the normalizer.
inline double softmax(double* v, std::size_t n) {
  double mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    s += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= s;
  return mx + std::log(s);
}

inline double log_sum_exp(const double* v, std::size_t n) {
  double mx = v[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

/// Uniform Glorot initialization of a weight block.
inline void glorot(std::vector<double>& p, const Block& b, Rng& rng, double gain = 1.0) {
  const double r = gain * std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
  double* w = at(p, b);
  for (std::size_t i = 0; i < b.size(); ++i) w[i] = rng.uniform(-r, r);
}

inline void add_scaled(std::vector<double>& dst, const std::vector<double>& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(const std::vector<double>& v);

// Whitespace-token model files. Values are written round-trippably.
void write_values(std::ostream& out, const std::vector<double>& values);
std::vector<double> read_values(std::istream& in, std::size_t n);
/// Reads the next token and throws FormatError unless it equals `expected`.
void expect_token(std::istream& in, const std::string& expected);
std::string read_token(std::istream& in);
std::size_t read_size(std::istream& in);

/// Relative error used by the gradient checks:
/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central finite differences of `loss` with respect to every parameter.
template <typename Loss>
std::vector<double> numeric_gradient(std::vector<double> params, Loss&& loss, double h = 1e-4) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss(params);
    params[i] = keep - h;
    const double down = loss(params);
    params[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Adam optimizer state over a flat parameter vector.
class Adam {
 public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<double>& params, const std::vector<double>& grad, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace slu::nn
