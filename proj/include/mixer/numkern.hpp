#pragma once

// Dense numeric primitives the rest of the toolkit is built on: vectors,
// row-major matrices, elementwise nonlinearities, and the SGD update with
// global gradient-norm rescaling. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixer {

using Vec = std::vector<double>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (abort-with-diagnostic).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;  // row-major

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  std::size_t size() const { return a.size(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }

  const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
  double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(m.a); }

// y[i] = sum_j m(i,j) x[j] (+ b[i])
inline Vec affine(const Mat& m, const Vec& x, const Vec* b = nullptr) {
  if (m.cols != static_cast<int>(x.size()))
    throw ShapeError("affine: " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                     " vs input length " + std::to_string(x.size()));
  if (b && static_cast<int>(b->size()) != m.rows)
    throw ShapeError("affine: bias length mismatch");
  Vec y(static_cast<std::size_t>(m.rows), 0.0);
  for (int i = 0; i < m.rows; ++i) {
    const double* mi = m.row(i);
    double acc = b ? (*b)[static_cast<std::size_t>(i)] : 0.0;
    for (int j = 0; j < m.cols; ++j) acc += mi[j] * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

// y += m x
inline void affine_acc(const Mat& m, const Vec& x, Vec& y) {
  if (m.cols != static_cast<int>(x.size()) || m.rows != static_cast<int>(y.size()))
    throw ShapeError("affine_acc: shape mismatch");
  for (int i = 0; i < m.rows; ++i) {
    const double* mi = m.row(i);
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) acc += mi[j] * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] += acc;
  }
}

// y = m^T x  (used by backward passes)
inline Vec mat_tvec(const Mat& m, const Vec& x) {
  if (m.rows != static_cast<int>(x.size())) throw ShapeError("mat_tvec: shape mismatch");
  Vec y(static_cast<std::size_t>(m.cols), 0.0);
  for (int i = 0; i < m.rows; ++i) {
    const double* mi = m.row(i);
    const double xi = x[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.cols; ++j) y[static_cast<std::size_t>(j)] += mi[j] * xi;
  }
  return y;
}

inline void mat_tvec_acc(const Mat& m, const Vec& x, Vec& y) {
  if (m.rows != static_cast<int>(x.size()) || m.cols != static_cast<int>(y.size()))
    throw ShapeError("mat_tvec_acc: shape mismatch");
  for (int i = 0; i < m.rows; ++i) {
    const double* mi = m.row(i);
    const double xi = x[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.cols; ++j) y[static_cast<std::size_t>(j)] += mi[j] * xi;
  }
}

// m += u v^T
inline void add_outer(Mat& m, const Vec& u, const Vec& v) {
  if (m.rows != static_cast<int>(u.size()) || m.cols != static_cast<int>(v.size()))
    throw ShapeError("add_outer: shape mismatch");
  for (int i = 0; i < m.rows; ++i) {
    double* mi = m.row(i);
    const double ui = u[static_cast<std::size_t>(i)];
    for (int j = 0; j < m.cols; ++j) mi[j] += ui * v[static_cast<std::size_t>(j)];
  }
}

inline double dot(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

inline void axpy(double a, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// Max-subtracted softmax; entries positive, sum 1.
inline Vec softmax(const Vec& x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  Vec p(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp(x[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

// log sum_i exp(x_i), same max-subtraction (for exact-ish log-probabilities)
inline double log_sum_exp(const Vec& x) {
  if (x.empty()) throw ShapeError("log_sum_exp: empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  return mx + std::log(z);
}

inline Vec sigmoid_vec(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return y;
}

inline Vec tanh_vec(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

// Backprop through softmax p = softmax(o): given dL/dp, returns dL/do.
inline Vec softmax_backward(const Vec& p, const Vec& dp) {
  if (p.size() != dp.size()) throw ShapeError("softmax_backward: length mismatch");
  const double pdp = dot(p, dp);
  Vec dlogits(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] = p[i] * (dp[i] - pdp);
  return dlogits;
}

inline double global_norm(const std::vector<const Mat*>& grads) {
  double sq = 0.0;
  for (const Mat* g : grads)
    for (double v : g->a) sq += v * v;
  return std::sqrt(sq);
}

// SGD update p <- p - lr * g over a flat list of tensors. If the global L2
// norm of all gradients exceeds max_norm, every gradient is scaled by
// max_norm / norm first. Non-finite gradients abort with a diagnostic.
inline void sgd_step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads,
                     double lr, double max_norm,
                     const std::vector<std::string>* names = nullptr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: tensor count mismatch");
  for (std::size_t t = 0; t < grads.size(); ++t) {
    if (params[t]->rows != grads[t]->rows || params[t]->cols != grads[t]->cols)
      throw ShapeError("sgd_step: gradient shape mismatch at tensor " + std::to_string(t));
    if (!all_finite(*grads[t])) {
      const std::string name = names ? (*names)[t] : std::to_string(t);
      throw NumericError("sgd_step: non-finite gradient in tensor " + name);
    }
  }
  const double norm = global_norm(grads);
  const double scale = (norm > max_norm) ? max_norm / norm : 1.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat& p = *params[t];
    const Mat& g = *grads[t];
    for (std::size_t i = 0; i < p.a.size(); ++i) p.a[i] -= lr * scale * g.a[i];
  }
}

}  // namespace mixer
