#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tmrl/common.hpp"

namespace tmrl {

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit reals. Training and gradient checking
/// stay in 64-bit; 32-bit little-endian floats appear only at the
/// persistence boundary (checkpoints, embedding stores).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs) {
    Matrix m;
    m.rows = rs.size();
    m.cols = rs.size() ? rs.begin()->size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rs) {
      if (r.size() != m.cols) throw input_error("ragged row initializer");
      m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
  }

  static Matrix row_vector(const Vector& v) {
    Matrix m(1, v.size());
    m.data = v;
    return m;
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  Vector row_copy(std::size_t r) const {
    auto s = row(r);
    return Vector(s.begin(), s.end());
  }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw input_error("matmul shape mismatch: " + std::to_string(a.rows) + "x" +
                      std::to_string(a.cols) + " * " + std::to_string(b.rows) +
                      "x" + std::to_string(b.cols));
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* orow = out.data.data() + i * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Core numeric operations
// ---------------------------------------------------------------------------

/// Cosine similarity of the first m dimensions of x and y.
/// A zero-norm prefix indicates a pipeline bug (untrained or padded
/// embedding), so it raises instead of silently returning 0 or NaN.
inline double prefix_cosine(std::span<const double> x, std::span<const double> y,
                            std::size_t m) {
  if (m < 1) throw input_error("prefix_cosine: m must be >= 1");
  if (m > x.size() || m > y.size())
    throw input_error("prefix_cosine: m=" + std::to_string(m) +
                      " exceeds dim (" + std::to_string(x.size()) + ", " +
                      std::to_string(y.size()) + ")");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0)
    throw numeric_error("prefix_cosine: zero-norm prefix at m=" + std::to_string(m));
  return dot / (std::sqrt(nx) * std::sqrt(ny));
}

inline double prefix_cosine(const Vector& x, const Vector& y, std::size_t m) {
  return prefix_cosine(std::span<const double>(x), std::span<const double>(y), m);
}

/// log(sum(exp(s_i))) via max-shift; exact under translation of the input.
inline double log_sum_exp(std::span<const double> scores) {
  if (scores.empty()) throw input_error("log_sum_exp: empty input");
  double mx = scores[0];
  for (double s : scores) {
    if (!std::isfinite(s)) throw numeric_error("log_sum_exp: non-finite score");
    mx = std::max(mx, s);
  }
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s - mx);
  return mx + std::log(acc);
}

inline double log_sum_exp(const Vector& scores) {
  return log_sum_exp(std::span<const double>(scores));
}

/// X - (1/B) * ones * ones^T * X: subtracts the column means.
inline Matrix center_rows(const Matrix& x) {
  if (x.rows < 1) throw input_error("center_rows: need at least one row");
  Matrix out = x;
  for (std::size_t j = 0; j < x.cols; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) out.at(i, j) -= mean;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise activations (shared by the encoder and the autodiff tape)
// ---------------------------------------------------------------------------

enum class Activation { Identity, Tanh, Relu, Gelu };

inline double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::Identity: return x;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Gelu:
      return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
  }
  return x;
}

inline double activate_grad(Activation kind, double x) {
  switch (kind) {
    case Activation::Identity: return 1.0;
    case Activation::Tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Gelu: {
      double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
      double pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
      return phi + x * pdf;
    }
  }
  return 1.0;
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  throw config_error("unknown activation: " + s);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
  }
  return "identity";
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------------

constexpr double kFiniteDiffEps = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradAbsFloor = 1e-7;

/// Central differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps).
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                               const Vector& x, double eps = kFiniteDiffEps) {
  if (eps <= 0.0) throw input_error("finite_diff_grad: eps must be > 0");
  Vector g(x.size());
  Vector probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + eps;
    double fp = f(probe);
    probe[i] = orig - eps;
    double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw numeric_error("finite_diff_grad: non-finite f at coordinate " +
                          std::to_string(i));
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
  std::string worst_block;  // parameter block name for model-level checks

  std::string summary() const {
    return std::string(passed ? "PASS" : "FAIL") +
           " max_rel=" + std::to_string(max_rel_error) +
           " max_abs=" + std::to_string(max_abs_error) +
           " worst_index=" + std::to_string(worst_index) +
           (worst_block.empty() ? "" : " block=" + worst_block);
  }
};

/// Compares an analytic gradient against a reference (typically finite
/// differences). Relative error is used where the reference magnitude is
/// above kGradAbsFloor; below that an absolute comparison applies.
inline GradCheckReport compare_gradients(std::span<const double> analytic,
                                         std::span<const double> reference,
                                         double rel_tol = kGradRelTol,
                                         double abs_floor = kGradAbsFloor) {
  if (analytic.size() != reference.size())
    throw input_error("compare_gradients: size mismatch");
  GradCheckReport rep;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double a = analytic[i], r = reference[i];
    double abs_err = std::abs(a - r);
    double denom = std::max(std::abs(a), std::abs(r));
    bool ok;
    double rel = 0.0;
    if (denom < abs_floor) {
      ok = abs_err <= abs_floor;
    } else {
      rel = abs_err / denom;
      ok = rel <= rel_tol;
    }
    if (rel > rep.max_rel_error || (!ok && rep.passed)) {
      rep.worst_index = i;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (!ok) rep.passed = false;
  }
  return rep;
}

}  // namespace tmrl
