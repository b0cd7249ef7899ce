#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tmrl/numkit.hpp"

namespace tmrl::tape {

// Reverse-mode autodiff over Matrix values. Every differentiable loss in the
// project is built from these primitives, so the analytic gradient of any
// composite expression is the chained product of small, individually tested
// local derivatives.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Matrix val;
  Matrix grad;  // allocated lazily, same shape as val
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grads
  bool needs_grad = false;

  void ensure_grad() {
    if (grad.rows != val.rows || grad.cols != val.cols)
      grad = Matrix(val.rows, val.cols);
  }
};

inline Var leaf(Matrix v, bool needs_grad = false) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->needs_grad = needs_grad;
  return n;
}

inline Var constant(Matrix v) { return leaf(std::move(v), false); }

inline Var scalar(double v) { return constant(Matrix(1, 1, v)); }

/// Cuts the graph: same value, no gradient flow.
inline Var detach(const Var& a) { return constant(a->val); }

namespace detail {

inline Var make(Matrix val, std::vector<Var> parents,
                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (const auto& p : parents)
    if (p->needs_grad) n->needs_grad = true;
  n->parents = std::move(parents);
  if (n->needs_grad) n->backprop = std::move(backprop);
  return n;
}

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw input_error(std::string(op) + ": shape mismatch");
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  Matrix out = a->val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
  return detail::make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        a->grad.data[i] += n.grad.data[i];
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        b->grad.data[i] += n.grad.data[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  Matrix out = a->val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->val.data[i];
  return detail::make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        a->grad.data[i] += n.grad.data[i];
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        b->grad.data[i] -= n.grad.data[i];
    }
  });
}

/// X + v with v a 1 x cols row vector broadcast over the rows of X.
inline Var add_rowvec(const Var& x, const Var& v) {
  if (v->val.rows != 1 || v->val.cols != x->val.cols)
    throw input_error("add_rowvec: v must be 1 x cols of x");
  Matrix out = x->val;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += v->val.at(0, j);
  return detail::make(std::move(out), {x, v}, [x, v](Node& n) {
    if (x->needs_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        x->grad.data[i] += n.grad.data[i];
    }
    if (v->needs_grad) {
      v->ensure_grad();
      for (std::size_t i = 0; i < n.val.rows; ++i)
        for (std::size_t j = 0; j < n.val.cols; ++j)
          v->grad.at(0, j) += n.grad.at(i, j);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {  // elementwise
  detail::check_same_shape(a, b, "mul");
  Matrix out = a->val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
  return detail::make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        a->grad.data[i] += n.grad.data[i] * b->val.data[i];
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        b->grad.data[i] += n.grad.data[i] * a->val.data[i];
    }
  });
}

inline Var div(const Var& a, const Var& b) {  // elementwise
  detail::check_same_shape(a, b, "div");
  Matrix out = a->val;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= b->val.data[i];
  return detail::make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        a->grad.data[i] += n.grad.data[i] / b->val.data[i];
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
        double bv = b->val.data[i];
        b->grad.data[i] -= n.grad.data[i] * a->val.data[i] / (bv * bv);
      }
    }
  });
}

inline Var scale(const Var& a, double c) {
  Matrix out = a->val;
  for (double& v : out.data) v *= c;
  return detail::make(std::move(out), {a}, [a, c](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      a->grad.data[i] += c * n.grad.data[i];
  });
}

inline Var matmul(const Var& a, const Var& b) {
  Matrix out = tmrl::matmul(a->val, b->val);
  return detail::make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      a->ensure_grad();
      // dA = dOut * B^T
      const Matrix& g = n.grad;
      const Matrix& bv = b->val;
      for (std::size_t i = 0; i < a->val.rows; ++i)
        for (std::size_t k = 0; k < a->val.cols; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < bv.cols; ++j)
            acc += g.at(i, j) * bv.at(k, j);
          a->grad.at(i, k) += acc;
        }
    }
    if (b->needs_grad) {
      b->ensure_grad();
      // dB = A^T * dOut
      const Matrix& g = n.grad;
      const Matrix& av = a->val;
      for (std::size_t k = 0; k < b->val.rows; ++k)
        for (std::size_t j = 0; j < b->val.cols; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < av.rows; ++i)
            acc += av.at(i, k) * g.at(i, j);
          b->grad.at(k, j) += acc;
        }
    }
  });
}

inline Var transpose(const Var& a) {
  return detail::make(tmrl::transpose(a->val), {a}, [a](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.val.rows; ++i)
      for (std::size_t j = 0; j < n.val.cols; ++j)
        a->grad.at(j, i) += n.grad.at(i, j);
  });
}

inline Var select_rows(const Var& a, std::vector<std::size_t> idx) {
  Matrix out(idx.size(), a->val.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a->val.rows) throw input_error("select_rows: index out of range");
    auto src = a->val.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make(std::move(out), {a}, [a, idx = std::move(idx)](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n.val.cols; ++j)
        a->grad.at(idx[i], j) += n.grad.at(i, j);
  });
}

inline Var mean_rows(const Var& a) {
  if (a->val.rows == 0) throw input_error("mean_rows: empty matrix");
  Matrix out(1, a->val.cols);
  for (std::size_t i = 0; i < a->val.rows; ++i)
    for (std::size_t j = 0; j < a->val.cols; ++j) out.at(0, j) += a->val.at(i, j);
  double inv = 1.0 / static_cast<double>(a->val.rows);
  for (double& v : out.data) v *= inv;
  return detail::make(std::move(out), {a}, [a, inv](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < a->val.rows; ++i)
      for (std::size_t j = 0; j < a->val.cols; ++j)
        a->grad.at(i, j) += inv * n.grad.at(0, j);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw input_error("concat_rows: empty part list");
  std::size_t cols = parts[0]->val.cols, rows = 0;
  for (const auto& p : parts) {
    if (p->val.cols != cols) throw input_error("concat_rows: column mismatch");
    rows += p->val.rows;
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p->val.data.begin(), p->val.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
    r += p->val.rows;
  }
  return detail::make(std::move(out), parts, [parts](Node& n) {
    std::size_t r = 0;
    for (const auto& p : parts) {
      if (p->needs_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->val.rows; ++i)
          for (std::size_t j = 0; j < p->val.cols; ++j)
            p->grad.at(i, j) += n.grad.at(r + i, j);
      }
      r += p->val.rows;
    }
  });
}

inline Var slice_cols(const Var& a, std::size_t m) {
  if (m < 1 || m > a->val.cols) throw input_error("slice_cols: m out of range");
  Matrix out(a->val.rows, m);
  for (std::size_t i = 0; i < a->val.rows; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = a->val.at(i, j);
  return detail::make(std::move(out), {a}, [a, m](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.val.rows; ++i)
      for (std::size_t j = 0; j < m; ++j) a->grad.at(i, j) += n.grad.at(i, j);
  });
}

inline Var act(const Var& a, Activation kind) {
  Matrix out = a->val;
  for (double& v : out.data) v = activate(kind, v);
  return detail::make(std::move(out), {a}, [a, kind](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      a->grad.data[i] += n.grad.data[i] * activate_grad(kind, a->val.data[i]);
  });
}

/// Row-wise layer norm: y = (x - mean) / sqrt(var + eps) * gain + bias,
/// var taken with 1/C normalization. gain/bias are 1 x C.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  std::size_t C = x->val.cols;
  if (gain->val.rows != 1 || gain->val.cols != C || bias->val.rows != 1 ||
      bias->val.cols != C)
    throw input_error("layer_norm: gain/bias must be 1 x cols");
  Matrix out(x->val.rows, C);
  Matrix norm(x->val.rows, C);   // pre-gain normalized values
  Vector inv_sigma(x->val.rows);
  for (std::size_t i = 0; i < x->val.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < C; ++j) mean += x->val.at(i, j);
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      double d = x->val.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < C; ++j) {
      double y = (x->val.at(i, j) - mean) * is;
      norm.at(i, j) = y;
      out.at(i, j) = y * gain->val.at(0, j) + bias->val.at(0, j);
    }
  }
  return detail::make(
      std::move(out), {x, gain, bias},
      [x, gain, bias, norm = std::move(norm),
       inv_sigma = std::move(inv_sigma)](Node& n) {
        std::size_t C = x->val.cols;
        for (std::size_t i = 0; i < x->val.rows; ++i) {
          if (x->needs_grad) {
            x->ensure_grad();
            // dx = is * (gh - mean(gh) - y * mean(gh * y)), gh = dout * gain
            double mean_gh = 0.0, mean_ghy = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
              double gh = n.grad.at(i, j) * gain->val.at(0, j);
              mean_gh += gh;
              mean_ghy += gh * norm.at(i, j);
            }
            mean_gh /= static_cast<double>(C);
            mean_ghy /= static_cast<double>(C);
            for (std::size_t j = 0; j < C; ++j) {
              double gh = n.grad.at(i, j) * gain->val.at(0, j);
              x->grad.at(i, j) +=
                  inv_sigma[i] * (gh - mean_gh - norm.at(i, j) * mean_ghy);
            }
          }
          if (gain->needs_grad) {
            gain->ensure_grad();
            for (std::size_t j = 0; j < C; ++j)
              gain->grad.at(0, j) += n.grad.at(i, j) * norm.at(i, j);
          }
          if (bias->needs_grad) {
            bias->ensure_grad();
            for (std::size_t j = 0; j < C; ++j)
              bias->grad.at(0, j) += n.grad.at(i, j);
          }
        }
      });
}

/// Sum of the elementwise product over all entries -> 1x1. For row vectors
/// this is the dot product.
inline Var dot(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a->val.data.size(); ++i)
    acc += a->val.data[i] * b->val.data[i];
  return detail::make(Matrix(1, 1, acc), {a, b}, [a, b](Node& n) {
    double g = n.grad.at(0, 0);
    if (a->needs_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->val.data.size(); ++i)
        a->grad.data[i] += g * b->val.data[i];
    }
    if (b->needs_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < b->val.data.size(); ++i)
        b->grad.data[i] += g * a->val.data[i];
    }
  });
}

inline Var sum_all(const Var& a) {
  double acc = 0.0;
  for (double v : a->val.data) acc += v;
  return detail::make(Matrix(1, 1, acc), {a}, [a](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    double g = n.grad.at(0, 0);
    for (double& v : a->grad.data) v += g;
  });
}

inline Var sqrt_(const Var& a) {
  Matrix out = a->val;
  for (double& v : out.data) v = std::sqrt(v);
  return detail::make(std::move(out), {a}, [a](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      a->grad.data[i] += n.grad.data[i] * 0.5 / n.val.data[i];
  });
}

inline Var abs_(const Var& a) {
  Matrix out = a->val;
  for (double& v : out.data) v = std::abs(v);
  return detail::make(std::move(out), {a}, [a](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
      double x = a->val.data[i];
      double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      a->grad.data[i] += n.grad.data[i] * s;
    }
  });
}

/// Stacks 1x1 scalars into a 1 x n row vector.
inline Var stack_scalars(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw input_error("stack_scalars: empty input");
  Matrix out(1, scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i]->val.rows != 1 || scalars[i]->val.cols != 1)
      throw input_error("stack_scalars: inputs must be 1x1");
    out.at(0, i) = scalars[i]->val.at(0, 0);
  }
  return detail::make(std::move(out), scalars, [scalars](Node& n) {
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      if (!scalars[i]->needs_grad) continue;
      scalars[i]->ensure_grad();
      scalars[i]->grad.at(0, 0) += n.grad.at(0, i);
    }
  });
}

/// log(sum(exp(x_j))) of a 1 x n row vector -> 1x1, max-shifted.
inline Var log_sum_exp_row(const Var& a) {
  if (a->val.rows != 1 || a->val.cols < 1)
    throw input_error("log_sum_exp_row: need a non-empty row vector");
  double value = tmrl::log_sum_exp(std::span<const double>(a->val.data));
  return detail::make(Matrix(1, 1, value), {a}, [a, value](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad();
    double g = n.grad.at(0, 0);
    for (std::size_t j = 0; j < a->val.cols; ++j)
      a->grad.at(0, j) += g * std::exp(a->val.at(0, j) - value);
  });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

inline void topo_collect(const Var& root, std::vector<Node*>& order,
                         std::unordered_set<Node*>& seen) {
  // Iterative DFS; graphs can be a few thousand nodes deep.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  if (seen.count(root.get())) return;
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

/// Backpropagates from a 1x1 root; accumulates gradients into every
/// reachable node with needs_grad set.
inline void backward(const Var& root) {
  if (root->val.rows != 1 || root->val.cols != 1)
    throw input_error("backward: root must be a 1x1 scalar");
  if (!root->needs_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  topo_collect(root, order, seen);
  root->ensure_grad();
  root->grad.at(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

}  // namespace tmrl::tape
