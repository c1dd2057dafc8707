// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major tensors with a small reverse-mode autodiff tape.
//
// Every op records its output as a node holding shared pointers to its inputs.
// backward() gathers the nodes reachable from a scalar root and replays their
// backward closures in decreasing creation order, which is the reverse of the
// recorded execution order. Each element's accumulation runs sequentially, so
// identical inputs give bit-identical gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "basedlab/errors.hpp"

namespace basedlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {
inline thread_local bool grad_mode = true;
inline thread_local std::uint64_t node_counter = 0;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t id = detail::node_counter++;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T = double>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    validate_shape(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node<T>>()) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = T(1);
    return t;
  }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape.front(); }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const T> data() const { return node_->data; }
  // Writable view. Only meaningful on leaves (parameters, inputs); mutating an
  // interior node invalidates gradients that depend on it.
  std::span<T> mutable_data() { return node_->data; }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  Tensor grad_tensor() const {
    if (!has_grad()) return Tensor(shape());
    return Tensor(shape(), node_->grad);
  }
  void zero_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  // Leaf copy with the same values and no history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  void backward() const {
    if (size() != 1) {
      throw ContractError("backward() requires a scalar output, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
      }
    }
    std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });
    node_->grad_buffer()[0] += T(1);
    for (Node<T>* n : order) {
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }

  NodePtr node_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Wraps a freshly computed buffer as an op output and, when any input needs
// gradients, attaches `backward` (called as backward(out_node)).
template <typename T, typename Backward>
Tensor<T> record(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs, const char* op,
                 Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    for (auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::forward<Backward>(backward);
  }
  return out;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_sequences(std::size_t rows, std::size_t seq_len, const char* op) {
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) +
                         " rows are not a whole number of sequences of length " + std::to_string(seq_len));
  }
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, DF df) {
  std::vector<T> y(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  return record<T>(x.shape(), std::move(y), {x}, op, [df](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * df(in.data[i], out.data[i]);
  });
}

// y = x W for one row x (no graph); used by the token-at-a-time decoders.
template <typename T>
std::vector<T> vecmat(std::span<const T> x, const Tensor<T>& w) {
  if (w.rank() != 2 || w.dim(0) != x.size()) {
    throw DimensionError("vecmat: row of length " + std::to_string(x.size()) + " vs matrix " + shape_str(w.shape()));
  }
  const std::size_t n = w.dim(1);
  std::vector<T> y(n, T(0));
  auto wd = w.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T xi = x[i];
    const T* wr = wd.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xi * wr[j];
  }
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> c(m * n);
  detail::MatMap<T>(c.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.data().data(), m, k) * detail::ConstMatMap<T>(b.data().data(), k, n);
  return detail::record<T>({m, n}, std::move(c), {a, b}, "matmul", [m, k, n](Node<T>& out) {
    auto& na = *out.parents[0];
    auto& nb = *out.parents[1];
    detail::ConstMatMap<T> g(out.grad.data(), m, n);
    if (na.requires_grad) {
      detail::MatMap<T>(na.grad_buffer().data(), m, k).noalias() +=
          g * detail::ConstMatMap<T>(nb.data.data(), k, n).transpose();
    }
    if (nb.requires_grad) {
      detail::MatMap<T>(nb.grad_buffer().data(), k, n).noalias() +=
          detail::ConstMatMap<T>(na.data.data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> y(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return detail::record<T>({n, m}, std::move(y), {a}, "transpose", [m, n](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += out.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> y(a.data().begin(), a.data().end());
  return detail::record<T>(std::move(shape), std::move(y), {a}, "reshape", [](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return detail::record<T>(a.shape(), std::move(y), {a, b}, "add", [](Node<T>& out) {
    for (auto& p : out.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return detail::record<T>(a.shape(), std::move(y), {a, b}, "sub", [](Node<T>& out) {
    if (out.parents[0]->requires_grad) {
      auto& g = out.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (out.parents[1]->requires_grad) {
      auto& g = out.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return detail::record<T>(a.shape(), std::move(y), {a, b}, "mul", [](Node<T>& out) {
    auto& na = *out.parents[0];
    auto& nb = *out.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * na.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>(a, "scale", [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary<T>(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

// Row-wise bias: a[m x n] + b[n]. The only broadcast the library performs.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_rank2(a, "add_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
  }
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = a[i * n + j] + bias[j];
  return detail::record<T>(a.shape(), std::move(y), {a, bias}, "add_bias", [m, n](Node<T>& out) {
    auto& na = *out.parents[0];
    auto& nb = *out.parents[1];
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += out.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary<T>(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary<T>(
      a, "silu", [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

// elu(x) + 1: x + 1 for x > 0, exp(x) otherwise.
template <typename T>
Tensor<T> elu_plus_one(const Tensor<T>& a) {
  return detail::unary<T>(
      a, "elu_plus_one", [](T x) { return x > T(0) ? x + T(1) : std::exp(x); },
      [](T x, T y) { return x > T(0) ? T(1) : y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  return detail::record<T>({1}, {s}, {a}, "sum", [](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (auto& gi : g) gi += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// Softmax along the last axis with max subtraction.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.size() / n;
  std::vector<T> y(x.size());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xs.data() + r * n;
    T* out = y.data() + r * n;
    T mx = *std::max_element(in, in + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
  }
  return detail::record<T>(x.shape(), std::move(y), {x}, "softmax", [rows, n](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = out.data.data() + r * n;
      const T* go = out.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += p[j] * go[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += p[j] * (go[j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Sequence and indexing ops. Batched sequences are stacked along rows: a
// [(B*N) x d] matrix holds B sequences of length `seq_len`.

// out[i,c] = sum_{f < F, f <= i} filter[f,c] * u[i-f,c], per sequence, zero left padding.
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& u, const Tensor<T>& filter, std::size_t seq_len = 0) {
  detail::require_rank2(u, "causal_conv1d");
  detail::require_rank2(filter, "causal_conv1d");
  const std::size_t rows = u.dim(0), d = u.dim(1), taps = filter.dim(0);
  if (seq_len == 0) seq_len = rows;
  if (filter.dim(1) != d) {
    throw DimensionError("causal_conv1d: filter " + shape_str(filter.shape()) + " does not match channels of " +
                         shape_str(u.shape()));
  }
  detail::require_sequences<T>(rows, seq_len, "causal_conv1d");
  if (taps > seq_len) {
    throw ParameterError("causal_conv1d: filter length " + std::to_string(taps) + " exceeds sequence length " +
                         std::to_string(seq_len));
  }
  std::vector<T> y(rows * d, T(0));
  auto us = u.data();
  auto fs = filter.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = r % seq_len;
    T* out = y.data() + r * d;
    for (std::size_t f = 0; f < taps && f <= i; ++f) {
      const T* in = us.data() + (r - f) * d;
      const T* w = fs.data() + f * d;
      for (std::size_t c = 0; c < d; ++c) out[c] += w[c] * in[c];
    }
  }
  return detail::record<T>(u.shape(), std::move(y), {u, filter}, "causal_conv1d",
                           [rows, d, taps, seq_len](Node<T>& out) {
                             auto& nu = *out.parents[0];
                             auto& nf = *out.parents[1];
                             for (std::size_t r = 0; r < rows; ++r) {
                               const std::size_t i = r % seq_len;
                               const T* g = out.grad.data() + r * d;
                               for (std::size_t f = 0; f < taps && f <= i; ++f) {
                                 if (nu.requires_grad) {
                                   T* gu = nu.grad_buffer().data() + (r - f) * d;
                                   const T* w = nf.data.data() + f * d;
                                   for (std::size_t c = 0; c < d; ++c) gu[c] += w[c] * g[c];
                                 }
                                 if (nf.requires_grad) {
                                   T* gf = nf.grad_buffer().data() + f * d;
                                   const T* in = nu.data.data() + (r - f) * d;
                                   for (std::size_t c = 0; c < d; ++c) gf[c] += in[c] * g[c];
                                 }
                               }
                             }
                           });
}

// Gathers rows of `table` (c x d) for each token id.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> tokens) {
  detail::require_rank2(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> y(tokens.size() * d);
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (tokens[r] < 0 || static_cast<std::size_t>(tokens[r]) >= vocab) {
      throw InputError("token id " + std::to_string(tokens[r]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(table.data().data() + tokens[r] * d, d, y.data() + r * d);
  }
  std::vector<int> ids(tokens.begin(), tokens.end());
  return detail::record<T>({tokens.size(), d}, std::move(y), {table}, "embedding",
                           [ids = std::move(ids), d](Node<T>& out) {
                             auto& nt = *out.parents[0];
                             if (!nt.requires_grad) return;
                             auto& g = nt.grad_buffer();
                             for (std::size_t r = 0; r < ids.size(); ++r)
                               for (std::size_t c = 0; c < d; ++c) g[ids[r] * d + c] += out.grad[r * d + c];
                           });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t width) {
  detail::require_rank2(a, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (width == 0 || start + width > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") outside " + shape_str(a.shape()));
  }
  std::vector<T> y(m * width);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().data() + i * n + start, width, y.data() + i * width);
  return detail::record<T>({m, width}, std::move(y), {a}, "slice_cols", [m, n, start, width](Node<T>& out) {
    auto& in = *out.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < width; ++j) g[i * n + start + j] += out.grad[i * width + j];
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<T> y(m * n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k], y.data() + i * n + off);
    off += widths[k];
  }
  return detail::record<T>({m, n}, std::move(y), parts, "concat_cols", [m, n, widths](Node<T>& out) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& in = *out.parents[k];
      if (in.requires_grad) {
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += out.grad[i * n + off + j];
      }
      off += widths[k];
    }
  });
}

// y = x / sqrt(mean(x^2) + eps) * weight, per row.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps = T(1e-6)) {
  detail::require_rank2(x, "rms_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (weight.size() != n) throw DimensionError("rms_norm: weight does not match feature width");
  std::vector<T> y(x.size());
  std::vector<T> inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    T ms = 0;
    for (std::size_t j = 0; j < n; ++j) ms += x[i * n + j] * x[i * n + j];
    inv[i] = T(1) / std::sqrt(ms / static_cast<T>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] * inv[i] * weight[j];
  }
  return detail::record<T>(x.shape(), std::move(y), {x, weight}, "rms_norm",
                           [m, n, inv = std::move(inv)](Node<T>& out) {
                             auto& nx = *out.parents[0];
                             auto& nw = *out.parents[1];
                             for (std::size_t i = 0; i < m; ++i) {
                               const T* xi = nx.data.data() + i * n;
                               const T* g = out.grad.data() + i * n;
                               if (nx.requires_grad) {
                                 T dot = 0;
                                 for (std::size_t j = 0; j < n; ++j) dot += g[j] * nw.data[j] * xi[j];
                                 const T r = inv[i];
                                 const T c = r * r * r * dot / static_cast<T>(n);
                                 T* gx = nx.grad_buffer().data() + i * n;
                                 for (std::size_t j = 0; j < n; ++j) gx[j] += r * g[j] * nw.data[j] - c * xi[j];
                               }
                               if (nw.requires_grad) {
                                 auto& gw = nw.grad_buffer();
                                 for (std::size_t j = 0; j < n; ++j) gw[j] += g[j] * xi[j] * inv[i];
                               }
                             }
                           });
}

// Mean token cross-entropy over rows where mask != 0. Returns a scalar; zero if
// the mask selects nothing.
template <typename T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                               std::span<const std::uint8_t> mask) {
  detail::require_rank2(logits, "masked_cross_entropy");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  if (targets.size() != m || mask.size() != m) {
    throw DimensionError("masked_cross_entropy: targets/mask length must equal logit rows");
  }
  std::size_t count = 0;
  for (auto b : mask) count += b ? 1 : 0;
  std::vector<T> probs(m * c, T(0));
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw InputError("target " + std::to_string(targets[i]) + " outside " + std::to_string(c) + " classes");
    }
    const T* row = logits.data().data() + i * c;
    T mx = *std::max_element(row, row + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += std::log(z) + mx - row[targets[i]];
  }
  const T denom = count ? static_cast<T>(count) : T(1);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  return detail::record<T>({1}, {loss / denom}, {logits}, "masked_cross_entropy",
                           [m, c, denom, probs = std::move(probs), tg = std::move(tg),
                            mk = std::move(mk)](Node<T>& out) {
                             auto& nl = *out.parents[0];
                             if (!nl.requires_grad) return;
                             auto& g = nl.grad_buffer();
                             const T s = out.grad[0] / denom;
                             for (std::size_t i = 0; i < m; ++i) {
                               if (!mk[i]) continue;
                               for (std::size_t j = 0; j < c; ++j) g[i * c + j] += s * probs[i * c + j];
                               g[i * c + tg[i]] -= s;
                             }
                           });
}

// ---------------------------------------------------------------------------
// Gradient checking

// Central-difference check of reverse-mode gradients of a scalar function with
// respect to every entry of `params`. `f` must rebuild its graph from the
// current parameter values on every call. Returns the largest componentwise
// relative error |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                         double h = 1e-5, double floor = 1e-3) {
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  Tensor<double> y = f();
  if (y.size() != 1) throw ContractError("grad_check: function output must be scalar, got " + shape_str(y.shape()));
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.size(), 0.0));
  }
  double worst = 0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f().item();
      data[i] = saved - h;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                         double h = 1e-5, double floor = 1e-3) {
  return grad_check([&] { return f(x); }, {x}, h, floor);
}

}  // namespace basedlab
