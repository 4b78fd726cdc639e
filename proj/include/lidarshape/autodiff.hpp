#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tape records every operation applied to Var handles. Values live on the
// tape; backward() walks the record in reverse, calling each node's local
// gradient function exactly once. Only rank-1 and rank-2 tensors are used by
// the networks, and the only implicit broadcast is add_bias.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lidarshape::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size())
      throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : 1; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------- kernels

namespace kernel {

// c[m x n] += a[m x k] * b[k x n]. Tiled over k and n, four rows of a per
// pass. Each c entry still accumulates its products in ascending k order.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kTileK = 128;
  constexpr std::size_t kTileN = 256;
  for (std::size_t j0 = 0; j0 < n; j0 += kTileN) {
    const std::size_t j1 = std::min(n, j0 + kTileN);
    for (std::size_t p0 = 0; p0 < k; p0 += kTileK) {
      const std::size_t p1 = std::min(k, p0 + kTileK);
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        T* __restrict c0 = c + i * n;
        T* __restrict c1 = c0 + n;
        T* __restrict c2 = c1 + n;
        T* __restrict c3 = c2 + n;
        const T* a0 = a + i * k;
        for (std::size_t p = p0; p < p1; ++p) {
          const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
          if (v0 == T{0} && v1 == T{0} && v2 == T{0} && v3 == T{0}) continue;
          const T* __restrict br = b + p * n;
          for (std::size_t j = j0; j < j1; ++j) {
            const T bv = br[j];
            c0[j] += v0 * bv;
            c1[j] += v1 * bv;
            c2[j] += v2 * bv;
            c3[j] += v3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        T* __restrict cr = c + i * n;
        const T* ar = a + i * k;
        for (std::size_t p = p0; p < p1; ++p) {
          const T av = ar[p];
          if (av == T{0}) continue;
          const T* __restrict br = b + p * n;
          for (std::size_t j = j0; j < j1; ++j) cr[j] += av * br[j];
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  std::vector<T> t(rows * cols);
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile)
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t i1 = std::min(rows, i0 + kTile), j1 = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) t[j * rows + i] = a[i * cols + j];
    }
  return t;
}

// c[m x k] += a[m x n] * b[k x n]^T. Few rows of a: dot products against the
// rows of b; otherwise transpose b once.
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  if (m < 8) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T* ar = a + i * n;
        const T* br = b + p * n;
        T acc{0};
        for (std::size_t j = 0; j < n; ++j) acc += ar[j] * br[j];
        c[i * k + p] += acc;
      }
    return;
  }
  const auto bt = transpose(b, k, n);
  gemm_acc(a, bt.data(), c, m, n, k);
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto at = transpose(a, m, k);
  gemm_acc(at.data(), b, c, k, m, n);
}

}  // namespace kernel

// ---------------------------------------------------------------- tape

using NodeId = std::size_t;

template <typename T>
class Tape;

/// Lightweight handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradients of a scalar with respect to every leaf parameter on the tape.
template <typename T>
class Gradients {
 public:
  void set(NodeId id, Tensor<T> g) { grads_[id] = std::move(g); }
  bool contains(const Var<T>& v) const { return grads_.count(v.id()) != 0; }
  const Tensor<T>& at(const Var<T>& v) const {
    auto it = grads_.find(v.id());
    if (it == grads_.end()) throw std::out_of_range("no gradient for node " + std::to_string(v.id()));
    return it->second;
  }
  const Tensor<T>& at(NodeId id) const { return grads_.at(id); }
  /// Moves a gradient out; later lookups of `v` fail.
  Tensor<T> take(const Var<T>& v) {
    auto node = grads_.extract(v.id());
    if (node.empty()) throw std::out_of_range("no gradient for node " + std::to_string(v.id()));
    return std::move(node.mapped());
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor<T>> grads_;
};

template <typename T>
class Tape {
 public:
  /// Propagates the output gradient of node `self` into its parents.
  using BackwardFn = std::function<void(Tape&, NodeId self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, {}, false); }

  Var<T> parameter(Tensor<T> value) {
    return push("parameter", std::move(value), recording_, {}, true);
  }

  /// Records an op result. The backward function is kept only when
  /// recording is on and at least one parent requires a gradient.
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    if (recording_)
      for (const auto& p : parents) needs = needs || requires_grad(p.id());
    Var<T> out = push(op, std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, false);
    return out;
  }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of node `id`, allocated on first use. Returns an empty
  /// span for nodes that do not require a gradient.
  std::span<T> grad(NodeId id) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }

  Gradients<T> backward(const Var<T>& loss) {
    if (nodes_.empty()) throw std::logic_error("backward on empty tape");
    if (loss.value().size() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    for (auto& n : nodes_) n.grad.clear();
    Gradients<T> out;
    if (!requires_grad(loss.id())) return out;
    grad(loss.id())[0] = T{1};
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
    }
    for (NodeId id = 0; id <= loss.id(); ++id) {
      auto& n = nodes_[id];
      if (n.is_leaf && n.requires_grad) {
        if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
        out.set(id, Tensor<T>(n.value.shape(), std::move(n.grad)));
        n.grad.clear();
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  Var<T> push(const char* op, Tensor<T> value, bool requires_grad, BackwardFn fn, bool is_leaf) {
    if (!value.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(value), {}, std::move(fn), requires_grad, is_leaf});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool recording_ = true;
};

// ---------------------------------------------------------------- ops

namespace detail {

template <typename T>
void require_rank2(const Var<T>& a, const char* op) {
  if (a.value().rank() != 2)
    throw ShapeError(std::string(op) + " expects a matrix, got shape " + shape_string(a.shape()));
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  if (dst.empty()) return;
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <typename T>
std::span<const T> grad_of(Tape<T>& t, NodeId id) {
  return t.grad(id);
}

template <typename T>
Tensor<T> unary(const Var<T>& a, auto&& f) {
  Tensor<T> out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  if (b.value().rows() != k)
    throw ShapeError("matmul: shape mismatch " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out({m, n});
  kernel::gemm_acc(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, NodeId self) {
    const T* g = t.grad(self).data();
    if (auto ga = t.grad(ia); !ga.empty()) kernel::gemm_nt_acc(g, t.value(ib).data().data(), ga.data(), m, n, k);
    if (auto gb = t.grad(ib); !gb.empty())
      kernel::gemm_tn_acc(t.value(ia).data().data(), g, gb.data(), m, k, n);
  });
}

/// a[m x n] + bias, where bias has n entries ([n] or [1 x n]) and is added
/// to every row.
template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  detail::require_rank2(a, "add_bias");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (bias.value().size() != n || bias.value().rank() > 2 ||
      (bias.value().rank() == 2 && bias.value().rows() != 1))
    throw ShapeError("add_bias: shape mismatch " + shape_string(a.shape()) + " + " +
                     shape_string(bias.shape()));
  Tensor<T> out = a.value();
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const NodeId ia = a.id(), ib = bias.id();
  return a.tape().record("add_bias", std::move(out), {a, bias}, [ia, ib, m, n](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    detail::add_into<T>(t.grad(ia), g);
    if (auto gb = t.grad(ib); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    detail::add_into<T>(t.grad(ia), g);
    detail::add_into<T>(t.grad(ib), g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    detail::add_into<T>(t.grad(ia), g);
    if (auto gb = t.grad(ib); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    const auto av = t.value(ia).data();
    const auto bv = t.value(ib).data();
    if (auto ga = t.grad(ia); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (auto gb = t.grad(ib); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = detail::unary(a, [factor](T v) { return v * factor; });
  const NodeId ia = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ia, factor](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = detail::unary(a, [](T v) { return v > T{0} ? v : T{0}; });
  const NodeId ia = a.id();
  return a.tape().record("relu", std::move(out), {a}, [ia](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    const auto x = t.value(ia).data();
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T{0}) ga[i] += g[i];
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = detail::unary(a, [](T v) { return std::tanh(v); });
  const NodeId ia = a.id();
  return a.tape().record("tanh", std::move(out), {a}, [ia](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    const auto y = t.value(self).data();
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T{1} - y[i] * y[i]);
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = detail::unary(a, [](T v) { return std::exp(v); });
  const NodeId ia = a.id();
  return a.tape().record("exp", std::move(out), {a}, [ia](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    const auto y = t.value(self).data();
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

/// Sum of all entries, as a [1] tensor.
template <typename T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().data()) s += v;
  const NodeId ia = a.id();
  return a.tape().record("sum", Tensor<T>::scalar(s), {a}, [ia](Tape<T>& t, NodeId self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(ia)) v += g;
  });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  const std::size_t m = a.value().rows(), p = a.value().cols(), q = b.value().cols();
  if (b.value().rows() != m)
    throw ShapeError("concat_cols: shape mismatch " + shape_string(a.shape()) + " | " +
                     shape_string(b.shape()));
  Tensor<T> out({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().data().data() + i * p, p, out.data().data() + i * (p + q));
    std::copy_n(b.value().data().data() + i * q, q, out.data().data() + i * (p + q) + p);
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record("concat_cols", std::move(out), {a, b}, [ia, ib, m, p, q](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto gb = t.grad(ib);
    for (std::size_t i = 0; i < m; ++i) {
      if (!ga.empty())
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
      if (!gb.empty())
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

/// Column-wise max over rows: [m x n] -> [n]. The gradient of each column
/// goes to its argmax row; ties resolve to the lowest row index.
template <typename T>
Var<T> reduce_max_rows(const Var<T>& a) {
  detail::require_rank2(a, "reduce_max_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (m == 0) throw ShapeError("reduce_max_rows of a matrix with no rows");
  const auto x = a.value().data();
  Tensor<T> out({n});
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t j = 0; j < n; ++j) out[j] = x[j];
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (x[i * n + j] > out[j]) {
        out[j] = x[i * n + j];
        arg[j] = i;
      }
  const NodeId ia = a.id();
  return a.tape().record("reduce_max_rows", std::move(out), {a},
                         [ia, n, arg = std::move(arg)](Tape<T>& t, NodeId self) {
                           const auto g = t.grad(self);
                           auto ga = t.grad(ia);
                           for (std::size_t j = 0; j < n; ++j) ga[arg[j] * n + j] += g[j];
                         });
}

/// Stacks `count` copies of a row vector ([n] or [1 x n]) into [count x n].
template <typename T>
Var<T> broadcast_rows(const Var<T>& v, std::size_t count) {
  const std::size_t n = v.value().size();
  if (v.value().rank() == 2 && v.value().rows() != 1)
    throw ShapeError("broadcast_rows expects a row vector, got " + shape_string(v.shape()));
  Tensor<T> out({count, n});
  for (std::size_t i = 0; i < count; ++i) std::copy_n(v.value().data().data(), n, out.data().data() + i * n);
  const NodeId iv = v.id();
  return v.tape().record("broadcast_rows", std::move(out), {v}, [iv, count, n](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    auto gv = t.grad(iv);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
  });
}

/// Repeats every row `k` times consecutively: [m x n] -> [(m*k) x n].
template <typename T>
Var<T> repeat_rows(const Var<T>& a, std::size_t k) {
  detail::require_rank2(a, "repeat_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor<T> out({m * k, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = 0; r < k; ++r)
      std::copy_n(a.value().data().data() + i * n, n, out.data().data() + (i * k + r) * n);
  const NodeId ia = a.id();
  return a.tape().record("repeat_rows", std::move(out), {a}, [ia, m, n, k](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[(i * k + r) * n + j];
  });
}

/// Rows [begin, end) of a matrix.
template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  detail::require_rank2(a, "slice_rows");
  const std::size_t n = a.value().cols();
  if (begin > end || end > a.value().rows())
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_string(a.shape()));
  Tensor<T> out({end - begin, n},
                std::vector<T>(a.value().data().begin() + begin * n, a.value().data().begin() + end * n));
  const NodeId ia = a.id();
  return a.tape().record("slice_rows", std::move(out), {a}, [ia, begin, n](Tape<T>& t, NodeId self) {
    const auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_size(shape) != a.value().size())
    throw ShapeError("reshape: shape mismatch " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor<T> out(std::move(shape), a.value().storage());
  const NodeId ia = a.id();
  return a.tape().record("reshape", std::move(out), {a}, [ia](Tape<T>& t, NodeId self) {
    detail::add_into<T>(t.grad(ia), t.grad(self));
  });
}

}  // namespace lidarshape::ad
