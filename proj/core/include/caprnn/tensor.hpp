#pragma once

// Reverse-mode autodiff on small dense tensors.
//
// TensorT<T> is a cheap handle onto shared storage: a shape, a row-major
// value buffer and a lazily allocated gradient buffer of the same length.
// Values are written once when the tensor is created (or, for parameters,
// between optimizer steps); gradients accumulate additively and are zeroed
// explicitly by the caller.
//
// Every operation takes an optional TapeT<T>*. With a tape the op records a
// closure that propagates output gradients back to its inputs; with nullptr
// it is a plain forward computation, which is what evaluation-mode code
// (decoding, scoring, probing) uses. The same forward kernels run in both
// cases, so evaluation results are bit-identical to the forward half of a
// recorded pass.
//
// T is float in production and double wherever gradients are verified
// against finite differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "caprnn/error.hpp"

namespace caprnn {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline std::size_t shape_len(const Shape& s) {
  std::size_t n = 1;
  for (const std::size_t d : s) n *= d;
  return n;
}

}  // namespace detail

template <class T>
class TensorT {
 public:
  /// Default tensor: scalar zero (shape {1}).
  TensorT() : TensorT(Shape{1}) {}

  explicit TensorT(Shape shape) : s_(std::make_shared<Storage>()) {
    if (shape.empty())
      throw DimensionError("tensor shape must have at least one dimension");
    if (shape.size() > 2)
      throw DimensionError("tensors are rank-1 or rank-2, got rank " +
                           std::to_string(shape.size()));
    s_->shape = std::move(shape);
    s_->data.assign(detail::shape_len(s_->shape), T{0});
  }

  TensorT(Shape shape, std::vector<T> values) : TensorT(std::move(shape)) {
    if (values.size() != s_->data.size())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + detail::shape_str(s_->shape));
    s_->data = std::move(values);
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

  static TensorT full(Shape shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
  }

  static TensorT scalar(T value) { return TensorT(Shape{1}, {value}); }

  /// Rank-1 tensor from explicit values.
  static TensorT row(std::vector<T> values) {
    Shape shape{values.size()};
    return TensorT(std::move(shape), std::move(values));
  }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->data.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }

  std::span<const T> values() const { return s_->data; }
  std::span<T> values_mut() { return s_->data; }

  T value(std::size_t i) const { return s_->data.at(i); }
  T value(std::size_t i, std::size_t j) const {
    return s_->data.at(i * s_->shape.at(1) + j);
  }

  bool has_grad() const { return !s_->grad.empty(); }

  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<T> grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T{0});
    return s_->grad;
  }

  std::span<const T> grad_view() const {
    if (s_->grad.empty())
      throw StateError("gradient buffer was never allocated for this tensor");
    return s_->grad;
  }

  void zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), T{0}); }

  bool same_storage(const TensorT& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until requested
  };
  std::shared_ptr<Storage> s_;
};

/// Records the backward closures of a forward pass. backward() replays them
/// once, last-recorded first; running it twice without reset() is an error.
template <class T>
class TapeT {
 public:
  void record(std::function<void()> backprop) {
    if (ran_backward_)
      throw StateError("tape already backpropagated; call reset() before recording");
    nodes_.push_back(std::move(backprop));
  }

  bool recording_allowed() const { return !ran_backward_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds root's gradient with 1 and propagates to every recorded input.
  /// Gradients add into whatever the buffers already hold.
  void backward(TensorT<T> root) {
    if (ran_backward_)
      throw StateError("backward already ran on this tape; call reset() first");
    if (root.size() != 1)
      throw DimensionError("backward root must be scalar, got shape " +
                           detail::shape_str(root.shape()));
    ran_backward_ = true;
    root.grad()[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    ran_backward_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool ran_backward_ = false;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch between " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

}  // namespace detail

template <class T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape("add", a, b);
  TensorT<T> out(a.shape());
  auto o = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  if (tape) {
    tape->record([a = a, b = b, out = out]() mutable {
      const auto go = out.grad_view();
      auto ga = a.grad(), gb = b.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> subtract(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape("subtract", a, b);
  TensorT<T> out(a.shape());
  auto o = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  if (tape) {
    tape->record([a = a, b = b, out = out]() mutable {
      const auto go = out.grad_view();
      auto ga = a.grad(), gb = b.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i];
        gb[i] -= go[i];
      }
    });
  }
  return out;
}

/// Elementwise (Hadamard) product.
template <class T>
TensorT<T> multiply(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape("multiply", a, b);
  TensorT<T> out(a.shape());
  auto o = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  if (tape) {
    tape->record([a = a, b = b, out = out]() mutable {
      const auto go = out.grad_view();
      const auto av = a.values(), bv = b.values();
      auto ga = a.grad(), gb = b.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        ga[i] += go[i] * bv[i];
        gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> sigmoid(TapeT<T>* tape, const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  auto o = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = T{1} / (T{1} + std::exp(-xv[i]));
  if (tape) {
    tape->record([x = x, out = out]() mutable {
      const auto go = out.grad_view();
      const auto ov = out.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * ov[i] * (T{1} - ov[i]);
    });
  }
  return out;
}

template <class T>
TensorT<T> tanh_op(TapeT<T>* tape, const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  auto o = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(xv[i]);
  if (tape) {
    tape->record([x = x, out = out]() mutable {
      const auto go = out.grad_view();
      const auto ov = out.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * (T{1} - ov[i] * ov[i]);
    });
  }
  return out;
}

template <class T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  auto o = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] > T{0} ? xv[i] : T{0};
  if (tape) {
    tape->record([x = x, out = out]() mutable {
      const auto go = out.grad_view();
      const auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xv[i] > T{0}) gx[i] += go[i];
    });
  }
  return out;
}

/// Natural log. Follows IEEE semantics for non-positive input (-inf / NaN).
template <class T>
TensorT<T> log_op(TapeT<T>* tape, const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  auto o = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(xv[i]);
  if (tape) {
    tape->record([x = x, out = out]() mutable {
      const auto go = out.grad_view();
      const auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / xv[i];
    });
  }
  return out;
}

/// Multiplication by a compile-time-known constant.
template <class T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, T factor) {
  TensorT<T> out(x.shape());
  auto o = out.values_mut();
  const auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  if (tape) {
    tape->record([x = x, out = out, factor]() mutable {
      const auto go = out.grad_view();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix / vector operations
// ---------------------------------------------------------------------------

/// Matrix product. a is rank-1 (row vector) or rank-2; b is rank-2. The
/// output rank matches a's rank; vectors are treated as 1 x k rows.
template <class T>
TensorT<T> matmul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  if (b.rank() != 2)
    throw DimensionError("matmul: right operand must be rank-2, got " +
                         detail::shape_str(b.shape()));
  const std::size_t m = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t k = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const std::size_t n = b.dim(1);
  if (k != b.dim(0))
    throw DimensionError("matmul: inner dimensions differ between " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  TensorT<T> out(a.rank() == 2 ? Shape{m, n} : Shape{n});
  auto o = out.values_mut();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = av[i * k + kk];
      const std::size_t brow = kk * n, orow = i * n;
      for (std::size_t j = 0; j < n; ++j) o[orow + j] += aik * bv[brow + j];
    }
  if (tape) {
    tape->record([a = a, b = b, out = out, m, k, n]() mutable {
      const auto go = out.grad_view();
      const auto av = a.values(), bv = b.values();
      auto ga = a.grad(), gb = b.grad();
      // dL/dA = dL/dO . B^T ; dL/dB = A^T . dL/dO
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          T acc{0};
          const std::size_t brow = kk * n, orow = i * n;
          for (std::size_t j = 0; j < n; ++j) acc += go[orow + j] * bv[brow + j];
          ga[i * k + kk] += acc;
        }
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t i = 0; i < m; ++i) {
          const T aik = av[i * k + kk];
          const std::size_t brow = kk * n, orow = i * n;
          for (std::size_t j = 0; j < n; ++j) gb[brow + j] += aik * go[orow + j];
        }
    });
  }
  return out;
}

/// Concatenation of two rank-1 tensors. Either side may be empty (length 0).
template <class T>
TensorT<T> concat(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 1 || b.rank() != 1)
    throw DimensionError("concat: both operands must be rank-1, got " +
                         detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  TensorT<T> out(Shape{a.size() + b.size()});
  auto o = out.values_mut();
  const auto av = a.values(), bv = b.values();
  std::copy(av.begin(), av.end(), o.begin());
  std::copy(bv.begin(), bv.end(), o.begin() + static_cast<std::ptrdiff_t>(av.size()));
  if (tape) {
    tape->record([a = a, b = b, out = out]() mutable {
      const auto go = out.grad_view();
      auto ga = a.grad(), gb = b.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[ga.size() + i];
    });
  }
  return out;
}

/// Softmax over a rank-1 tensor, with max subtraction for stability.
template <class T>
TensorT<T> softmax(TapeT<T>* tape, const TensorT<T>& z) {
  if (z.rank() != 1)
    throw DimensionError("softmax: input must be rank-1, got " +
                         detail::shape_str(z.shape()));
  if (z.size() == 0) throw DimensionError("softmax: input must be non-empty");
  const auto zv = z.values();
  T zmax = zv[0];
  for (const T v : zv) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    zmax = std::max(zmax, v);
  }
  TensorT<T> out(z.shape());
  auto o = out.values_mut();
  T total{0};
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = std::exp(zv[i] - zmax);
    total += o[i];
  }
  for (auto& v : o) v /= total;
  if (tape) {
    tape->record([z = z, out = out]() mutable {
      const auto go = out.grad_view();
      const auto ov = out.values();
      auto gz = z.grad();
      T dot{0};
      for (std::size_t i = 0; i < go.size(); ++i) dot += go[i] * ov[i];
      for (std::size_t i = 0; i < go.size(); ++i)
        gz[i] += ov[i] * (go[i] - dot);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and selections
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum(TapeT<T>* tape, const TensorT<T>& x) {
  const auto xv = x.values();
  T total{0};
  for (const T v : xv) total += v;
  TensorT<T> out = TensorT<T>::scalar(total);
  if (tape) {
    tape->record([x = x, out = out]() mutable {
      const T go = out.grad_view()[0];
      auto gx = x.grad();
      for (auto& g : gx) g += go;
    });
  }
  return out;
}

template <class T>
TensorT<T> mean(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.size() == 0) throw DimensionError("mean: input must be non-empty");
  return scale(tape, sum(tape, x), T{1} / static_cast<T>(x.size()));
}

/// Selects one element of a rank-1 tensor as a scalar.
template <class T>
TensorT<T> pick(TapeT<T>* tape, const TensorT<T>& x, std::size_t index) {
  if (x.rank() != 1)
    throw DimensionError("pick: input must be rank-1, got " +
                         detail::shape_str(x.shape()));
  if (index >= x.size())
    throw IndexError("pick: index " + std::to_string(index) +
                     " out of range [0, " + std::to_string(x.size()) + ")");
  TensorT<T> out = TensorT<T>::scalar(x.value(index));
  if (tape) {
    tape->record([x = x, out = out, index]() mutable {
      x.grad()[index] += out.grad_view()[0];
    });
  }
  return out;
}

/// Extracts row i of a rank-2 tensor as a rank-1 tensor.
template <class T>
TensorT<T> row_of(TapeT<T>* tape, const TensorT<T>& m, std::size_t i) {
  if (m.rank() != 2)
    throw DimensionError("row_of: input must be rank-2, got " +
                         detail::shape_str(m.shape()));
  if (i >= m.dim(0))
    throw IndexError("row_of: row " + std::to_string(i) + " out of range [0, " +
                     std::to_string(m.dim(0)) + ")");
  const std::size_t cols = m.dim(1);
  TensorT<T> out(Shape{cols});
  auto o = out.values_mut();
  const auto mv = m.values();
  std::copy(mv.begin() + static_cast<std::ptrdiff_t>(i * cols),
            mv.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols), o.begin());
  if (tape) {
    tape->record([m = m, out = out, i, cols]() mutable {
      const auto go = out.grad_view();
      auto gm = m.grad();
      for (std::size_t j = 0; j < cols; ++j) gm[i * cols + j] += go[j];
    });
  }
  return out;
}

/// -log softmax(logits)[target], fused for numeric stability. This is the
/// per-position cross-entropy; its backward is softmax(z) - onehot(target).
template <class T>
TensorT<T> cross_entropy_logits(TapeT<T>* tape, const TensorT<T>& logits,
                                std::size_t target) {
  if (logits.rank() != 1)
    throw DimensionError("cross_entropy_logits: logits must be rank-1, got " +
                         detail::shape_str(logits.shape()));
  if (target >= logits.size())
    throw IndexError("cross_entropy_logits: target " + std::to_string(target) +
                     " out of range [0, " + std::to_string(logits.size()) + ")");
  const auto zv = logits.values();
  T zmax = zv[0];
  for (const T v : zv) {
    if (!std::isfinite(v))
      throw NumericError("cross_entropy_logits: non-finite input");
    zmax = std::max(zmax, v);
  }
  T total{0};
  for (const T v : zv) total += std::exp(v - zmax);
  const T lse = zmax + std::log(total);
  TensorT<T> out = TensorT<T>::scalar(lse - zv[target]);
  if (tape) {
    tape->record([logits = logits, out = out, target, zmax, total]() mutable {
      const T go = out.grad_view()[0];
      const auto zv = logits.values();
      auto gz = logits.grad();
      for (std::size_t i = 0; i < gz.size(); ++i) {
        const T p = std::exp(zv[i] - zmax) / total;
        gz[i] += go * (p - (i == target ? T{1} : T{0}));
      }
    });
  }
  return out;
}

/// Log-probabilities log softmax(z), computed without a tape. Used by
/// decoding and scoring paths that never need gradients.
template <class T>
std::vector<T> log_softmax_values(const TensorT<T>& z) {
  if (z.rank() != 1)
    throw DimensionError("log_softmax_values: input must be rank-1, got " +
                         detail::shape_str(z.shape()));
  const auto zv = z.values();
  if (zv.empty()) throw DimensionError("log_softmax_values: input must be non-empty");
  T zmax = zv[0];
  for (const T v : zv) {
    if (!std::isfinite(v)) throw NumericError("log_softmax_values: non-finite input");
    zmax = std::max(zmax, v);
  }
  T total{0};
  for (const T v : zv) total += std::exp(v - zmax);
  const T lse = zmax + std::log(total);
  std::vector<T> out(zv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = zv[i] - lse;
  return out;
}

}  // namespace caprnn
