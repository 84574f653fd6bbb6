#pragma once

// Central finite-difference gradient oracle. Deliberately independent of the
// tape machinery in tensor.hpp: it only perturbs values and re-evaluates a
// scalar function, so it can be used to verify recorded gradients.

#include <cmath>
#include <span>
#include <string>

#include "caprnn/error.hpp"
#include "caprnn/tensor.hpp"

namespace caprnn {

/// Central finite differences: g_i = (f(x + h e_i) - f(x - h e_i)) / (2h).
/// f must be a pure scalar function of x's current values; x is restored
/// before returning.
template <class T, class F>
TensorT<T> finite_difference_grad(F&& f, TensorT<T> x, T step) {
  if (!(step > T{0}))
    throw UsageError("finite_difference_grad: step must be positive, got " +
                     std::to_string(step));
  TensorT<T> grad(x.shape());
  auto g = grad.values_mut();
  auto xv = x.values_mut();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T original = xv[i];
    xv[i] = original + step;
    const T plus = f(static_cast<const TensorT<T>&>(x));
    xv[i] = original - step;
    const T minus = f(static_cast<const TensorT<T>&>(x));
    xv[i] = original;
    g[i] = (plus - minus) / (T{2} * step);
  }
  return grad;
}

/// Relative error between two gradient vectors: ||a-b|| / max(||a||, ||b||),
/// floored so that a pair of numerically-zero gradients compares equal.
template <class T>
T relative_error(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size())
    throw DimensionError("relative_error: length mismatch between (" +
                         std::to_string(a.size()) + ") and (" +
                         std::to_string(b.size()) + ")");
  T diff{0}, na{0}, nb{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const T denom = std::max(std::sqrt(std::max(na, nb)), T{1e-6});
  return std::sqrt(diff) / denom;
}

}  // namespace caprnn
