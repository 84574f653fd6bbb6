#pragma once

// Neural layers used by every caption architecture: a token embedding table,
// a GRU cell with its unrolled application, and fully-connected layers (one
// of which doubles as the image projection).
//
// Vector convention: activations are rank-1 row vectors multiplied on the
// left of weight matrices, x . W + b.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/tensor.hpp"
#include "caprnn/types.hpp"

namespace caprnn {

template <class T>
struct EmbeddingTableT {
  TensorT<T> table;  // vocab_size x embed_dim

  std::size_t vocab_size() const { return table.dim(0); }
  std::size_t embed_dim() const { return table.dim(1); }
};

/// Gated recurrent unit parameters. Input-to-hidden matrices are
/// input_dim x hidden_dim, hidden-to-hidden are hidden_dim x hidden_dim.
template <class T>
struct GruCellT {
  TensorT<T> w_xr, w_sr;  // reset gate
  TensorT<T> b_r;
  TensorT<T> w_xu, w_su;  // update gate
  TensorT<T> b_u;
  TensorT<T> w_xc, w_sc;  // candidate state
  TensorT<T> b_c;

  std::size_t input_dim() const { return w_xr.dim(0); }
  std::size_t hidden_dim() const { return w_xr.dim(1); }
};

enum class Activation { none, relu, softmax };

template <class T>
struct DenseLayerT {
  TensorT<T> w;  // in_dim x out_dim
  TensorT<T> b;  // out_dim
  Activation activation = Activation::none;

  std::size_t in_dim() const { return w.dim(0); }
  std::size_t out_dim() const { return w.dim(1); }
};

using EmbeddingTable = EmbeddingTableT<float>;
using GruCell = GruCellT<float>;
using DenseLayer = DenseLayerT<float>;

/// Looks up one embedding row.
template <class T>
TensorT<T> embed_row(TapeT<T>* tape, const EmbeddingTableT<T>& emb, TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= emb.vocab_size())
    throw IndexError("embed: token id " + std::to_string(id) +
                     " out of range [0, " + std::to_string(emb.vocab_size()) + ")");
  return row_of(tape, emb.table, static_cast<std::size_t>(id));
}

/// Embeds a token sequence into a len x embed_dim matrix; row i is the table
/// row for ids[i]. Repeated ids share (and accumulate gradient into) the
/// same table row.
template <class T>
TensorT<T> embed(TapeT<T>* tape, const EmbeddingTableT<T>& emb,
                 std::span<const TokenId> ids) {
  const std::size_t cols = emb.embed_dim();
  for (const TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= emb.vocab_size())
      throw IndexError("embed: token id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(emb.vocab_size()) +
                       ")");
  TensorT<T> out(Shape{ids.size(), cols});
  auto o = out.values_mut();
  const auto tv = emb.table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t src = static_cast<std::size_t>(ids[i]) * cols;
    for (std::size_t j = 0; j < cols; ++j) o[i * cols + j] = tv[src + j];
  }
  if (tape) {
    std::vector<TokenId> idv(ids.begin(), ids.end());
    tape->record([table = emb.table, out = out, idv, cols]() mutable {
      const auto go = out.grad_view();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        const std::size_t dst = static_cast<std::size_t>(idv[i]) * cols;
        for (std::size_t j = 0; j < cols; ++j) gt[dst + j] += go[i * cols + j];
      }
    });
  }
  return out;
}

/// One GRU transition:
///   r = sig(x W_xr + s W_sr + b_r)
///   u = sig(x W_xu + s W_su + b_u)
///   c = tanh(x W_xc + (r * s) W_sc + b_c)
///   s' = u * s + (1 - u) * c
template <class T>
TensorT<T> gru_step(TapeT<T>* tape, const GruCellT<T>& cell, const TensorT<T>& x,
                    const TensorT<T>& s_prev) {
  if (x.rank() != 1 || x.size() != cell.input_dim())
    throw DimensionError("gru_step: input shape " + detail::shape_str(x.shape()) +
                         " does not match cell input (" +
                         std::to_string(cell.input_dim()) + ")");
  if (s_prev.rank() != 1 || s_prev.size() != cell.hidden_dim())
    throw DimensionError("gru_step: state shape " +
                         detail::shape_str(s_prev.shape()) +
                         " does not match cell hidden (" +
                         std::to_string(cell.hidden_dim()) + ")");
  auto gate = [&](const TensorT<T>& wx, const TensorT<T>& ws, const TensorT<T>& b) {
    return sigmoid(tape, add(tape, add(tape, matmul(tape, x, wx),
                                       matmul(tape, s_prev, ws)),
                             b));
  };
  TensorT<T> r = gate(cell.w_xr, cell.w_sr, cell.b_r);
  TensorT<T> u = gate(cell.w_xu, cell.w_su, cell.b_u);
  TensorT<T> c = tanh_op(
      tape, add(tape,
                add(tape, matmul(tape, x, cell.w_xc),
                    matmul(tape, multiply(tape, r, s_prev), cell.w_sc)),
                cell.b_c));
  TensorT<T> ones = TensorT<T>::full(Shape{cell.hidden_dim()}, T{1});
  return add(tape, multiply(tape, u, s_prev),
             multiply(tape, subtract(tape, ones, u), c));
}

/// Applies gru_step over a sequence of inputs; returns every state
/// s_1 .. s_T (empty input -> empty result).
template <class T>
std::vector<TensorT<T>> gru_unroll(TapeT<T>* tape, const GruCellT<T>& cell,
                                   std::span<const TensorT<T>> inputs,
                                   const TensorT<T>& s0) {
  std::vector<TensorT<T>> states;
  states.reserve(inputs.size());
  TensorT<T> s = s0;
  for (const auto& x : inputs) {
    s = gru_step(tape, cell, x, s);
    states.push_back(s);
  }
  return states;
}

/// Fully-connected layer x W + b followed by the layer's activation.
template <class T>
TensorT<T> dense(TapeT<T>* tape, const DenseLayerT<T>& layer, const TensorT<T>& x) {
  if (x.rank() != 1 || x.size() != layer.in_dim())
    throw DimensionError("dense: input shape " + detail::shape_str(x.shape()) +
                         " does not match layer input (" +
                         std::to_string(layer.in_dim()) + ")");
  TensorT<T> z = add(tape, matmul(tape, x, layer.w), layer.b);
  switch (layer.activation) {
    case Activation::none:
      return z;
    case Activation::relu:
      return relu(tape, z);
    case Activation::softmax:
      return softmax(tape, z);
  }
  throw StateError("dense: unknown activation");
}

/// Pre-activation output x W + b, ignoring the layer's activation. The loss
/// and decoding paths consume these logits directly.
template <class T>
TensorT<T> dense_linear(TapeT<T>* tape, const DenseLayerT<T>& layer,
                        const TensorT<T>& x) {
  if (x.rank() != 1 || x.size() != layer.in_dim())
    throw DimensionError("dense: input shape " + detail::shape_str(x.shape()) +
                         " does not match layer input (" +
                         std::to_string(layer.in_dim()) + ")");
  return add(tape, matmul(tape, x, layer.w), layer.b);
}

/// Scales a feature vector to unit L2 norm. This is input preprocessing:
/// the result is a fresh leaf tensor and no gradient flows into `feature`.
template <class T>
TensorT<T> normalize_feature(const TensorT<T>& feature) {
  if (feature.rank() != 1)
    throw DimensionError("normalize_feature: input must be rank-1, got " +
                         detail::shape_str(feature.shape()));
  T sq{0};
  for (const T v : feature.values()) sq += v * v;
  const T norm = std::sqrt(sq);
  if (!(norm > T{0}))
    throw NumericError("normalize_feature: cannot normalize a zero-norm vector");
  TensorT<T> out(feature.shape());
  auto o = out.values_mut();
  const auto fv = feature.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fv[i] / norm;
  return out;
}

/// Image projection: optional L2 normalization of the raw feature followed
/// by a dense layer (whose activation is `none` or `relu`).
template <class T>
TensorT<T> project_image(TapeT<T>* tape, const DenseLayerT<T>& layer,
                         const TensorT<T>& feature, bool normalize) {
  const TensorT<T> input = normalize ? normalize_feature(feature) : feature;
  return dense(tape, layer, input);
}

}  // namespace caprnn
