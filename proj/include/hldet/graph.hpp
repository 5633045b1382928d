// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over an append-only tape of dense-array
// operations. The op set is the closure needed by the model: temporal
// convolutions, attention softmax, cosine blocks and the reductions used by
// the loss. No implicit broadcasting: rank adaptation is explicit via
// reshape/concat/transpose, which keeps shape bugs loud.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hldet/tensor.hpp"

namespace hldet {

enum class Op {
  kLeaf,
  kMatmul,
  kConv1d,
  kRelu,
  kSoftmax,
  kAdd,
  kSub,
  kScalarMul,
  kAddScalar,
  kMaxScalar,
  kMul,
  kConcat,
  kMean,
  kDot,
  kL2Norm,
  kExp,
  kLog,
  kUpsample2,
  kPadEdgeRight,
  kCropRight,
  kReshape,
  kTranspose,
  kColCosine,
  kPairCosine,
};

// Single-threaded computation graph. Nodes are evaluated eagerly on creation;
// backward() walks the tape once in reverse creation order, so gradients of
// identical graphs are bit-identical.
template <typename T>
class Graph {
 public:
  using Id = std::int32_t;

  Id leaf(Array<T> v, bool requires_grad = false) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    const Id id = static_cast<Id>(nodes_.size() - 1);
    if (requires_grad) grad_leaves_.push_back(id);
    return id;
  }

  // C = A (m x k) * B (k x n)
  Id matmul(Id a, Id b) {
    const Array<T>&A = val(a), &B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[0],
            "matmul", A, B);
    const std::int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Array<T> out({m, n});
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = A.data[i * k + p];
        const T* br = &B.data[p * n];
        T* cr = &out.data[i * n];
        for (std::int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
      }
    return push(Op::kMatmul, {a, b}, std::move(out));
  }

  // Temporal convolution; x is {channels_in, T}, w is {channels_out,
  // channels_in, K} with odd K, bias {channels_out}. Zero padding of K/2 at
  // both ends, output length (T + 2*(K/2) - K)/stride + 1.
  Id conv1d(Id x, Id w, Id bias, int stride = 1) {
    const Array<T>&X = val(x), &W = val(w), &B = val(bias);
    if (stride < 1) throw ShapeError("conv1d stride must be >= 1");
    require(X.rank() == 2 && W.rank() == 3 && B.rank() == 1 &&
                W.shape[1] == X.shape[0] && B.shape[0] == W.shape[0] &&
                (W.shape[2] % 2) == 1,
            "conv1d", X, W);
    const std::int64_t ci = X.shape[0], t_in = X.shape[1];
    const std::int64_t co = W.shape[0], k_len = W.shape[2];
    const std::int64_t pad = k_len / 2;
    const std::int64_t t_out = (t_in + 2 * pad - k_len) / stride + 1;
    Array<T> out({co, t_out});
    for (std::int64_t oc = 0; oc < co; ++oc) {
      T* yr = &out.data[oc * t_out];
      std::fill(yr, yr + t_out, B.data[oc]);
      for (std::int64_t ic = 0; ic < ci; ++ic) {
        const T* xr = &X.data[ic * t_in];
        for (std::int64_t k = 0; k < k_len; ++k) {
          const T wv = W.data[(oc * ci + ic) * k_len + k];
          const auto [t0, t1] = conv_span(t_in, t_out, k, pad, stride);
          const std::int64_t off = k - pad;
          for (std::int64_t t = t0; t <= t1; ++t) yr[t] += wv * xr[t * stride + off];
        }
      }
    }
    Id id = push(Op::kConv1d, {x, w, bias}, std::move(out));
    nodes_[id].axis = stride;
    return id;
  }

  Id relu(Id x) {
    Array<T> out = val(x);
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return push(Op::kRelu, {x}, std::move(out));
  }

  // Softmax along one axis, max-subtracted so large logits never overflow.
  Id softmax(Id x, int axis) {
    const Array<T>& X = val(x);
    check_axis(X, axis, "softmax");
    Array<T> out = X;
    auto [outer, n, inner] = axis_split(X, axis);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        T* base = &out.data[o * n * inner + in];
        T mx = base[0];
        for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, base[i * inner]);
        T sum = 0;
        for (std::int64_t i = 0; i < n; ++i) {
          const T e = std::exp(base[i * inner] - mx);
          base[i * inner] = e;
          sum += e;
        }
        for (std::int64_t i = 0; i < n; ++i) base[i * inner] /= sum;
      }
    Id id = push(Op::kSoftmax, {x}, std::move(out));
    nodes_[id].axis = axis;
    return id;
  }

  Id add(Id a, Id b) { return binary_same_shape(Op::kAdd, a, b); }
  Id sub(Id a, Id b) { return binary_same_shape(Op::kSub, a, b); }
  Id mul(Id a, Id b) { return binary_same_shape(Op::kMul, a, b); }

  Id scalar_mul(Id x, T c) {
    Array<T> out = val(x);
    for (T& v : out.data) v *= c;
    Id id = push(Op::kScalarMul, {x}, std::move(out));
    nodes_[id].scalar = c;
    return id;
  }

  Id add_scalar(Id x, T c) {
    Array<T> out = val(x);
    for (T& v : out.data) v += c;
    Id id = push(Op::kAddScalar, {x}, std::move(out));
    nodes_[id].scalar = c;
    return id;
  }

  // Elementwise max(x, c); subgradient 0 at x == c, matching relu's policy.
  Id max_scalar(Id x, T c) {
    Array<T> out = val(x);
    for (T& v : out.data) v = v > c ? v : c;
    Id id = push(Op::kMaxScalar, {x}, std::move(out));
    nodes_[id].scalar = c;
    return id;
  }

  Id concat(Id a, Id b, int axis) {
    const Array<T>&A = val(a), &B = val(b);
    check_axis(A, axis, "concat");
    bool ok = A.rank() == B.rank();
    if (ok)
      for (int i = 0; i < A.rank(); ++i)
        if (i != axis && A.shape[i] != B.shape[i]) ok = false;
    require(ok, "concat", A, B);
    std::vector<std::int64_t> shape = A.shape;
    shape[axis] += B.shape[axis];
    Array<T> out(shape);
    auto [outer, na, inner] = axis_split(A, axis);
    const std::int64_t nb = B.shape[axis];
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(&A.data[o * na * inner], na * inner,
                  &out.data[o * (na + nb) * inner]);
      std::copy_n(&B.data[o * nb * inner], nb * inner,
                  &out.data[(o * (na + nb) + na) * inner]);
    }
    Id id = push(Op::kConcat, {a, b}, std::move(out));
    nodes_[id].axis = axis;
    return id;
  }

  // Arithmetic mean along one axis; the axis is removed from the shape.
  Id mean(Id x, int axis) {
    const Array<T>& X = val(x);
    check_axis(X, axis, "mean");
    auto [outer, n, inner] = axis_split(X, axis);
    std::vector<std::int64_t> shape;
    for (int i = 0; i < X.rank(); ++i)
      if (i != axis) shape.push_back(X.shape[i]);
    Array<T> out(shape);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        T s = 0;
        for (std::int64_t i = 0; i < n; ++i) s += X.data[(o * n + i) * inner + in];
        out.data[o * inner + in] = s / static_cast<T>(n);
      }
    Id id = push(Op::kMean, {x}, std::move(out));
    nodes_[id].axis = axis;
    return id;
  }

  Id dot(Id a, Id b) {
    const Array<T>&A = val(a), &B = val(b);
    require(A.rank() == 1 && B.rank() == 1 && A.shape[0] == B.shape[0], "dot", A, B);
    T s = 0;
    for (std::int64_t i = 0; i < A.shape[0]; ++i) s += A.data[i] * B.data[i];
    return push(Op::kDot, {a, b}, Array<T>::scalar_of(s));
  }

  Id l2norm(Id x) {
    const Array<T>& X = val(x);
    require(X.rank() == 1, "l2norm", X, X);
    T s = 0;
    for (T v : X.data) s += v * v;
    return push(Op::kL2Norm, {x}, Array<T>::scalar_of(std::sqrt(s)));
  }

  Id exp(Id x) {
    Array<T> out = val(x);
    for (T& v : out.data) {
      v = std::exp(v);
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError("exp overflow in graph node");
    }
    return push(Op::kExp, {x}, std::move(out));
  }

  Id log(Id x) {
    Array<T> out = val(x);
    for (T& v : out.data) {
      if (!(v > T(0)))
        throw NumericError("log of non-positive value " + std::to_string(static_cast<double>(v)));
      v = std::log(v);
    }
    return push(Op::kLog, {x}, std::move(out));
  }

  // Nearest-neighbor upsampling by 2 along the time axis: {d,T} -> {d,2T}.
  Id upsample2(Id x) {
    const Array<T>& X = val(x);
    require(X.rank() == 2, "upsample2", X, X);
    const std::int64_t d = X.shape[0], t_in = X.shape[1];
    Array<T> out({d, 2 * t_in});
    for (std::int64_t r = 0; r < d; ++r)
      for (std::int64_t t = 0; t < t_in; ++t) {
        const T v = X.data[r * t_in + t];
        out.data[r * 2 * t_in + 2 * t] = v;
        out.data[r * 2 * t_in + 2 * t + 1] = v;
      }
    return push(Op::kUpsample2, {x}, std::move(out));
  }

  // Replicates the last frame so the time axis reaches new_len ({d,T}, T <= new_len).
  Id pad_edge_right(Id x, std::int64_t new_len) {
    const Array<T>& X = val(x);
    require(X.rank() == 2 && X.shape[1] <= new_len, "pad_edge_right", X, X);
    const std::int64_t d = X.shape[0], t_in = X.shape[1];
    Array<T> out({d, new_len});
    for (std::int64_t r = 0; r < d; ++r) {
      std::copy_n(&X.data[r * t_in], t_in, &out.data[r * new_len]);
      const T edge = X.data[r * t_in + t_in - 1];
      for (std::int64_t t = t_in; t < new_len; ++t) out.data[r * new_len + t] = edge;
    }
    Id id = push(Op::kPadEdgeRight, {x}, std::move(out));
    nodes_[id].extent = new_len;
    return id;
  }

  // Keeps the first new_len frames: {d,T} -> {d,new_len}, new_len <= T.
  Id crop_right(Id x, std::int64_t new_len) {
    const Array<T>& X = val(x);
    require(X.rank() == 2 && new_len >= 1 && new_len <= X.shape[1], "crop_right", X, X);
    const std::int64_t d = X.shape[0], t_in = X.shape[1];
    Array<T> out({d, new_len});
    for (std::int64_t r = 0; r < d; ++r)
      std::copy_n(&X.data[r * t_in], new_len, &out.data[r * new_len]);
    Id id = push(Op::kCropRight, {x}, std::move(out));
    nodes_[id].extent = new_len;
    return id;
  }

  Id reshape(Id x, std::vector<std::int64_t> shape) {
    const Array<T>& X = val(x);
    if (checked_numel(shape) != X.numel())
      throw ShapeError("reshape from " + shape_str(X.shape) + " to " +
                       shape_str(shape) + " changes element count");
    Array<T> out(std::move(shape), X.data);
    return push(Op::kReshape, {x}, std::move(out));
  }

  Id transpose(Id x) {
    const Array<T>& X = val(x);
    require(X.rank() == 2, "transpose", X, X);
    const std::int64_t r = X.shape[0], c = X.shape[1];
    Array<T> out({c, r});
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.data[j * r + i] = X.data[i * c + j];
    return push(Op::kTranspose, {x}, std::move(out));
  }

  // Cosine similarity between every column of a {d,m} and every column of
  // b {d,n}, giving {m,n}. A zero-norm column yields similarity 0 with zero
  // gradient (degenerate-input policy); occurrences are counted.
  Id col_cosine(Id a, Id b) {
    const Array<T>&A = val(a), &B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.shape[0] == B.shape[0],
            "col_cosine", A, B);
    const std::int64_t d = A.shape[0], m = A.shape[1], n = B.shape[1];
    Array<T> out({m, n});
    std::vector<T> na(m), nb(n);
    col_norms(A, na);
    col_norms(B, nb);
    // dots = A^T B, accumulated row-contiguously
    for (std::int64_t r = 0; r < d; ++r)
      for (std::int64_t i = 0; i < m; ++i) {
        const T av = A.data[r * m + i];
        const T* br = &B.data[r * n];
        T* orow = &out.data[i * n];
        for (std::int64_t j = 0; j < n; ++j) orow[j] += av * br[j];
      }
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        if (na[i] == T(0) || nb[j] == T(0)) {
          out.data[i * n + j] = T(0);
          ++degenerate_cosines_;
        } else {
          out.data[i * n + j] /= na[i] * nb[j];
        }
      }
    return push(Op::kColCosine, {a, b}, std::move(out));
  }

  // Cosine of column i of a against column i of b, both {d,m}, giving {m}.
  Id pair_cosine(Id a, Id b) {
    const Array<T>&A = val(a), &B = val(b);
    require(A.rank() == 2 && B.rank() == 2 && A.shape == B.shape, "pair_cosine", A, B);
    const std::int64_t d = A.shape[0], m = A.shape[1];
    Array<T> out({m});
    std::vector<T> na(m), nb(m);
    col_norms(A, na);
    col_norms(B, nb);
    for (std::int64_t i = 0; i < m; ++i) {
      T s = 0;
      for (std::int64_t r = 0; r < d; ++r) s += A.data[r * m + i] * B.data[r * m + i];
      if (na[i] == T(0) || nb[i] == T(0)) {
        out.data[i] = T(0);
        ++degenerate_cosines_;
      } else {
        out.data[i] = s / (na[i] * nb[i]);
      }
    }
    return push(Op::kPairCosine, {a, b}, std::move(out));
  }

  const Array<T>& value(Id id) const { return val(id); }
  std::size_t size() const { return nodes_.size(); }
  std::int64_t degenerate_cosines() const { return degenerate_cosines_; }

  // Gradients of a scalar loss for every requires-grad leaf; leaves the loss
  // does not reach get zero gradients of their own shape.
  std::unordered_map<Id, Array<T>> backward(Id loss) const {
    const Array<T>& L = val(loss);
    if (L.rank() != 0)
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(L.shape));
    std::vector<Array<T>> grads(static_cast<std::size_t>(loss) + 1);
    grad_at(grads, loss) = Array<T>::scalar_of(T(1));
    for (Id id = loss; id >= 0; --id) {
      const Node& node = nodes_[static_cast<std::size_t>(id)];
      if (!node.needs_grad || grads[static_cast<std::size_t>(id)].data.empty())
        continue;
      backprop(id, node, grads);
    }
    std::unordered_map<Id, Array<T>> out;
    for (Id leaf : grad_leaves_) {
      if (leaf <= loss && !grads[static_cast<std::size_t>(leaf)].data.empty())
        out.emplace(leaf, std::move(grads[static_cast<std::size_t>(leaf)]));
      else
        out.emplace(leaf, zeros_like(val(leaf)));
    }
    return out;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::array<Id, 3> in{-1, -1, -1};
    Array<T> value;
    T scalar{};
    int axis = 0;  // axis for softmax/concat/mean, stride for conv1d
    std::int64_t extent = 0;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Id> grad_leaves_;
  std::int64_t degenerate_cosines_ = 0;

  const Array<T>& val(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ShapeError("invalid node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  static void require(bool ok, const char* op, const Array<T>& a, const Array<T>& b) {
    if (!ok)
      throw ShapeError(std::string(op) + ": incompatible shapes " +
                       shape_str(a.shape) + " and " + shape_str(b.shape));
  }

  static void check_axis(const Array<T>& x, int axis, const char* op) {
    if (axis < 0 || axis >= x.rank())
      throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                       " out of range for shape " + shape_str(x.shape));
  }

  static std::array<std::int64_t, 3> axis_split(const Array<T>& x, int axis) {
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape[i];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    return {outer, x.shape[axis], inner};
  }

  // Valid output-index range [t0, t1] for one kernel tap.
  static std::pair<std::int64_t, std::int64_t> conv_span(std::int64_t t_in,
                                                         std::int64_t t_out,
                                                         std::int64_t k,
                                                         std::int64_t pad,
                                                         std::int64_t stride) {
    const std::int64_t num0 = pad - k;
    const std::int64_t t0 = num0 <= 0 ? 0 : (num0 + stride - 1) / stride;
    const std::int64_t num1 = t_in - 1 + pad - k;
    const std::int64_t t1 = num1 < 0 ? -1 : std::min(t_out - 1, num1 / stride);
    return {t0, t1};
  }

  static void col_norms(const Array<T>& x, std::vector<T>& out) {
    const std::int64_t d = x.shape[0], m = x.shape[1];
    std::vector<T> ssq(static_cast<std::size_t>(m), T(0));
    for (std::int64_t r = 0; r < d; ++r)
      for (std::int64_t i = 0; i < m; ++i) {
        const T v = x.data[r * m + i];
        ssq[static_cast<std::size_t>(i)] += v * v;
      }
    for (std::int64_t i = 0; i < m; ++i)
      out[static_cast<std::size_t>(i)] = std::sqrt(ssq[static_cast<std::size_t>(i)]);
  }

  Id push(Op op, std::initializer_list<Id> inputs, Array<T> value) {
    Node n;
    n.op = op;
    int k = 0;
    for (Id in : inputs) {
      n.in[static_cast<std::size_t>(k++)] = in;
      n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
    }
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id binary_same_shape(Op op, Id a, Id b) {
    const Array<T>&A = val(a), &B = val(b);
    const char* name = op == Op::kAdd ? "add" : op == Op::kSub ? "sub" : "mul";
    require(A.shape == B.shape, name, A, B);
    Array<T> out = A;
    switch (op) {
      case Op::kAdd:
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
        break;
      case Op::kSub:
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
        break;
      default:
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
        break;
    }
    return push(op, {a, b}, std::move(out));
  }

  Array<T>& grad_at(std::vector<Array<T>>& grads, Id id) const {
    Array<T>& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty()) g = zeros_like(val(id));
    return g;
  }

  bool wants(Id id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  void backprop(Id id, const Node& node, std::vector<Array<T>>& grads) const {
    const Array<T>& g = grads[static_cast<std::size_t>(id)];
    const Array<T>& y = node.value;
    switch (node.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        const Array<T>&A = val(node.in[0]), &B = val(node.in[1]);
        const std::int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
        if (wants(node.in[0])) {
          Array<T>& da = grad_at(grads, node.in[0]);  // G * B^T
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
              const T gv = g.data[i * n + j];
              const T* br = &B.data[j];  // column j, stride n
              T* dar = &da.data[i * k];
              for (std::int64_t p = 0; p < k; ++p) dar[p] += gv * br[p * n];
            }
        }
        if (wants(node.in[1])) {
          Array<T>& db = grad_at(grads, node.in[1]);  // A^T * G
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
              const T av = A.data[i * k + p];
              const T* gr = &g.data[i * n];
              T* dbr = &db.data[p * n];
              for (std::int64_t j = 0; j < n; ++j) dbr[j] += av * gr[j];
            }
        }
        break;
      }
      case Op::kConv1d: {
        const Array<T>&X = val(node.in[0]), &W = val(node.in[1]);
        const std::int64_t stride = node.axis;
        const std::int64_t ci = X.shape[0], t_in = X.shape[1];
        const std::int64_t co = W.shape[0], k_len = W.shape[2];
        const std::int64_t pad = k_len / 2, t_out = y.shape[1];
        if (wants(node.in[2])) {
          Array<T>& db = grad_at(grads, node.in[2]);
          for (std::int64_t oc = 0; oc < co; ++oc) {
            T s = 0;
            const T* gr = &g.data[oc * t_out];
            for (std::int64_t t = 0; t < t_out; ++t) s += gr[t];
            db.data[oc] += s;
          }
        }
        const bool want_x = wants(node.in[0]), want_w = wants(node.in[1]);
        if (want_x || want_w) {
          Array<T>* dx = want_x ? &grad_at(grads, node.in[0]) : nullptr;
          Array<T>* dw = want_w ? &grad_at(grads, node.in[1]) : nullptr;
          for (std::int64_t oc = 0; oc < co; ++oc) {
            const T* gr = &g.data[oc * t_out];
            for (std::int64_t ic = 0; ic < ci; ++ic) {
              const T* xr = &X.data[ic * t_in];
              T* dxr = want_x ? &dx->data[ic * t_in] : nullptr;
              for (std::int64_t k = 0; k < k_len; ++k) {
                const auto [t0, t1] = conv_span(t_in, t_out, k, pad, stride);
                const std::int64_t off = k - pad;
                if (want_w) {
                  T s = 0;
                  for (std::int64_t t = t0; t <= t1; ++t) s += gr[t] * xr[t * stride + off];
                  dw->data[(oc * ci + ic) * k_len + k] += s;
                }
                if (want_x) {
                  const T wv = W.data[(oc * ci + ic) * k_len + k];
                  for (std::int64_t t = t0; t <= t1; ++t) dxr[t * stride + off] += wv * gr[t];
                }
              }
            }
          }
        }
        break;
      }
      case Op::kRelu: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& dx = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < dx.data.size(); ++i)
          if (X.data[i] > T(0)) dx.data[i] += g.data[i];
        break;
      }
      case Op::kSoftmax: {
        if (!wants(node.in[0])) break;
        Array<T>& dx = grad_at(grads, node.in[0]);
        auto [outer, n, inner] = axis_split(y, node.axis);
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            T dot_gy = 0;
            for (std::int64_t i = 0; i < n; ++i)
              dot_gy += g.data[base + i * inner] * y.data[base + i * inner];
            for (std::int64_t i = 0; i < n; ++i)
              dx.data[base + i * inner] +=
                  y.data[base + i * inner] * (g.data[base + i * inner] - dot_gy);
          }
        break;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s)
          if (wants(node.in[s])) {
            Array<T>& d = grad_at(grads, node.in[s]);
            for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i];
          }
        break;
      }
      case Op::kSub: {
        if (wants(node.in[0])) {
          Array<T>& d = grad_at(grads, node.in[0]);
          for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i];
        }
        if (wants(node.in[1])) {
          Array<T>& d = grad_at(grads, node.in[1]);
          for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] -= g.data[i];
        }
        break;
      }
      case Op::kScalarMul: {
        if (!wants(node.in[0])) break;
        Array<T>& d = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i] * node.scalar;
        break;
      }
      case Op::kAddScalar: {
        if (!wants(node.in[0])) break;
        Array<T>& d = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i];
        break;
      }
      case Op::kMaxScalar: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < d.data.size(); ++i)
          if (X.data[i] > node.scalar) d.data[i] += g.data[i];
        break;
      }
      case Op::kMul: {
        const Array<T>&A = val(node.in[0]), &B = val(node.in[1]);
        if (wants(node.in[0])) {
          Array<T>& d = grad_at(grads, node.in[0]);
          for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i] * B.data[i];
        }
        if (wants(node.in[1])) {
          Array<T>& d = grad_at(grads, node.in[1]);
          for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i] * A.data[i];
        }
        break;
      }
      case Op::kConcat: {
        const Array<T>& A = val(node.in[0]);
        auto [outer, na, inner] = axis_split(A, node.axis);
        const std::int64_t nb = val(node.in[1]).shape[node.axis];
        if (wants(node.in[0])) {
          Array<T>& d = grad_at(grads, node.in[0]);
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t j = 0; j < na * inner; ++j)
              d.data[o * na * inner + j] += g.data[o * (na + nb) * inner + j];
        }
        if (wants(node.in[1])) {
          Array<T>& d = grad_at(grads, node.in[1]);
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t j = 0; j < nb * inner; ++j)
              d.data[o * nb * inner + j] += g.data[(o * (na + nb) + na) * inner + j];
        }
        break;
      }
      case Op::kMean: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        auto [outer, n, inner] = axis_split(X, node.axis);
        const T inv = T(1) / static_cast<T>(n);
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t in = 0; in < inner; ++in)
              d.data[(o * n + i) * inner + in] += g.data[o * inner + in] * inv;
        break;
      }
      case Op::kDot: {
        const Array<T>&A = val(node.in[0]), &B = val(node.in[1]);
        const T gv = g.data[0];
        if (wants(node.in[0])) {
          Array<T>& d = grad_at(grads, node.in[0]);
          for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gv * B.data[i];
        }
        if (wants(node.in[1])) {
          Array<T>& d = grad_at(grads, node.in[1]);
          for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gv * A.data[i];
        }
        break;
      }
      case Op::kL2Norm: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        const T norm = y.data[0];
        if (norm == T(0)) break;  // subgradient 0 at the origin
        Array<T>& d = grad_at(grads, node.in[0]);
        const T gv = g.data[0] / norm;
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += gv * X.data[i];
        break;
      }
      case Op::kExp: {
        if (!wants(node.in[0])) break;
        Array<T>& d = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i] * y.data[i];
        break;
      }
      case Op::kLog: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i] / X.data[i];
        break;
      }
      case Op::kUpsample2: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        const std::int64_t dch = X.shape[0], t_in = X.shape[1];
        for (std::int64_t r = 0; r < dch; ++r)
          for (std::int64_t t = 0; t < t_in; ++t)
            d.data[r * t_in + t] +=
                g.data[r * 2 * t_in + 2 * t] + g.data[r * 2 * t_in + 2 * t + 1];
        break;
      }
      case Op::kPadEdgeRight: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        const std::int64_t dch = X.shape[0], t_in = X.shape[1], t_new = node.extent;
        for (std::int64_t r = 0; r < dch; ++r) {
          for (std::int64_t t = 0; t + 1 < t_in; ++t)
            d.data[r * t_in + t] += g.data[r * t_new + t];
          T s = 0;
          for (std::int64_t t = t_in - 1; t < t_new; ++t) s += g.data[r * t_new + t];
          d.data[r * t_in + t_in - 1] += s;
        }
        break;
      }
      case Op::kCropRight: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        const std::int64_t dch = X.shape[0], t_in = X.shape[1], t_new = node.extent;
        for (std::int64_t r = 0; r < dch; ++r)
          for (std::int64_t t = 0; t < t_new; ++t)
            d.data[r * t_in + t] += g.data[r * t_new + t];
        break;
      }
      case Op::kReshape: {
        if (!wants(node.in[0])) break;
        Array<T>& d = grad_at(grads, node.in[0]);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i];
        break;
      }
      case Op::kTranspose: {
        if (!wants(node.in[0])) break;
        const Array<T>& X = val(node.in[0]);
        Array<T>& d = grad_at(grads, node.in[0]);
        const std::int64_t r = X.shape[0], c = X.shape[1];
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) d.data[i * c + j] += g.data[j * r + i];
        break;
      }
      case Op::kColCosine: {
        const Array<T>&A = val(node.in[0]), &B = val(node.in[1]);
        const std::int64_t d = A.shape[0], m = A.shape[1], n = B.shape[1];
        std::vector<T> na(static_cast<std::size_t>(m)), nb(static_cast<std::size_t>(n));
        col_norms(A, na);
        col_norms(B, nb);
        const bool want_a = wants(node.in[0]), want_b = wants(node.in[1]);
        Array<T>* da = want_a ? &grad_at(grads, node.in[0]) : nullptr;
        Array<T>* db = want_b ? &grad_at(grads, node.in[1]) : nullptr;
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            const T nai = na[static_cast<std::size_t>(i)], nbj = nb[static_cast<std::size_t>(j)];
            if (nai == T(0) || nbj == T(0)) continue;
            const T gv = g.data[i * n + j];
            if (gv == T(0)) continue;
            const T c = y.data[i * n + j];
            const T inv_ab = T(1) / (nai * nbj);
            const T inv_a2 = T(1) / (nai * nai), inv_b2 = T(1) / (nbj * nbj);
            for (std::int64_t r = 0; r < d; ++r) {
              const T av = A.data[r * m + i], bv = B.data[r * n + j];
              if (want_a) da->data[r * m + i] += gv * (bv * inv_ab - c * av * inv_a2);
              if (want_b) db->data[r * n + j] += gv * (av * inv_ab - c * bv * inv_b2);
            }
          }
        break;
      }
      case Op::kPairCosine: {
        const Array<T>&A = val(node.in[0]), &B = val(node.in[1]);
        const std::int64_t d = A.shape[0], m = A.shape[1];
        std::vector<T> na(static_cast<std::size_t>(m)), nb(static_cast<std::size_t>(m));
        col_norms(A, na);
        col_norms(B, nb);
        const bool want_a = wants(node.in[0]), want_b = wants(node.in[1]);
        Array<T>* da = want_a ? &grad_at(grads, node.in[0]) : nullptr;
        Array<T>* db = want_b ? &grad_at(grads, node.in[1]) : nullptr;
        for (std::int64_t i = 0; i < m; ++i) {
          const T nai = na[static_cast<std::size_t>(i)], nbi = nb[static_cast<std::size_t>(i)];
          if (nai == T(0) || nbi == T(0)) continue;
          const T gv = g.data[i];
          if (gv == T(0)) continue;
          const T c = y.data[i];
          const T inv_ab = T(1) / (nai * nbi);
          const T inv_a2 = T(1) / (nai * nai), inv_b2 = T(1) / (nbi * nbi);
          for (std::int64_t r = 0; r < d; ++r) {
            const T av = A.data[r * m + i], bv = B.data[r * m + i];
            if (want_a) da->data[r * m + i] += gv * (bv * inv_ab - c * av * inv_a2);
            if (want_b) db->data[r * m + i] += gv * (av * inv_ab - c * bv * inv_b2);
          }
        }
        break;
      }
    }
  }
};

}  // namespace hldet
