// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-only helpers: relative-error metric, central finite differences and a
// seeded generator of random small graphs used for gradient checking. Kept
// independent of the library's backward pass on purpose.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hldet/graph.hpp"
#include "hldet/rng.hpp"
#include "hldet/tensor.hpp"

namespace hldet::test {

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

// f evaluated at x with element i shifted by +/-h.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, std::size_t i, double h = 1e-3) {
  x[i] += h;
  const double fp = f(x);
  x[i] -= 2 * h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

// A recorded straight-line program over the graph op set. Re-running it with
// perturbed leaf values gives the finite-difference oracle a pure function.
struct GraphProgram {
  struct Instr {
    Op op = Op::kLeaf;
    int a = -1, b = -1, c = -1;
    double scalar = 0;
    int axis = 0;
    std::int64_t extent = 0;
    std::vector<std::int64_t> shape;  // for leaves
    bool requires_grad = false;       // for leaves
  };
  std::vector<Instr> instrs;
  std::vector<int> leaves;  // instr indices of leaf instructions
  int result = -1;

  // Executes the program; leaf_values[i] feeds leaves[i].
  template <typename T>
  std::pair<Graph<T>, std::vector<typename Graph<T>::Id>> run(
      const std::vector<Array<T>>& leaf_values) const {
    Graph<T> g;
    std::vector<typename Graph<T>::Id> ids(instrs.size(), -1);
    std::size_t leaf_idx = 0;
    for (std::size_t i = 0; i < instrs.size(); ++i) {
      const Instr& ins = instrs[i];
      switch (ins.op) {
        case Op::kLeaf:
          ids[i] = g.leaf(leaf_values[leaf_idx++], ins.requires_grad);
          break;
        case Op::kMatmul: ids[i] = g.matmul(ids[ins.a], ids[ins.b]); break;
        case Op::kConv1d: ids[i] = g.conv1d(ids[ins.a], ids[ins.b], ids[ins.c], ins.axis); break;
        case Op::kRelu: ids[i] = g.relu(ids[ins.a]); break;
        case Op::kSoftmax: ids[i] = g.softmax(ids[ins.a], ins.axis); break;
        case Op::kAdd: ids[i] = g.add(ids[ins.a], ids[ins.b]); break;
        case Op::kSub: ids[i] = g.sub(ids[ins.a], ids[ins.b]); break;
        case Op::kScalarMul: ids[i] = g.scalar_mul(ids[ins.a], static_cast<T>(ins.scalar)); break;
        case Op::kAddScalar: ids[i] = g.add_scalar(ids[ins.a], static_cast<T>(ins.scalar)); break;
        case Op::kMaxScalar: ids[i] = g.max_scalar(ids[ins.a], static_cast<T>(ins.scalar)); break;
        case Op::kMul: ids[i] = g.mul(ids[ins.a], ids[ins.b]); break;
        case Op::kConcat: ids[i] = g.concat(ids[ins.a], ids[ins.b], ins.axis); break;
        case Op::kMean: ids[i] = g.mean(ids[ins.a], ins.axis); break;
        case Op::kDot: ids[i] = g.dot(ids[ins.a], ids[ins.b]); break;
        case Op::kL2Norm: ids[i] = g.l2norm(ids[ins.a]); break;
        case Op::kExp: ids[i] = g.exp(ids[ins.a]); break;
        case Op::kLog: ids[i] = g.log(ids[ins.a]); break;
        case Op::kUpsample2: ids[i] = g.upsample2(ids[ins.a]); break;
        case Op::kPadEdgeRight: ids[i] = g.pad_edge_right(ids[ins.a], ins.extent); break;
        case Op::kCropRight: ids[i] = g.crop_right(ids[ins.a], ins.extent); break;
        case Op::kReshape: ids[i] = g.reshape(ids[ins.a], ins.shape); break;
        case Op::kTranspose: ids[i] = g.transpose(ids[ins.a]); break;
        case Op::kColCosine: ids[i] = g.col_cosine(ids[ins.a], ids[ins.b]); break;
        case Op::kPairCosine: ids[i] = g.pair_cosine(ids[ins.a], ids[ins.b]); break;
      }
    }
    return {std::move(g), std::move(ids)};
  }
};

// Draws a random program of at most six ops over extents <= 5, then reduces
// the result to a scalar. Programs whose values sit too close to a relu/max
// kink or other non-smooth region are rejected by the caller via is_smooth().
class RandomGraphGen {
 public:
  explicit RandomGraphGen(std::uint64_t seed) : rng_(seed) {}

  struct Case {
    GraphProgram program;
    std::vector<Array<double>> leaf_values;
  };

  Case next() {
    for (;;) {
      Case c = propose();
      if (is_smooth(c)) return c;
    }
  }

  // Rejects programs where finite differences are unreliable: values within
  // 0.02 of a relu/max threshold, norms below 0.05 feeding a cosine or
  // l2norm, or log inputs below 0.05.
  bool is_smooth(const Case& c) {
    auto [g, ids] = c.program.run<double>(c.leaf_values);
    for (const auto& ins : c.program.instrs) {
      const int self = static_cast<int>(&ins - c.program.instrs.data());
      switch (ins.op) {
        case Op::kRelu:
        case Op::kMaxScalar: {
          const double thr = ins.op == Op::kRelu ? 0.0 : ins.scalar;
          for (double v : g.value(ids[ins.a]).data)
            if (std::fabs(v - thr) < 0.02) return false;
          break;
        }
        case Op::kLog: {
          for (double v : g.value(ids[ins.a]).data)
            if (v < 0.05) return false;
          break;
        }
        case Op::kL2Norm: {
          if (g.value(ids[self]).data[0] < 0.05) return false;
          break;
        }
        case Op::kColCosine:
        case Op::kPairCosine: {
          for (int side : {ins.a, ins.b}) {
            const auto& m = g.value(ids[side]);
            for (std::int64_t j = 0; j < m.shape[1]; ++j) {
              double ssq = 0;
              for (std::int64_t r = 0; r < m.shape[0]; ++r) {
                const double v = m.at(r, j);
                ssq += v * v;
              }
              if (std::sqrt(ssq) < 0.05) return false;
            }
          }
          break;
        }
        default:
          break;
      }
    }
    return true;
  }

 private:
  Rng rng_;

  std::int64_t extent() { return 1 + static_cast<std::int64_t>(rng_.below(5)); }

  std::vector<std::int64_t> random_shape() {
    const int rank = 1 + static_cast<int>(rng_.below(2));
    std::vector<std::int64_t> s;
    for (int i = 0; i < rank; ++i) s.push_back(extent());
    return s;
  }

  int add_leaf(Case& c, std::vector<std::int64_t> shape, bool grad, double lo = -1.2,
               double hi = 1.2) {
    GraphProgram::Instr ins;
    ins.op = Op::kLeaf;
    ins.shape = shape;
    ins.requires_grad = grad;
    c.program.instrs.push_back(ins);
    const int idx = static_cast<int>(c.program.instrs.size() - 1);
    c.program.leaves.push_back(idx);
    Array<double> v(shape);
    for (double& x : v.data) x = rng_.uniform(lo, hi);
    c.leaf_values.push_back(std::move(v));
    return idx;
  }

  // Up to six ops total: at most three body ops (log adds one extra floor op)
  // plus at most two reducing means.
  Case propose() {
    Case c;
    std::vector<std::int64_t> shape = random_shape();
    int cur = add_leaf(c, shape, true);
    const int body_ops = 1 + static_cast<int>(rng_.below(3));
    int ops_used = 0;
    for (int step = 0; step < body_ops && ops_used < 3; ++step) {
      const int rank = static_cast<int>(shape.size());
      const int choice = static_cast<int>(rng_.below(16));
      GraphProgram::Instr ins;
      switch (choice) {
        case 0: {  // matmul, needs rank 2
          if (rank != 2) continue;
          const std::int64_t n = extent();
          const int other = add_leaf(c, {shape[1], n}, rng_.below(2) == 0);
          ins.op = Op::kMatmul;
          ins.a = cur;
          ins.b = other;
          shape = {shape[0], n};
          break;
        }
        case 1: {  // conv1d
          if (rank != 2) continue;
          const std::int64_t co = extent();
          const std::int64_t k = rng_.below(2) == 0 ? 1 : 3;
          const int stride = rng_.below(2) == 0 ? 1 : 2;
          const int w = add_leaf(c, {co, shape[0], k}, true);
          const int b = add_leaf(c, {co}, true);
          ins.op = Op::kConv1d;
          ins.a = cur;
          ins.b = w;
          ins.c = b;
          ins.axis = stride;
          shape = {co, (shape[1] + 2 * (k / 2) - k) / stride + 1};
          break;
        }
        case 2:
          ins.op = Op::kRelu;
          ins.a = cur;
          break;
        case 3:
          ins.op = Op::kSoftmax;
          ins.a = cur;
          ins.axis = static_cast<int>(rng_.below(shape.size()));
          break;
        case 4:
        case 5: {
          const int other = add_leaf(c, shape, rng_.below(2) == 0);
          ins.op = choice == 4 ? Op::kAdd : Op::kMul;
          ins.a = cur;
          ins.b = other;
          break;
        }
        case 6: {
          const int other = add_leaf(c, shape, rng_.below(2) == 0);
          ins.op = Op::kSub;
          ins.a = cur;
          ins.b = other;
          break;
        }
        case 7:
          ins.op = Op::kScalarMul;
          ins.a = cur;
          ins.scalar = rng_.uniform(-2.0, 2.0);
          break;
        case 8:
          ins.op = Op::kMaxScalar;
          ins.a = cur;
          ins.scalar = rng_.uniform(-0.5, 0.5);
          break;
        case 9: {
          const int axis = static_cast<int>(rng_.below(shape.size()));
          const int other = add_leaf(c, shape, rng_.below(2) == 0);
          ins.op = Op::kConcat;
          ins.a = cur;
          ins.b = other;
          ins.axis = axis;
          shape[static_cast<std::size_t>(axis)] *= 2;
          break;
        }
        case 10:
          ins.op = Op::kExp;
          ins.a = cur;
          ins.scalar = 0;
          break;
        case 11: {  // log of a guaranteed-positive value
          GraphProgram::Instr floor_ins;
          floor_ins.op = Op::kMaxScalar;
          floor_ins.a = cur;
          floor_ins.scalar = 0.3;
          c.program.instrs.push_back(floor_ins);
          cur = static_cast<int>(c.program.instrs.size() - 1);
          ++ops_used;
          ins.op = Op::kLog;
          ins.a = cur;
          break;
        }
        case 12: {
          if (rank != 2) continue;
          ins.op = Op::kUpsample2;
          ins.a = cur;
          shape = {shape[0], shape[1] * 2};
          break;
        }
        case 13: {
          if (rank != 2) continue;
          const bool pad = rng_.below(2) == 0;
          if (pad) {
            ins.op = Op::kPadEdgeRight;
            ins.extent = shape[1] + 1 + static_cast<std::int64_t>(rng_.below(3));
            shape = {shape[0], ins.extent};
          } else {
            ins.op = Op::kCropRight;
            ins.extent = 1 + static_cast<std::int64_t>(rng_.below(static_cast<std::uint64_t>(shape[1])));
            shape = {shape[0], ins.extent};
          }
          ins.a = cur;
          break;
        }
        case 14: {
          if (rank != 2) continue;
          ins.op = Op::kTranspose;
          ins.a = cur;
          shape = {shape[1], shape[0]};
          break;
        }
        default: {
          if (rank != 2) continue;
          const std::int64_t n = extent();
          const int other = add_leaf(c, {shape[0], n}, rng_.below(2) == 0);
          ins.op = rng_.below(2) == 0 || shape[1] != n ? Op::kColCosine : Op::kPairCosine;
          if (ins.op == Op::kPairCosine) {
            ins.a = cur;
            ins.b = other;
            shape = {shape[1]};
          } else {
            ins.a = cur;
            ins.b = other;
            shape = {shape[1], n};
          }
          break;
        }
      }
      c.program.instrs.push_back(ins);
      cur = static_cast<int>(c.program.instrs.size() - 1);
      ++ops_used;
    }
    // Reduce to a scalar with means.
    while (!shape.empty()) {
      GraphProgram::Instr ins;
      ins.op = Op::kMean;
      ins.a = cur;
      ins.axis = 0;
      c.program.instrs.push_back(ins);
      cur = static_cast<int>(c.program.instrs.size() - 1);
      shape.erase(shape.begin());
    }
    c.program.result = cur;
    return c;
  }
};

}  // namespace hldet::test
