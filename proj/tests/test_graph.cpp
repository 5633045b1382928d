// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hldet/graph.hpp"
#include "testutil.hpp"

using hldet::Array;
using hldet::Graph;
using hldet::test::central_diff;
using hldet::test::RandomGraphGen;
using hldet::test::rel_err;

namespace {

Array<double> vec(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Array<double>({n}, std::move(v));
}

}  // namespace

TEST_CASE("relu clamps negatives and keeps positives") {
  Graph<double> g;
  auto y = g.relu(g.leaf(vec({-1, 0, 2})));
  CHECK(g.value(y).data == std::vector<double>{0, 0, 2});
}

TEST_CASE("softmax of equal logits is uniform") {
  Graph<double> g;
  auto y = g.softmax(g.leaf(vec({0, 0})), 0);
  CHECK(g.value(y).data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g.value(y).data[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax stays normalized and finite under huge logits") {
  Graph<double> g;
  auto y = g.softmax(g.leaf(vec({1000.0, 900.0, -1000.0})), 0);
  double sum = 0;
  for (double v : g.value(y).data) {
    CHECK(v >= 0.0);
    CHECK(std::isfinite(v));
    sum += v;
  }
  CHECK(std::fabs(sum - 1.0) < 1e-9);
}

TEST_CASE("dot product") {
  Graph<double> g;
  auto y = g.dot(g.leaf(vec({1, 2})), g.leaf(vec({3, 4})));
  CHECK(g.value(y).data[0] == 11.0);
}

TEST_CASE("backward of dot returns the other operand") {
  Graph<double> g;
  auto w = g.leaf(vec({1, 2}), true);
  auto x = g.leaf(vec({3, 4}));
  auto grads = g.backward(g.dot(w, x));
  CHECK(grads.at(w).data == std::vector<double>{3, 4});
}

TEST_CASE("relu subgradient is zero at and below the kink") {
  Graph<double> g;
  auto w = g.leaf(vec({-1, 2}), true);
  // sum(relu(w)) composed as mean * n
  auto loss = g.scalar_mul(g.mean(g.relu(w), 0), 2.0);
  auto grads = g.backward(loss);
  CHECK(grads.at(w).data == std::vector<double>{0, 1});

  Graph<double> g2;
  auto w2 = g2.leaf(vec({0.0}), true);
  auto grads2 = g2.backward(g2.mean(g2.relu(w2), 0));
  CHECK(grads2.at(w2).data[0] == 0.0);
}

TEST_CASE("leaves unreachable from the loss get zero gradients") {
  Graph<double> g;
  auto w = g.leaf(vec({1, 2}), true);
  auto z = g.leaf(vec({5, 6, 7}), true);
  auto grads = g.backward(g.dot(w, g.leaf(vec({3, 4}))));
  CHECK(grads.at(z).data == std::vector<double>{0, 0, 0});
  CHECK(grads.at(w).data == std::vector<double>{3, 4});
}

TEST_CASE("shape mismatches are rejected with both shapes named") {
  Graph<double> g;
  auto a = g.leaf(Array<double>({2, 3}, 1.0));
  auto b = g.leaf(Array<double>({4, 2}, 1.0));
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2x3]"), hldet::ShapeError);
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("[4x2]"), hldet::ShapeError);
}

TEST_CASE("log rejects non-positive input") {
  Graph<double> g;
  CHECK_THROWS_AS(g.log(g.leaf(vec({1.0, 0.0}))), hldet::NumericError);
  CHECK_THROWS_AS(g.log(g.leaf(vec({-3.0}))), hldet::NumericError);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Graph<double> g;
  auto w = g.leaf(vec({1, 2}), true);
  CHECK_THROWS_AS(g.backward(g.relu(w)), hldet::ShapeError);
}

TEST_CASE("conv1d matches hand computation, stride 1 and 2") {
  Graph<double> g;
  auto x = g.leaf(Array<double>({1, 4}, {1, 2, 3, 4}));
  auto w = g.leaf(Array<double>({1, 1, 3}, {1, 0, -1}));
  auto b = g.leaf(vec({0.5}));
  auto y1 = g.conv1d(x, w, b, 1);
  CHECK(g.value(y1).shape == std::vector<std::int64_t>{1, 4});
  CHECK(g.value(y1).data == std::vector<double>{-1.5, -1.5, -1.5, 3.5});
  auto y2 = g.conv1d(x, w, b, 2);
  CHECK(g.value(y2).shape == std::vector<std::int64_t>{1, 2});
  CHECK(g.value(y2).data == std::vector<double>{-1.5, -1.5});
}

TEST_CASE("matmul, transpose, concat, mean, upsample, pad, crop values") {
  Graph<double> g;
  auto a = g.leaf(Array<double>({2, 2}, {1, 2, 3, 4}));
  auto v = g.leaf(Array<double>({2, 1}, {5, 6}));
  CHECK(g.value(g.matmul(a, v)).data == std::vector<double>{17, 39});
  CHECK(g.value(g.transpose(a)).data == std::vector<double>{1, 3, 2, 4});
  auto c = g.concat(a, a, 1);
  CHECK(g.value(c).shape == std::vector<std::int64_t>{2, 4});
  CHECK(g.value(c).data == std::vector<double>{1, 2, 1, 2, 3, 4, 3, 4});
  CHECK(g.value(g.mean(a, 1)).data == std::vector<double>{1.5, 3.5});
  CHECK(g.value(g.mean(a, 0)).data == std::vector<double>{2, 3});
  auto up = g.upsample2(v);
  CHECK(g.value(up).data == std::vector<double>{5, 5, 6, 6});
  auto pd = g.pad_edge_right(a, 4);
  CHECK(g.value(pd).data == std::vector<double>{1, 2, 2, 2, 3, 4, 4, 4});
  auto cr = g.crop_right(a, 1);
  CHECK(g.value(cr).data == std::vector<double>{1, 3});
}

TEST_CASE("col_cosine matches scalar math and applies the zero-norm policy") {
  Graph<double> g;
  // columns: a0=(1,0), a1=(0,0); b0=(1,0), b1=(1,1)
  auto a = g.leaf(Array<double>({2, 2}, {1, 0, 0, 0}), true);
  auto b = g.leaf(Array<double>({2, 2}, {1, 1, 0, 1}));
  auto c = g.col_cosine(a, b);
  const auto& cv = g.value(c);
  CHECK(cv.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cv.at(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cv.at(1, 0) == 0.0);  // zero-norm column
  CHECK(cv.at(1, 1) == 0.0);
  CHECK(g.degenerate_cosines() == 2);
  // Gradient through the zero column stays zero.
  auto loss = g.mean(g.mean(c, 0), 0);
  auto grads = g.backward(loss);
  CHECK(grads.at(a).at(0, 1) == 0.0);
  CHECK(grads.at(a).at(1, 1) == 0.0);
}

TEST_CASE("analytic gradients match central finite differences on random graphs") {
  RandomGraphGen gen(20260809);
  int checked_elems = 0;
  for (int n = 0; n < 100; ++n) {
    auto c = gen.next();
    auto [g, ids] = c.program.run<double>(c.leaf_values);
    const auto loss_id = ids[c.program.result];
    REQUIRE(g.value(loss_id).rank() == 0);
    auto grads = g.backward(loss_id);

    for (std::size_t li = 0; li < c.program.leaves.size(); ++li) {
      const auto& instr = c.program.instrs[static_cast<std::size_t>(c.program.leaves[li])];
      if (!instr.requires_grad) continue;
      const auto leaf_node = ids[c.program.leaves[li]];
      const auto& analytic = grads.at(leaf_node);
      for (std::size_t e = 0; e < c.leaf_values[li].data.size(); ++e) {
        auto f = [&](double x) {
          auto vals = c.leaf_values;
          vals[li].data[e] = x;
          auto [g2, ids2] = c.program.run<double>(vals);
          return g2.value(ids2[c.program.result]).data[0];
        };
        const double h = 1e-3;
        const double x0 = c.leaf_values[li].data[e];
        const double fd = (f(x0 + h) - f(x0 - h)) / (2 * h);
        CAPTURE(n);
        CAPTURE(li);
        CAPTURE(e);
        REQUIRE(rel_err(analytic.data[e], fd) < 1e-4);
        ++checked_elems;
      }
    }
  }
  CHECK(checked_elems > 500);
}

TEST_CASE("backward is deterministic: identical graphs give bit-identical grads") {
  RandomGraphGen gen(99);
  auto c = gen.next();
  auto [g1, ids1] = c.program.run<double>(c.leaf_values);
  auto [g2, ids2] = c.program.run<double>(c.leaf_values);
  auto gr1 = g1.backward(ids1[c.program.result]);
  auto gr2 = g2.backward(ids2[c.program.result]);
  REQUIRE(gr1.size() == gr2.size());
  for (const auto& [id, a] : gr1) {
    const auto& b = gr2.at(id);
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
  }
}

TEST_CASE("float instantiation works end to end") {
  Graph<float> g;
  auto w = g.leaf(Array<float>({3}, {1.f, -2.f, 3.f}), true);
  auto loss = g.mean(g.relu(w), 0);
  auto grads = g.backward(loss);
  CHECK(grads.at(w).data == std::vector<float>{1.f / 3.f, 0.f, 1.f / 3.f});
}
