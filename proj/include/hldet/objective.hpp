// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bi-directional contrastive loss over one training segment. With l~ and b~
// the softmax-normalized highlight/non-highlight scores, Omega the labeled
// positives and Mho the K hardest unlabeled frames by raw b (K = k_factor *
// |Omega|, clamped to the unlabeled count):
//
//   L = sum_{y in Omega} log(l~_y + b~_y) + sum_{x in Mho} log(l~_x + b~_x)
//       - (sum_{y in Omega} l~_y + sum_{x in Mho} b~_x)
//
// minimized. Mined indices are constants for differentiation; gradients flow
// through the l~/b~ values only.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "hldet/graph.hpp"

namespace hldet {

inline constexpr double kLossLogFloor = 1e-12;
inline constexpr std::int64_t kDefaultKFactor = 5;

struct LossReport {
  double loss = 0;
  std::vector<std::int64_t> omega;  // labeled positive indices, ascending
  std::vector<std::int64_t> mined;  // hard negatives in mining (rank) order
  std::vector<double> l_rel, b_rel;
};

// Softmax-normalized "relative degree" distributions of Eq-style scores over
// the frames of one segment.
inline std::pair<std::vector<double>, std::vector<double>> relative_degrees(
    std::span<const double> l, std::span<const double> b) {
  if (l.size() != b.size() || l.empty())
    throw std::invalid_argument("relative_degrees: mismatched or empty score vectors");
  auto norm = [](std::span<const double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    std::vector<double> out(v.size());
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out[i] = std::exp(v[i] - mx);
      sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
  };
  return {norm(l), norm(b)};
}

// Top-K unlabeled frames by non-highlight score, K = k_factor * |Omega|
// clamped to the number of unlabeled frames. Ties break toward the lower
// frame index; the result is in mining order (descending b).
inline std::vector<std::int64_t> mine_hard_negatives(std::span<const double> b,
                                                     std::span<const std::uint8_t> labels,
                                                     std::int64_t k_factor = kDefaultKFactor) {
  if (b.size() != labels.size())
    throw std::invalid_argument("mine_hard_negatives: scores and labels differ in length");
  std::int64_t n_pos = 0;
  std::vector<std::int64_t> unlabeled;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i])
      ++n_pos;
    else
      unlabeled.push_back(static_cast<std::int64_t>(i));
  }
  if (n_pos == 0)
    throw std::invalid_argument("mine_hard_negatives: segment has no positive frame");
  const std::int64_t k =
      std::min<std::int64_t>(k_factor * n_pos, static_cast<std::int64_t>(unlabeled.size()));
  std::stable_sort(unlabeled.begin(), unlabeled.end(), [&](std::int64_t x, std::int64_t y) {
    return b[static_cast<std::size_t>(x)] > b[static_cast<std::size_t>(y)];
  });
  unlabeled.resize(static_cast<std::size_t>(k));
  return unlabeled;
}

inline LossReport bidirectional_contrastive_loss(std::span<const double> l,
                                                 std::span<const double> b,
                                                 std::span<const std::uint8_t> labels,
                                                 std::int64_t k_factor = kDefaultKFactor) {
  if (l.size() != b.size() || l.size() != labels.size())
    throw std::invalid_argument("loss: l, b and labels must have equal length");
  if (l.size() < 2) throw std::invalid_argument("loss: segment must have at least 2 frames");
  LossReport r;
  r.mined = mine_hard_negatives(b, labels, k_factor);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) r.omega.push_back(static_cast<std::int64_t>(i));
  std::tie(r.l_rel, r.b_rel) = relative_degrees(l, b);

  std::vector<std::uint8_t> in_mined(l.size(), 0);
  for (std::int64_t x : r.mined) in_mined[static_cast<std::size_t>(x)] = 1;
  double log_terms = 0, pull_terms = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const bool pos = labels[i] != 0;
    if (!pos && !in_mined[i]) continue;
    log_terms += std::log(std::max(r.l_rel[i] + r.b_rel[i], kLossLogFloor));
    pull_terms += pos ? r.l_rel[i] : r.b_rel[i];
  }
  r.loss = log_terms - pull_terms;
  return r;
}

// Graph route; mined indices are selected from the forward value of b and
// then fixed as constants. The same index sets are reported back.
template <typename T>
struct LossNodes {
  typename Graph<T>::Id loss = -1;
  typename Graph<T>::Id l_rel = -1, b_rel = -1;
  std::vector<std::int64_t> omega, mined;
};

template <typename T>
LossNodes<T> build_loss(Graph<T>& g, typename Graph<T>::Id l, typename Graph<T>::Id b,
                        std::span<const std::uint8_t> labels,
                        std::int64_t k_factor = kDefaultKFactor) {
  using Id = typename Graph<T>::Id;
  const Array<T>& lv = g.value(l);
  const std::int64_t t = lv.shape[0];
  if (lv.rank() != 1 || g.value(b).shape != lv.shape)
    throw ShapeError("build_loss: l and b must be equal-length vectors");
  if (static_cast<std::size_t>(t) != labels.size())
    throw std::invalid_argument("build_loss: labels length mismatch");
  if (t < 2) throw std::invalid_argument("build_loss: segment must have at least 2 frames");

  std::vector<double> b_vals(g.value(b).data.begin(), g.value(b).data.end());
  LossNodes<T> out;
  out.mined = mine_hard_negatives(b_vals, labels, k_factor);
  Array<T> mask_pos({t});
  Array<T> mask_mined({t});
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) {
      out.omega.push_back(static_cast<std::int64_t>(i));
      mask_pos.data[i] = T(1);
    }
  for (std::int64_t x : out.mined) mask_mined.data[static_cast<std::size_t>(x)] = T(1);

  out.l_rel = g.softmax(l, 0);
  out.b_rel = g.softmax(b, 0);
  Id m_pos = g.leaf(std::move(mask_pos));
  Id m_mined = g.leaf(std::move(mask_mined));
  auto sum = [&](Id v) { return g.scalar_mul(g.mean(v, 0), static_cast<T>(t)); };
  Id log_sum = g.log(g.max_scalar(g.add(out.l_rel, out.b_rel), static_cast<T>(kLossLogFloor)));
  Id log_terms = sum(g.mul(g.add(m_pos, m_mined), log_sum));
  Id pull = g.add(sum(g.mul(m_pos, out.l_rel)), sum(g.mul(m_mined, out.b_rel)));
  out.loss = g.sub(log_terms, pull);
  return out;
}

}  // namespace hldet
