// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention-guided preference scoring. For each frame embedding s_i the
// user-specific preference is the softmax(lambda * cosine) weighted sum of
// history embeddings; it is fused with the learnable generic preference by a
// second two-way cosine softmax; the highlight degree is the unnormalized dot
// l_i = s_i . p_c_i and the non-highlight degree b_i = s_i . u. Strategy
// variants swap the user-specific term for nothing, the raw mean of history,
// or drop the fusion entirely.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hldet/model.hpp"

namespace hldet {

enum class AttentionStrategy {
  kFull,
  kGenericOnly,
  kUserOnly,
  kMeanHistory,
  kMeanHistoryPlusGeneric,
};

inline std::string to_string(AttentionStrategy s) {
  switch (s) {
    case AttentionStrategy::kFull: return "full";
    case AttentionStrategy::kGenericOnly: return "generic_only";
    case AttentionStrategy::kUserOnly: return "user_only";
    case AttentionStrategy::kMeanHistory: return "mean_history";
    case AttentionStrategy::kMeanHistoryPlusGeneric: return "mean_history_plus_generic";
  }
  return "full";
}

inline AttentionStrategy strategy_from_string(const std::string& s) {
  if (s == "full") return AttentionStrategy::kFull;
  if (s == "generic_only") return AttentionStrategy::kGenericOnly;
  if (s == "user_only") return AttentionStrategy::kUserOnly;
  if (s == "mean_history") return AttentionStrategy::kMeanHistory;
  if (s == "mean_history_plus_generic") return AttentionStrategy::kMeanHistoryPlusGeneric;
  throw std::invalid_argument("unknown attention strategy \"" + s + "\"");
}

inline bool strategy_uses_attention(AttentionStrategy s) {
  return s == AttentionStrategy::kFull || s == AttentionStrategy::kUserOnly;
}

inline bool strategy_requires_history(AttentionStrategy s) {
  return s == AttentionStrategy::kUserOnly || s == AttentionStrategy::kMeanHistory;
}

// ---------------------------------------------------------------------------
// Scalar-path operations (f64), used for traces, explanations and tests.

// Cosine similarity; a zero-norm operand yields 0 (degenerate-input policy)
// and sets *degenerate when provided.
inline double cosine(std::span<const double> x, std::span<const double> y,
                     bool* degenerate = nullptr) {
  if (x.size() != y.size())
    throw ShapeError("cosine: length mismatch " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return dot / (std::sqrt(nx) * std::sqrt(ny));
}

// Max-subtracted softmax of lambda-scaled scores.
inline std::vector<double> sharp_softmax(std::span<const double> scores, double lambda) {
  std::vector<double> out(scores.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : scores) mx = std::max(mx, lambda * v);
  double sum = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(lambda * scores[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

struct UserPreference {
  std::vector<double> embedding;  // p_u, length d
  std::vector<double> weights;    // attention over history, length n
};

inline UserPreference user_preference(std::span<const double> s,
                                      const std::vector<std::vector<double>>& history,
                                      double lambda) {
  if (history.empty()) throw std::invalid_argument("user_preference: no history");
  std::vector<double> cosines(history.size());
  for (std::size_t j = 0; j < history.size(); ++j) cosines[j] = cosine(s, history[j]);
  UserPreference r;
  r.weights = sharp_softmax(cosines, lambda);
  r.embedding.assign(s.size(), 0.0);
  for (std::size_t j = 0; j < history.size(); ++j)  // ascending index, reproducible
    for (std::size_t k = 0; k < s.size(); ++k)
      r.embedding[k] += history[j][k] * r.weights[j];
  return r;
}

struct ComprehensivePreference {
  std::vector<double> embedding;  // p_c, length d
  double qc1 = 0, qc2 = 1;        // unnormalized fusion weights
  double qc1_norm = 0, qc2_norm = 1;
};

// p_c = (p_u*q1 + g*q2) / (q1 + q2) with q = exp(lambda * cosine). A null
// p_u (no history) falls back to p_c = g with weights reported as (0, 1).
inline ComprehensivePreference comprehensive_preference(std::span<const double> s,
                                                        const std::vector<double>* p_u,
                                                        std::span<const double> g,
                                                        double lambda) {
  ComprehensivePreference r;
  if (p_u == nullptr) {
    r.embedding.assign(g.begin(), g.end());
    return r;
  }
  const double c1 = cosine(s, *p_u);
  const double c2 = cosine(s, g);
  const auto w = sharp_softmax(std::vector<double>{c1, c2}, lambda);
  r.qc1 = std::exp(lambda * c1);
  r.qc2 = std::exp(lambda * c2);
  r.qc1_norm = w[0];
  r.qc2_norm = w[1];
  r.embedding.resize(s.size());
  for (std::size_t k = 0; k < s.size(); ++k)
    r.embedding[k] = (*p_u)[k] * w[0] + g[k] * w[1];
  return r;
}

// ---------------------------------------------------------------------------
// Graph path.

template <typename T>
struct ScoreNodes {
  typename Graph<T>::Id highlight = -1;     // l, {T}
  typename Graph<T>::Id nonhighlight = -1;  // b, {T}
  typename Graph<T>::Id attention = -1;     // a_u, {T,n}; -1 when unused
  typename Graph<T>::Id fusion = -1;        // normalized fusion weights {T,2}; -1 when unused
  typename Graph<T>::Id user_cos = -1;      // cos(s_i, p_u_i), {T}
  typename Graph<T>::Id generic_cos = -1;   // cos(s_i, g), {T}
};

// Builds scoring nodes on top of an encoded video S {d,T}. history is a
// {d,n} node of encoded history embeddings, or -1 when the user has none.
template <typename T>
ScoreNodes<T> build_scores(Graph<T>& g, typename Graph<T>::Id S, typename Graph<T>::Id history,
                           typename Graph<T>::Id generic, typename Graph<T>::Id nonhighlight,
                           AttentionStrategy strategy, double lambda) {
  using Id = typename Graph<T>::Id;
  const std::int64_t d = g.value(S).shape[0];
  const std::int64_t t = g.value(S).shape[1];
  const bool have_history = history >= 0 && g.value(history).shape[1] >= 1;
  if (!have_history && strategy_requires_history(strategy))
    throw std::invalid_argument("strategy " + to_string(strategy) + " requires history");

  ScoreNodes<T> out;
  out.nonhighlight = g.reshape(g.matmul(g.reshape(nonhighlight, {1, d}), S), {t});

  // With no history the comprehensive preference falls back to the generic
  // embedding; built identically to kGenericOnly so the scores match exactly.
  const AttentionStrategy effective =
      have_history ? strategy : AttentionStrategy::kGenericOnly;

  if (effective == AttentionStrategy::kGenericOnly) {
    out.highlight = g.reshape(g.matmul(g.reshape(generic, {1, d}), S), {t});
    return out;
  }

  // User-side preference matrix P_u {d,T}.
  Id p_user = -1;
  if (strategy_uses_attention(effective)) {
    Id cos_sh = g.col_cosine(S, history);  // {T,n}
    out.attention = g.softmax(g.scalar_mul(cos_sh, static_cast<T>(lambda)), 1);
    p_user = g.matmul(history, g.transpose(out.attention));  // {d,n}{n,T} -> {d,T}
  } else {
    Id hbar = g.reshape(g.mean(history, 1), {d, 1});
    p_user = g.matmul(hbar, g.leaf(Array<T>({1, t}, T(1))));  // broadcast {d,T}
  }

  if (effective == AttentionStrategy::kUserOnly ||
      effective == AttentionStrategy::kMeanHistory) {
    out.highlight = g.scalar_mul(g.mean(g.mul(S, p_user), 0), static_cast<T>(d));
    return out;
  }

  // Fusion of p_u with g by a two-way cosine softmax.
  out.user_cos = g.pair_cosine(S, p_user);                               // {T}
  out.generic_cos = g.reshape(g.col_cosine(S, g.reshape(generic, {d, 1})), {t});
  Id logits = g.concat(g.reshape(g.scalar_mul(out.user_cos, static_cast<T>(lambda)), {t, 1}),
                       g.reshape(g.scalar_mul(out.generic_cos, static_cast<T>(lambda)), {t, 1}),
                       1);          // {T,2}
  out.fusion = g.softmax(logits, 1);
  Id w_user = g.crop_right(out.fusion, 1);                               // {T,1}
  Id w_generic = g.sub(g.leaf(Array<T>({t, 1}, T(1))), w_user);
  Id user_term = g.mul(p_user, g.matmul(g.leaf(Array<T>({d, 1}, T(1))), g.transpose(w_user)));
  Id generic_term = g.matmul(g.reshape(generic, {d, 1}), g.transpose(w_generic));
  Id p_comp = g.add(user_term, generic_term);
  out.highlight = g.scalar_mul(g.mean(g.mul(S, p_comp), 0), static_cast<T>(d));
  return out;
}

// ---------------------------------------------------------------------------
// Whole-video scoring with explanation trace.

struct FrameTrace {
  double highlight = 0;              // l_i
  double nonhighlight = 0;           // b_i
  std::vector<double> attention;     // a_u over history; empty when unused
  double qc1 = 0, qc2 = 1;           // unnormalized fusion weights
  double qc1_norm = 0, qc2_norm = 1;
};

struct PredictionTrace {
  std::vector<FrameTrace> frames;
  std::int64_t n_history = 0;
  std::int64_t degenerate_cosines = 0;
};

template <typename T>
Array<T> history_columns(const std::vector<std::vector<T>>& embeds, std::int64_t d) {
  const std::int64_t n = static_cast<std::int64_t>(embeds.size());
  Array<T> h({d, n});
  for (std::int64_t j = 0; j < n; ++j)
    for (std::int64_t r = 0; r < d; ++r) h.at(r, j) = embeds[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
  return h;
}

// Scores every frame of an encoded video against encoded history embeddings.
template <typename T>
PredictionTrace score_frames(const ModelParams<T>& params, AttentionStrategy strategy,
                             const Array<T>& S, const std::vector<std::vector<T>>& history,
                             double lambda) {
  if (S.rank() != 2 || S.shape[0] != params.d())
    throw ShapeError("score_frames: S " + shape_str(S.shape) + " does not match d=" +
                     std::to_string(params.d()));
  Graph<T> g;
  const auto s_node = g.leaf(S);
  typename Graph<T>::Id h_node = -1;
  if (!history.empty()) h_node = g.leaf(history_columns(history, params.d()));
  const auto g_node = g.leaf(params.generic);
  const auto u_node = g.leaf(params.nonhighlight);
  const auto nodes = build_scores(g, s_node, h_node, g_node, u_node, strategy, lambda);

  const std::int64_t t = S.shape[1];
  const std::int64_t n = static_cast<std::int64_t>(history.size());
  PredictionTrace trace;
  trace.n_history = n;
  trace.frames.resize(static_cast<std::size_t>(t));
  const auto& l = g.value(nodes.highlight).data;
  const auto& b = g.value(nodes.nonhighlight).data;
  const bool fused = nodes.fusion >= 0;
  const bool user_side =
      strategy != AttentionStrategy::kGenericOnly && n >= 1;
  for (std::int64_t i = 0; i < t; ++i) {
    FrameTrace& f = trace.frames[static_cast<std::size_t>(i)];
    f.highlight = static_cast<double>(l[static_cast<std::size_t>(i)]);
    f.nonhighlight = static_cast<double>(b[static_cast<std::size_t>(i)]);
    if (nodes.attention >= 0) {
      const auto& a = g.value(nodes.attention);
      f.attention.resize(static_cast<std::size_t>(n));
      for (std::int64_t j = 0; j < n; ++j)
        f.attention[static_cast<std::size_t>(j)] = static_cast<double>(a.at(i, j));
    }
    if (fused) {
      const auto& w = g.value(nodes.fusion);
      f.qc1 = std::exp(lambda * static_cast<double>(g.value(nodes.user_cos).data[static_cast<std::size_t>(i)]));
      f.qc2 = std::exp(lambda * static_cast<double>(g.value(nodes.generic_cos).data[static_cast<std::size_t>(i)]));
      f.qc1_norm = static_cast<double>(w.at(i, 0));
      f.qc2_norm = static_cast<double>(w.at(i, 1));
    } else if (user_side) {
      f.qc1 = 1;
      f.qc2 = 0;
      f.qc1_norm = 1;
      f.qc2_norm = 0;
    }  // else: generic fallback keeps the (0, 1) defaults
  }
  trace.degenerate_cosines = g.degenerate_cosines();
  return trace;
}

// Full pipeline for one video: encode, embed history, score.
template <typename T>
PredictionTrace predict_video(const ModelParams<T>& params, AttentionStrategy strategy,
                              double lambda, const FeatureMatrix& video,
                              const std::vector<FeatureMatrix>& history,
                              std::optional<std::int64_t> max_history) {
  Array<T> s;
  {
    Graph<T> g;
    auto nodes = make_encoder_nodes(g, params.encoder, false);
    s = g.value(build_encoder(g, nodes, g.leaf(to_channel_major<T>(video))));
  }
  const auto embeds = encode_history(params, history, max_history);
  return score_frames(params, strategy, s, embeds, lambda);
}

}  // namespace hldet
