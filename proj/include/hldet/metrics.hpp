// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Ranking evaluation: per-video average precision with a deterministic
// (-score, index) ordering, corpus mAP treating videos separately, and
// attention-based explanations of individual frames.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hldet/featureio.hpp"
#include "hldet/parallel.hpp"
#include "hldet/preference.hpp"

namespace hldet {

// AP of the frame ranking: frames sorted by descending score, ties broken by
// ascending frame index; mean over positives of precision at each positive's
// rank. Returns nullopt when the video has no positive label (excluded).
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels);

struct VideoAP {
  std::string id;
  double ap = 0;
};

struct EvalReport {
  double map = 0;
  std::int64_t n_videos = 0;
  std::int64_t n_excluded = 0;
  std::vector<VideoAP> videos;
};

nlohmann::json eval_report_to_json(const EvalReport& r);

struct ExplainFrame {
  std::int64_t frame = 0;
  double highlight = 0, nonhighlight = 0;
  std::vector<std::pair<std::int64_t, double>> top;  // (history index, weight)
  double qc1 = 0, qc2 = 1, qc1_norm = 0, qc2_norm = 1;
};

std::string explain_to_jsonl(std::span<const ExplainFrame> frames);
std::string trace_to_jsonl(const PredictionTrace& trace);

// Scores every video of every user with the user's (optionally capped)
// history in one whole-video pass and aggregates per-video AP into mAP.
// Videos without positives are excluded from the mean and counted.
template <typename T>
EvalReport evaluate(const ModelParams<T>& model, AttentionStrategy strategy, double lambda,
                    std::optional<std::int64_t> max_history, const CorpusManifest& manifest,
                    int threads = 0) {
  if (model.d() != manifest.d)
    throw ManifestError("checkpoint d=" + std::to_string(model.d()) +
                        " does not match corpus d=" + std::to_string(manifest.d));
  struct Slot {
    std::string id;
    std::optional<double> ap;
  };
  std::vector<std::vector<Slot>> per_user(manifest.users.size());
  parallel_for(static_cast<std::int64_t>(manifest.users.size()), threads, [&](std::int64_t ui) {
    const UserRecord rec = load_user(manifest, manifest.users[static_cast<std::size_t>(ui)]);
    const auto embeds = encode_history(model, rec.history, max_history);
    auto& slots = per_user[static_cast<std::size_t>(ui)];
    for (std::size_t vi = 0; vi < rec.videos.size(); ++vi) {
      const AnnotatedVideo& video = rec.videos[vi];
      Array<T> s;
      {
        Graph<T> g;
        auto nodes = make_encoder_nodes(g, model.encoder, false);
        s = g.value(build_encoder(g, nodes, g.leaf(to_channel_major<T>(video.features))));
      }
      const PredictionTrace trace = score_frames(model, strategy, s, embeds, lambda);
      std::vector<double> scores(trace.frames.size());
      for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = trace.frames[i].highlight;
      slots.push_back(
          {rec.user_id + "/v" + std::to_string(vi), average_precision(scores, video.labels)});
    }
  });
  EvalReport report;
  double sum = 0;
  for (const auto& slots : per_user)
    for (const auto& s : slots) {
      ++report.n_videos;
      if (s.ap.has_value()) {
        report.videos.push_back({s.id, *s.ap});
        sum += *s.ap;
      } else {
        ++report.n_excluded;
      }
    }
  report.map = report.videos.empty() ? 0.0 : sum / static_cast<double>(report.videos.size());
  return report;
}

// Per-frame explanation: the top_m most attended history segments with their
// weights, plus the normalized generic/user fusion weights.
template <typename T>
std::vector<ExplainFrame> explain(const ModelParams<T>& model, AttentionStrategy strategy,
                                  double lambda, std::optional<std::int64_t> max_history,
                                  const FeatureMatrix& video,
                                  const std::vector<FeatureMatrix>& history,
                                  std::span<const std::int64_t> frames, std::int64_t top_m = 3) {
  const PredictionTrace trace =
      predict_video(model, strategy, lambda, video, history, max_history);
  std::vector<std::int64_t> wanted(frames.begin(), frames.end());
  if (wanted.empty())
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(trace.frames.size()); ++i)
      wanted.push_back(i);
  std::vector<ExplainFrame> out;
  for (std::int64_t i : wanted) {
    if (i < 0 || i >= static_cast<std::int64_t>(trace.frames.size()))
      throw std::invalid_argument("explain: frame " + std::to_string(i) + " out of range");
    const FrameTrace& f = trace.frames[static_cast<std::size_t>(i)];
    ExplainFrame e;
    e.frame = i;
    e.highlight = f.highlight;
    e.nonhighlight = f.nonhighlight;
    e.qc1 = f.qc1;
    e.qc2 = f.qc2;
    e.qc1_norm = f.qc1_norm;
    e.qc2_norm = f.qc2_norm;
    std::vector<std::int64_t> order(f.attention.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<std::int64_t>(j);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return f.attention[static_cast<std::size_t>(a)] > f.attention[static_cast<std::size_t>(b)];
    });
    const std::size_t keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_m));
    for (std::size_t k = 0; k < keep; ++k)
      e.top.emplace_back(order[k], f.attention[static_cast<std::size_t>(order[k])]);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace hldet
