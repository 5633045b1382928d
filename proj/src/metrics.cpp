// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
#include "hldet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace hldet {

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("average_precision: scores and labels differ in length");
  std::int64_t n_pos = 0;
  for (std::uint8_t v : labels) n_pos += v ? 1 : 0;
  if (n_pos == 0) return std::nullopt;
  std::vector<std::int64_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;  // ranking key is (-score, index)
  });
  double ap = 0;
  std::int64_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[static_cast<std::size_t>(order[rank])]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(n_pos);
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["map"] = r.map;
  j["n_videos"] = r.n_videos;
  j["n_excluded"] = r.n_excluded;
  j["videos"] = nlohmann::json::array();
  for (const auto& v : r.videos) j["videos"].push_back({{"id", v.id}, {"ap", v.ap}});
  return j;
}

std::string trace_to_jsonl(const PredictionTrace& trace) {
  std::ostringstream os;
  for (std::size_t i = 0; i < trace.frames.size(); ++i) {
    const FrameTrace& f = trace.frames[i];
    nlohmann::json j;
    j["i"] = i;
    j["l"] = f.highlight;
    j["b"] = f.nonhighlight;
    j["a"] = f.attention;
    j["qc1"] = f.qc1;
    j["qc2"] = f.qc2;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string explain_to_jsonl(std::span<const ExplainFrame> frames) {
  std::ostringstream os;
  for (const ExplainFrame& e : frames) {
    nlohmann::json j;
    j["i"] = e.frame;
    j["l"] = e.highlight;
    j["b"] = e.nonhighlight;
    j["top"] = nlohmann::json::array();
    for (const auto& [idx, w] : e.top) j["top"].push_back({{"j", idx}, {"w", w}});
    j["qc1"] = e.qc1;
    j["qc2"] = e.qc2;
    j["qc1_norm"] = e.qc1_norm;
    j["qc2_norm"] = e.qc2_norm;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace hldet
