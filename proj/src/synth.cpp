// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
#include "hldet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hldet/featureio.hpp"
#include "hldet/rng.hpp"

namespace hldet {

namespace {

constexpr std::uint64_t kTagTopics = 0x70;
constexpr std::uint64_t kTagUser = 0x71;
constexpr std::uint64_t kTagVideo = 0x72;

// Fraction of videos that receive one unlabeled near-duplicate run, and the
// noise multiplier that keeps those runs visibly fuzzier than real positives.
constexpr double kNearDupVideoFraction = 0.25;
constexpr double kNearDupNoiseFactor = 4.0;

std::vector<double> unit_gaussian(Rng& rng, std::int64_t d) {
  std::vector<double> v(static_cast<std::size_t>(d));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

void write_frame(FeatureMatrix& m, std::int64_t t, const std::vector<double>& center,
                 double sigma, Rng& rng) {
  std::vector<double> f(center);
  double norm = 0.0;
  for (double& x : f) {
    x += sigma * rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (std::int64_t r = 0; r < m.d; ++r)
    m.at(r, t) = static_cast<float>(f[static_cast<std::size_t>(r)] / norm);
}

struct Run {
  std::int64_t begin, len;
};

// Non-overlapping placement by rejection, falling back to the first free gap.
std::optional<Run> place_run(std::vector<std::uint8_t>& taken, std::int64_t len, Rng& rng) {
  const std::int64_t t_total = static_cast<std::int64_t>(taken.size());
  if (len > t_total) len = t_total;
  auto free_at = [&](std::int64_t b, std::int64_t l) {
    for (std::int64_t i = b; i < b + l; ++i)
      if (taken[static_cast<std::size_t>(i)]) return false;
    return true;
  };
  for (int attempt = 0; attempt < 32; ++attempt) {
    const std::int64_t b = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(t_total - len + 1)));
    if (free_at(b, len)) {
      std::fill(taken.begin() + b, taken.begin() + b + len, std::uint8_t(1));
      return Run{b, len};
    }
  }
  for (std::int64_t b = 0; b + len <= t_total; ++b) {
    if (free_at(b, len)) {
      std::fill(taken.begin() + b, taken.begin() + b + len, std::uint8_t(1));
      return Run{b, len};
    }
  }
  return std::nullopt;
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("seed", c.seed);
  get("d", c.d);
  get("num_topics", c.num_topics);
  get("topics_per_user_min", c.topics_per_user_min);
  get("topics_per_user_max", c.topics_per_user_max);
  get("users_train", c.users_train);
  get("users_val", c.users_val);
  get("users_test", c.users_test);
  get("videos_per_user", c.videos_per_user);
  get("frames_per_video", c.frames_per_video);
  get("history_segments_per_user", c.history_segments_per_user);
  get("frames_per_segment", c.frames_per_segment);
  get("noise_sigma", c.noise_sigma);
  get("positive_fraction", c.positive_fraction);
  return c;
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return nlohmann::json{{"seed", c.seed},
                        {"d", c.d},
                        {"num_topics", c.num_topics},
                        {"topics_per_user_min", c.topics_per_user_min},
                        {"topics_per_user_max", c.topics_per_user_max},
                        {"users_train", c.users_train},
                        {"users_val", c.users_val},
                        {"users_test", c.users_test},
                        {"videos_per_user", c.videos_per_user},
                        {"frames_per_video", c.frames_per_video},
                        {"history_segments_per_user", c.history_segments_per_user},
                        {"frames_per_segment", c.frames_per_segment},
                        {"noise_sigma", c.noise_sigma},
                        {"positive_fraction", c.positive_fraction}};
}

void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.d < 2) throw std::invalid_argument("synth: d must be >= 2, unit vectors degenerate");
  if (cfg.num_topics < 1 || cfg.topics_per_user_min < 1 ||
      cfg.topics_per_user_max < cfg.topics_per_user_min ||
      cfg.topics_per_user_max > cfg.num_topics)
    throw std::invalid_argument("synth: invalid topics_per_user range");
  if (!(cfg.positive_fraction > 0.0 && cfg.positive_fraction <= 0.5))
    throw std::invalid_argument("synth: positive_fraction must be in (0, 0.5]");
  if (cfg.frames_per_video < 1 || cfg.videos_per_user < 1 || cfg.frames_per_segment < 1 ||
      cfg.history_segments_per_user < 0 || cfg.users_train < 1)
    throw std::invalid_argument("synth: non-positive corpus extent");

  std::filesystem::create_directories(out_dir);

  std::vector<std::vector<double>> topics;
  {
    for (std::int64_t i = 0; i < cfg.num_topics; ++i) {
      Rng rng(mix_seed(cfg.seed, kTagTopics, static_cast<std::uint64_t>(i)));
      topics.push_back(unit_gaussian(rng, cfg.d));
    }
  }

  const std::vector<std::pair<std::string, std::int64_t>> splits = {
      {"train", cfg.users_train}, {"val", cfg.users_val}, {"test", cfg.users_test}};

  for (std::size_t si = 0; si < splits.size(); ++si) {
    const auto& [split, n_users] = splits[si];
    CorpusManifest manifest;
    manifest.d = cfg.d;
    manifest.split = split;
    manifest.base_dir = out_dir;

    for (std::int64_t ui = 0; ui < n_users; ++ui) {
      Rng user_rng(mix_seed(cfg.seed, kTagUser, si, static_cast<std::uint64_t>(ui)));
      const std::int64_t n_topics =
          cfg.topics_per_user_min +
          static_cast<std::int64_t>(user_rng.below(
              static_cast<std::uint64_t>(cfg.topics_per_user_max - cfg.topics_per_user_min + 1)));
      // distinct topic ids via partial Fisher-Yates
      std::vector<std::int64_t> pool(static_cast<std::size_t>(cfg.num_topics));
      for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<std::int64_t>(i);
      for (std::int64_t i = 0; i < n_topics; ++i) {
        const std::uint64_t j =
            i + user_rng.below(static_cast<std::uint64_t>(cfg.num_topics - i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      }
      std::vector<std::int64_t> user_topics(pool.begin(), pool.begin() + n_topics);

      char id_buf[16];
      std::snprintf(id_buf, sizeof id_buf, "u%04lld", static_cast<long long>(ui));
      UserEntry entry;
      entry.id = id_buf;
      const std::string rel_dir = "users/" + split + "_" + entry.id;
      std::filesystem::create_directories(out_dir / rel_dir);

      for (std::int64_t h = 0; h < cfg.history_segments_per_user; ++h) {
        const auto& center =
            topics[static_cast<std::size_t>(user_topics[static_cast<std::size_t>(h % n_topics)])];
        FeatureMatrix seg;
        seg.d = cfg.d;
        seg.frames = cfg.frames_per_segment;
        seg.values.resize(static_cast<std::size_t>(seg.d * seg.frames));
        for (std::int64_t t = 0; t < seg.frames; ++t)
          write_frame(seg, t, center, cfg.noise_sigma, user_rng);
        const std::string rel = rel_dir + "/h" + std::to_string(h) + ".prft";
        write_feature_container(seg, out_dir / rel);
        entry.history.push_back(rel);
      }

      for (std::int64_t vi = 0; vi < cfg.videos_per_user; ++vi) {
        Rng rng(mix_seed(cfg.seed, kTagVideo, si, static_cast<std::uint64_t>(ui),
                         static_cast<std::uint64_t>(vi)));
        const std::int64_t t_total = cfg.frames_per_video;
        FeatureMatrix feat;
        feat.d = cfg.d;
        feat.frames = t_total;
        feat.values.resize(static_cast<std::size_t>(feat.d * t_total));
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(t_total), 0);
        std::vector<std::uint8_t> oracle(static_cast<std::size_t>(t_total), 0);
        std::vector<std::uint8_t> taken(static_cast<std::size_t>(t_total), 0);

        // Highlight runs from the user's own topics, sized to hit the target
        // positive count exactly.
        const std::int64_t target_pos = std::max<std::int64_t>(
            1, std::llround(cfg.positive_fraction * static_cast<double>(t_total)));
        std::int64_t placed = 0;
        while (placed < target_pos) {
          std::int64_t len = 4 + static_cast<std::int64_t>(rng.below(5));
          len = std::min(len, target_pos - placed);
          const auto run = place_run(taken, len, rng);
          if (!run) break;
          const auto& center = topics[static_cast<std::size_t>(
              user_topics[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n_topics)))])];
          for (std::int64_t t = run->begin; t < run->begin + run->len; ++t) {
            write_frame(feat, t, center, cfg.noise_sigma, rng);
            labels[static_cast<std::size_t>(t)] = 1;
            oracle[static_cast<std::size_t>(t)] = 1;
          }
          placed += run->len;
        }

        // Unlabeled near-duplicate run: same topic family, fuzzier.
        if (rng.uniform() < kNearDupVideoFraction) {
          const std::int64_t len = 4 + static_cast<std::int64_t>(rng.below(5));
          if (const auto run = place_run(taken, len, rng)) {
            const auto& center = topics[static_cast<std::size_t>(user_topics[static_cast<std::size_t>(
                rng.below(static_cast<std::uint64_t>(n_topics)))])];
            for (std::int64_t t = run->begin; t < run->begin + run->len; ++t) {
              write_frame(feat, t, center, cfg.noise_sigma * kNearDupNoiseFactor, rng);
              oracle[static_cast<std::size_t>(t)] = 1;
            }
          }
        }

        // Background: runs from non-user topics, interleaved with pure noise.
        std::int64_t t = 0;
        while (t < t_total) {
          if (taken[static_cast<std::size_t>(t)]) {
            ++t;
            continue;
          }
          std::int64_t len = 4 + static_cast<std::int64_t>(rng.below(13));
          const bool topical = cfg.num_topics > n_topics && rng.uniform() < 0.7;
          std::vector<double> center;
          if (topical) {
            std::int64_t pick;
            do {  // topic outside the user's set
              pick = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.num_topics)));
            } while (std::find(user_topics.begin(), user_topics.end(), pick) != user_topics.end());
            center = topics[static_cast<std::size_t>(pick)];
          } else {
            center = unit_gaussian(rng, cfg.d);
          }
          for (; len > 0 && t < t_total && !taken[static_cast<std::size_t>(t)]; --len, ++t)
            write_frame(feat, t, center, topical ? cfg.noise_sigma : 1.0, rng);
        }

        const std::string stem = rel_dir + "/v" + std::to_string(vi);
        write_feature_container(feat, out_dir / (stem + ".prft"));
        write_label_sidecar(labels, out_dir / (stem + ".prlb"));
        write_label_sidecar(oracle, oracle_path_for(out_dir / (stem + ".prlb")));
        entry.videos.push_back({stem + ".prft", stem + ".prlb"});
      }
      manifest.users.push_back(std::move(entry));
    }
    write_manifest(manifest, out_dir / (split + ".json"));
  }
}

}  // namespace hldet
