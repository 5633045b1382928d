// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded generator of synthetic multi-interest corpora. Each user is assigned
// a few unit-vector topic centers; history segments and labeled highlight
// runs are noisy draws from those centers, distractors come from the other
// topics in the pool or from pure noise. A quarter of the videos also carry
// an unlabeled "near duplicate" run drawn from a user topic at 4x noise, so
// incomplete-annotation ambiguity is present in every corpus. The generator
// is a pure function of its config: RNG streams are split per (user, video),
// so growing the corpus never changes earlier users' data.
#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

namespace hldet {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::int64_t d = 32;
  std::int64_t num_topics = 12;
  std::int64_t topics_per_user_min = 2;
  std::int64_t topics_per_user_max = 5;
  std::int64_t users_train = 60;
  std::int64_t users_val = 12;
  std::int64_t users_test = 12;
  std::int64_t videos_per_user = 3;
  std::int64_t frames_per_video = 256;
  std::int64_t history_segments_per_user = 6;
  std::int64_t frames_per_segment = 12;
  double noise_sigma = 0.05;
  double positive_fraction = 0.02;
};

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& cfg);

// Writes train.json / val.json / test.json plus per-user container files
// under out_dir. Deterministic function of cfg.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace hldet
