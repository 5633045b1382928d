// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk feature containers and corpus manifests.
//
// Feature container (PRFT), little-endian:
//   magic "PRFT" | u32 version = 1 | u32 d | u32 T | d*T float32, frame-major
// Label sidecar (PRLB):
//   magic "PRLB" | u32 version = 1 | u32 T | T bytes of 0/1
// Manifest: UTF-8 JSON
//   {"d", "split", "users": [{"id", "history": [paths],
//     "videos": [{"features": path, "labels": path}]}]}
// with paths relative to the manifest's directory.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hldet/tensor.hpp"

namespace hldet {

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class BadMagicError : public IoError {
  using IoError::IoError;
};
class BadVersionError : public IoError {
  using IoError::IoError;
};
class TruncatedError : public IoError {
  using IoError::IoError;
};
class BadDimsError : public IoError {
  using IoError::IoError;
};
class ManifestError : public IoError {
  using IoError::IoError;
};

// d x T feature matrix; column i is frame i. Stored frame-major to match the
// container layout: values[t*d + r].
struct FeatureMatrix {
  std::int64_t d = 0;
  std::int64_t frames = 0;
  std::vector<float> values;

  float at(std::int64_t row, std::int64_t t) const { return values[static_cast<std::size_t>(t * d + row)]; }
  float& at(std::int64_t row, std::int64_t t) { return values[static_cast<std::size_t>(t * d + row)]; }
  std::span<const float> frame(std::int64_t t) const {
    return {values.data() + t * d, static_cast<std::size_t>(d)};
  }
};

struct AnnotatedVideo {
  FeatureMatrix features;
  std::vector<std::uint8_t> labels;  // length features.frames, 1 = highlight
};

struct UserRecord {
  std::string user_id;
  std::vector<FeatureMatrix> history;
  std::vector<AnnotatedVideo> videos;
};

struct VideoEntry {
  std::string features;
  std::string labels;
};

struct UserEntry {
  std::string id;
  std::vector<std::string> history;
  std::vector<VideoEntry> videos;
};

struct CorpusManifest {
  std::int64_t d = 0;
  std::string split;
  std::vector<UserEntry> users;
  std::filesystem::path base_dir;  // directory the manifest was read from
};

// Atomic whole-file write: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

void write_feature_container(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_feature_container(const std::filesystem::path& path);

void write_label_sidecar(std::span<const std::uint8_t> labels, const std::filesystem::path& path);
std::vector<std::uint8_t> read_label_sidecar(const std::filesystem::path& path);

// vK.prlb -> vK.oracle.prlb; the per-frame "generated from one of the user's
// topics" bit written next to the labels by the synthetic generator.
std::filesystem::path oracle_path_for(const std::filesystem::path& labels_path);

CorpusManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const CorpusManifest& m, const std::filesystem::path& path);

// Opens every referenced file and enforces: one d across the corpus, label
// lengths equal to frame counts, unique user ids. Throws ManifestError.
void validate_manifest(const CorpusManifest& m);

UserRecord load_user(const CorpusManifest& m, const UserEntry& entry);

// Elementwise mean over the frame columns of a segment.
std::vector<double> mean_embed(const FeatureMatrix& segment);

// Frame-major container matrix to channel-major {d, T} array.
template <typename T>
Array<T> to_channel_major(const FeatureMatrix& m) {
  Array<T> out({m.d, m.frames});
  for (std::int64_t t = 0; t < m.frames; ++t)
    for (std::int64_t r = 0; r < m.d; ++r)
      out.data[static_cast<std::size_t>(r * m.frames + t)] = static_cast<T>(m.at(r, t));
  return out;
}

}  // namespace hldet
