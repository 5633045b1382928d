// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
#include "hldet/featureio.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace hldet {

namespace {

constexpr std::uint64_t kMaxElements = 1ull << 31;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
  const std::uint32_t bits = get_u32(b, off);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void check_header(std::span<const std::uint8_t> bytes, const char* magic,
                  const std::filesystem::path& path) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
    throw BadMagicError(path.string() + ": bad magic, expected \"" + magic + "\"");
  if (bytes.size() < 8)
    throw TruncatedError(path.string() + ": truncated header");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != 1)
    throw BadVersionError(path.string() + ": unsupported version " + std::to_string(version));
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_feature_container(const FeatureMatrix& m, const std::filesystem::path& path) {
  if (m.d < 1 || m.frames < 1)
    throw BadDimsError("feature matrix must have d >= 1 and T >= 1, got d=" +
                       std::to_string(m.d) + " T=" + std::to_string(m.frames));
  for (float v : m.values)
    if (!std::isfinite(v)) throw IoError("non-finite value in feature matrix for " + path.string());
  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + m.values.size() * 4);
  bytes.insert(bytes.end(), {'P', 'R', 'F', 'T'});
  put_u32(bytes, 1);
  put_u32(bytes, static_cast<std::uint32_t>(m.d));
  put_u32(bytes, static_cast<std::uint32_t>(m.frames));
  for (float v : m.values) put_f32(bytes, v);
  write_file_atomic(path, bytes);
}

FeatureMatrix read_feature_container(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  check_header(bytes, "PRFT", path);
  if (bytes.size() < 16) throw TruncatedError(path.string() + ": truncated header");
  const std::uint32_t d = get_u32(bytes, 8);
  const std::uint32_t t = get_u32(bytes, 12);
  if (d == 0 || t == 0)
    throw BadDimsError(path.string() + ": zero dimension (d=" + std::to_string(d) +
                       ", T=" + std::to_string(t) + ")");
  const std::uint64_t elems = static_cast<std::uint64_t>(d) * t;
  if (elems > kMaxElements)
    throw BadDimsError(path.string() + ": d*T overflow (" + std::to_string(d) + "*" +
                       std::to_string(t) + ")");
  const std::uint64_t expected = elems * 4;
  const std::uint64_t actual = bytes.size() - 16;
  if (actual != expected)
    throw TruncatedError(path.string() + ": payload has " + std::to_string(actual) +
                         " bytes, " + std::to_string(expected) + " expected");
  FeatureMatrix m;
  m.d = d;
  m.frames = t;
  m.values.resize(elems);
  for (std::uint64_t i = 0; i < elems; ++i) m.values[i] = get_f32(bytes, 16 + i * 4);
  return m;
}

void write_label_sidecar(std::span<const std::uint8_t> labels, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(12 + labels.size());
  bytes.insert(bytes.end(), {'P', 'R', 'L', 'B'});
  put_u32(bytes, 1);
  put_u32(bytes, static_cast<std::uint32_t>(labels.size()));
  for (std::uint8_t v : labels) {
    if (v > 1) throw IoError("label values must be 0 or 1 for " + path.string());
    bytes.push_back(v);
  }
  write_file_atomic(path, bytes);
}

std::vector<std::uint8_t> read_label_sidecar(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  check_header(bytes, "PRLB", path);
  if (bytes.size() < 12) throw TruncatedError(path.string() + ": truncated header");
  const std::uint32_t t = get_u32(bytes, 8);
  if (bytes.size() - 12 != t)
    throw TruncatedError(path.string() + ": payload has " + std::to_string(bytes.size() - 12) +
                         " bytes, " + std::to_string(t) + " expected");
  std::vector<std::uint8_t> labels(bytes.begin() + 12, bytes.end());
  for (std::uint8_t v : labels)
    if (v > 1) throw IoError(path.string() + ": label byte out of {0,1}");
  return labels;
}

std::filesystem::path oracle_path_for(const std::filesystem::path& labels_path) {
  std::filesystem::path p = labels_path;
  const std::string ext = p.extension().string();
  p.replace_extension();
  p += ".oracle" + ext;
  return p;
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  CorpusManifest m;
  try {
    m.d = j.at("d").get<std::int64_t>();
    m.split = j.at("split").get<std::string>();
    for (const auto& ju : j.at("users")) {
      UserEntry u;
      u.id = ju.at("id").get<std::string>();
      for (const auto& h : ju.at("history")) u.history.push_back(h.get<std::string>());
      for (const auto& v : ju.at("videos"))
        u.videos.push_back({v.at("features").get<std::string>(), v.at("labels").get<std::string>()});
      m.users.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["d"] = m.d;
  j["split"] = m.split;
  j["users"] = nlohmann::json::array();
  for (const auto& u : m.users) {
    nlohmann::json ju;
    ju["id"] = u.id;
    ju["history"] = u.history;
    ju["videos"] = nlohmann::json::array();
    for (const auto& v : u.videos)
      ju["videos"].push_back({{"features", v.features}, {"labels", v.labels}});
    j["users"].push_back(std::move(ju));
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

void validate_manifest(const CorpusManifest& m) {
  std::set<std::string> ids;
  for (const auto& u : m.users) {
    if (!ids.insert(u.id).second)
      throw ManifestError("duplicate user id \"" + u.id + "\" in split " + m.split);
    for (const auto& h : u.history) {
      const FeatureMatrix seg = read_feature_container(m.base_dir / h);
      if (seg.d != m.d)
        throw ManifestError("history " + h + " has d=" + std::to_string(seg.d) +
                            ", manifest says " + std::to_string(m.d));
    }
    for (const auto& v : u.videos) {
      const FeatureMatrix f = read_feature_container(m.base_dir / v.features);
      if (f.d != m.d)
        throw ManifestError("video " + v.features + " has d=" + std::to_string(f.d) +
                            ", manifest says " + std::to_string(m.d));
      const auto labels = read_label_sidecar(m.base_dir / v.labels);
      if (static_cast<std::int64_t>(labels.size()) != f.frames)
        throw ManifestError("labels " + v.labels + " cover " + std::to_string(labels.size()) +
                            " frames, video has " + std::to_string(f.frames));
    }
  }
}

UserRecord load_user(const CorpusManifest& m, const UserEntry& entry) {
  UserRecord rec;
  rec.user_id = entry.id;
  for (const auto& h : entry.history)
    rec.history.push_back(read_feature_container(m.base_dir / h));
  for (const auto& v : entry.videos) {
    AnnotatedVideo av;
    av.features = read_feature_container(m.base_dir / v.features);
    av.labels = read_label_sidecar(m.base_dir / v.labels);
    if (static_cast<std::int64_t>(av.labels.size()) != av.features.frames)
      throw ManifestError("labels " + v.labels + " do not match video length");
    rec.videos.push_back(std::move(av));
  }
  return rec;
}

std::vector<double> mean_embed(const FeatureMatrix& segment) {
  if (segment.frames < 1) throw BadDimsError("mean_embed needs at least one frame");
  std::vector<double> out(static_cast<std::size_t>(segment.d), 0.0);
  for (std::int64_t t = 0; t < segment.frames; ++t)
    for (std::int64_t r = 0; r < segment.d; ++r)
      out[static_cast<std::size_t>(r)] += segment.at(r, t);
  for (double& v : out) v /= static_cast<double>(segment.frames);
  return out;
}

}  // namespace hldet
