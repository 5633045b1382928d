// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Segment-based training loop. Videos are cut into fixed-length segments and
// only segments containing a positive are trainable; each step samples a
// batch of distinct users, one random retained segment each, averages the
// per-segment contrastive losses and applies an adaptive-moment update.
// Per-user forward/backward may run in parallel; gradients are reduced
// sequentially in ascending user order, so results are independent of the
// thread count and bit-reproducible for a fixed seed in f64 mode.
//
// Checkpoint container (PRCK), little-endian:
//   magic "PRCK" | u32 version = 1 | UTF-8 JSON header terminated by '\n' |
//   concatenated tensor payloads (float32 or float64 per header dtype)
// The JSON header carries the config, epoch counters, RNG state and a tensor
// directory with shapes and byte offsets relative to the payload start.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hldet/metrics.hpp"
#include "hldet/model.hpp"
#include "hldet/objective.hpp"
#include "hldet/parallel.hpp"
#include "hldet/preference.hpp"
#include "hldet/rng.hpp"

namespace hldet {

inline constexpr std::uint64_t kTagTrain = 0x20;

struct TrainConfig {
  std::int64_t segment_len = 256;
  std::int64_t batch_users = 32;
  std::int64_t epochs = 150;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t k_factor = kDefaultKFactor;
  double lambda = 9.0;
  AttentionStrategy strategy = AttentionStrategy::kFull;
  std::optional<std::int64_t> max_history;

  void validate() const {
    if (segment_len < 2) throw std::invalid_argument("segment_len must be >= 2");
    if (batch_users < 1) throw std::invalid_argument("batch_users must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(lambda > 0)) throw std::invalid_argument("lambda must be positive");
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key) && !j.at(key).is_null())
      field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("segment_len", c.segment_len);
  get("batch_users", c.batch_users);
  get("epochs", c.epochs);
  get("learning_rate", c.learning_rate);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("epsilon", c.epsilon);
  get("seed", c.seed);
  get("k_factor", c.k_factor);
  get("lambda", c.lambda);
  if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  if (j.contains("max_history") && !j.at("max_history").is_null())
    c.max_history = j.at("max_history").get<std::int64_t>();
  c.validate();
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j{{"segment_len", c.segment_len},
                   {"batch_users", c.batch_users},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"epsilon", c.epsilon},
                   {"seed", c.seed},
                   {"k_factor", c.k_factor},
                   {"lambda", c.lambda},
                   {"strategy", to_string(c.strategy)}};
  if (c.max_history.has_value())
    j["max_history"] = *c.max_history;
  else
    j["max_history"] = nullptr;
  return j;
}

// Non-overlapping [begin, end) windows of at most segment_len frames; the
// short final remainder is kept. Windows without a positive label are
// dropped (they are untrainable under the contrastive objective).
struct SegmentSpan {
  std::int64_t begin = 0, end = 0;
};

inline std::vector<SegmentSpan> slice_segments(std::span<const std::uint8_t> labels,
                                               std::int64_t segment_len) {
  if (segment_len < 2) throw std::invalid_argument("segment_len must be >= 2");
  std::vector<SegmentSpan> out;
  const std::int64_t t = static_cast<std::int64_t>(labels.size());
  for (std::int64_t begin = 0; begin < t; begin += segment_len) {
    const std::int64_t end = std::min(begin + segment_len, t);
    bool has_pos = false;
    for (std::int64_t i = begin; i < end && !has_pos; ++i)
      has_pos = labels[static_cast<std::size_t>(i)] != 0;
    if (has_pos) out.push_back({begin, end});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adaptive-moment update with bias correction.

template <typename T>
struct AdamState {
  std::vector<Array<T>> m, v;
  std::int64_t t = 0;

  static AdamState zeros_for(const std::vector<std::pair<std::string, const Array<T>*>>& params) {
    AdamState s;
    for (const auto& [name, p] : params) {
      s.m.push_back(zeros_like(*p));
      s.v.push_back(zeros_like(*p));
    }
    return s;
  }
};

template <typename T>
void adam_step(std::vector<std::pair<std::string, Array<T>*>>& params,
               const std::vector<Array<T>>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Array<T>& w = *params[p].second;
    const Array<T>& g = grads[p];
    if (!w.same_shape(g))
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape) +
                       " does not match parameter " + params[p].first);
    Array<T>& m = state.m[p];
    Array<T>& v = state.v[p];
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      if (!std::isfinite(gi)) throw NumericError("non-finite gradient in " + params[p].first);
      const double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      w.data[i] = static_cast<T>(static_cast<double>(w.data[i]) -
                                 cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints.

template <typename T>
struct TrainState {
  ModelParams<T> model;
  AdamState<T> adam;
  std::int64_t epoch = 0;  // completed epochs
  std::string rng_state;
  double best_val_map = -1.0;
  std::int64_t best_epoch = -1;
};

template <typename T>
void save_checkpoint(const TrainState<T>& state, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  const auto params = state.model.named_tensors();
  nlohmann::json dir = nlohmann::json::array();
  std::vector<const Array<T>*> payload_order;
  std::uint64_t offset = 0;
  auto add_tensor = [&](const std::string& name, const Array<T>& a) {
    dir.push_back({{"name", name},
                   {"shape", a.shape},
                   {"offset", offset},
                   {"count", a.numel()}});
    payload_order.push_back(&a);
    offset += static_cast<std::uint64_t>(a.numel()) * sizeof(T);
  };
  for (const auto& [name, p] : params) add_tensor(name, *p);
  for (std::size_t i = 0; i < params.size(); ++i) add_tensor("adam.m." + params[i].first, state.adam.m[i]);
  for (std::size_t i = 0; i < params.size(); ++i) add_tensor("adam.v." + params[i].first, state.adam.v[i]);

  nlohmann::json header;
  header["dtype"] = sizeof(T) == 8 ? "f64" : "f32";
  header["epoch"] = state.epoch;
  header["adam_t"] = state.adam.t;
  header["best_val_map"] = state.best_val_map;
  header["best_epoch"] = state.best_epoch;
  header["rng"] = state.rng_state;
  header["config"] = train_config_to_json(cfg);
  header["tensors"] = std::move(dir);

  std::string head_text = header.dump();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(head_text.size() + 16 + offset);
  bytes.insert(bytes.end(), {'P', 'R', 'C', 'K'});
  const std::uint32_t version = 1;
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>((version >> (8 * i)) & 0xff));
  bytes.insert(bytes.end(), head_text.begin(), head_text.end());
  bytes.push_back('\n');
  for (const Array<T>* a : payload_order) {
    const std::size_t nbytes = a->data.size() * sizeof(T);
    const std::size_t at = bytes.size();
    bytes.resize(at + nbytes);
    std::memcpy(bytes.data() + at, a->data.data(), nbytes);
  }
  write_file_atomic(path, bytes);
}

template <typename T>
struct LoadedCheckpoint {
  TrainState<T> state;
  TrainConfig config;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PRCK", 4) != 0)
    throw BadMagicError(path.string() + ": bad magic, expected \"PRCK\"");
  if (bytes.size() < 8) throw TruncatedError(path.string() + ": truncated header");
  std::uint32_t version = 0;
  for (int i = 3; i >= 0; --i) version = (version << 8) | bytes[4 + static_cast<std::size_t>(i)];
  if (version != 1)
    throw BadVersionError(path.string() + ": unsupported version " + std::to_string(version));
  // The JSON header is a single line; the first 0x0A ends it.
  std::size_t json_end = 8;
  while (json_end < bytes.size() && bytes[json_end] != '\n') ++json_end;
  if (json_end == bytes.size()) throw TruncatedError(path.string() + ": unterminated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(json_end));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  const std::size_t payload_at = json_end + 1;
  const std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64")
    throw IoError(path.string() + ": unknown dtype " + dtype);
  const std::size_t word = dtype == "f64" ? 8 : 4;

  LoadedCheckpoint<T> out;
  out.config = train_config_from_json(header.at("config"));
  out.state.epoch = header.at("epoch").get<std::int64_t>();
  out.state.adam.t = header.at("adam_t").get<std::int64_t>();
  out.state.best_val_map = header.at("best_val_map").get<double>();
  out.state.best_epoch = header.at("best_epoch").get<std::int64_t>();
  out.state.rng_state = header.at("rng").get<std::string>();

  std::unordered_map<std::string, Array<T>> tensors;
  for (const auto& jt : header.at("tensors")) {
    const std::string name = jt.at("name").get<std::string>();
    const auto shape = jt.at("shape").get<std::vector<std::int64_t>>();
    const auto count = jt.at("count").get<std::int64_t>();
    const auto offset = jt.at("offset").get<std::uint64_t>();
    if (checked_numel(shape) != count)
      throw IoError(path.string() + ": inconsistent tensor directory entry " + name);
    const std::size_t need = payload_at + offset + static_cast<std::size_t>(count) * word;
    if (need > bytes.size())
      throw TruncatedError(path.string() + ": payload has " +
                           std::to_string(bytes.size() - payload_at) + " bytes, tensor " + name +
                           " needs " + std::to_string(need - payload_at));
    Array<T> a(shape);
    const std::uint8_t* src = bytes.data() + payload_at + offset;
    for (std::int64_t i = 0; i < count; ++i) {
      if (word == 8) {
        double v;
        std::memcpy(&v, src + static_cast<std::size_t>(i) * 8, 8);
        a.data[static_cast<std::size_t>(i)] = static_cast<T>(v);
      } else {
        float v;
        std::memcpy(&v, src + static_cast<std::size_t>(i) * 4, 4);
        a.data[static_cast<std::size_t>(i)] = static_cast<T>(v);
      }
    }
    tensors.emplace(name, std::move(a));
  }

  // Rebuild the model with the right d, then overwrite every tensor.
  const auto g_it = tensors.find("g");
  if (g_it == tensors.end()) throw IoError(path.string() + ": checkpoint lacks tensor g");
  const std::int64_t d = g_it->second.shape[0];
  out.state.model = init_model<T>(d, 0);
  auto params = out.state.model.named_tensors();
  auto take = [&](const std::string& name, Array<T>& dst) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError(path.string() + ": checkpoint lacks tensor " + name);
    if (it->second.shape != dst.shape)
      throw IoError(path.string() + ": tensor " + name + " has shape " +
                    shape_str(it->second.shape) + ", expected " + shape_str(dst.shape));
    dst = std::move(it->second);
  };
  for (auto& [name, p] : params) take(name, *p);
  out.state.adam.m.resize(params.size());
  out.state.adam.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.state.adam.m[i] = zeros_like(*params[i].second);
    out.state.adam.v[i] = zeros_like(*params[i].second);
    take("adam.m." + params[i].first, out.state.adam.m[i]);
    take("adam.v." + params[i].first, out.state.adam.v[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct EpochMetrics {
  std::int64_t epoch = 0;
  double train_loss = 0;
  double val_map = 0;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochMetrics> epochs;
  double best_val_map = -1;
  std::int64_t best_epoch = -1;
  std::int64_t skipped_users = 0;
};

namespace detail {

struct TrainSegment {
  std::int64_t video = 0;
  SegmentSpan span;
};

struct TrainUser {
  const UserRecord* record = nullptr;
  std::vector<TrainSegment> segments;
};

template <typename T>
Array<T> segment_features(const FeatureMatrix& video, SegmentSpan span) {
  const std::int64_t len = span.end - span.begin;
  Array<T> out({video.d, len});
  for (std::int64_t t = 0; t < len; ++t)
    for (std::int64_t r = 0; r < video.d; ++r)
      out.data[static_cast<std::size_t>(r * len + t)] =
          static_cast<T>(video.at(r, span.begin + t));
  return out;
}

// Forward + backward for one (user, segment); returns the loss value and the
// gradients in registry order.
template <typename T>
std::pair<double, std::vector<Array<T>>> segment_pass(const ModelParams<T>& model,
                                                      const TrainConfig& cfg,
                                                      const UserRecord& user,
                                                      const TrainSegment& seg) {
  Graph<T> g;
  ModelNodes<T> nodes = make_model_nodes(g, model, true);
  const AnnotatedVideo& video = user.videos[static_cast<std::size_t>(seg.video)];
  auto s = build_encoder(g, nodes.encoder, g.leaf(segment_features<T>(video.features, seg.span)));

  typename Graph<T>::Id h_cols = -1;
  std::size_t first = 0;
  if (cfg.max_history.has_value()) {
    const auto cap = static_cast<std::size_t>(std::max<std::int64_t>(0, *cfg.max_history));
    if (user.history.size() > cap) first = user.history.size() - cap;
  }
  const bool need_history = user.history.size() > first &&
                            cfg.strategy != AttentionStrategy::kGenericOnly;
  if (need_history) {
    for (std::size_t i = first; i < user.history.size(); ++i) {
      auto enc = build_encoder(g, nodes.encoder, g.leaf(to_channel_major<T>(user.history[i])));
      auto col = g.reshape(g.mean(enc, 1), {g.value(enc).shape[0], 1});
      h_cols = h_cols < 0 ? col : g.concat(h_cols, col, 1);
    }
  }
  const auto scores = build_scores(g, s, h_cols, nodes.generic, nodes.nonhighlight,
                                   cfg.strategy, cfg.lambda);
  const std::span<const std::uint8_t> labels(video.labels.data() + seg.span.begin,
                                             static_cast<std::size_t>(seg.span.end - seg.span.begin));
  const auto loss = build_loss(g, scores.highlight, scores.nonhighlight, labels, cfg.k_factor);
  const double loss_value = static_cast<double>(g.value(loss.loss).data[0]);
  auto grad_map = g.backward(loss.loss);
  std::vector<Array<T>> grads;
  grads.reserve(nodes.leaf_ids.size());
  for (auto id : nodes.leaf_ids) grads.push_back(std::move(grad_map.at(id)));
  return {loss_value, std::move(grads)};
}

}  // namespace detail

// Trains from scratch or from a resume state; writes per-epoch metrics
// (metrics.jsonl), the rolling checkpoint (last.prck) and the best-validation
// checkpoint (best.prck) into out_dir.
template <typename T>
TrainResult train(const CorpusManifest& train_manifest, const CorpusManifest* val_manifest,
                  TrainConfig cfg, const std::filesystem::path& out_dir,
                  const TrainState<T>* resume = nullptr, int threads = 0) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  // Load users and slice trainable segments. Segments need >= 2 frames for
  // the loss, so single-frame positive remainders are not trainable.
  std::vector<UserRecord> records;
  records.reserve(train_manifest.users.size());
  for (const auto& entry : train_manifest.users) records.push_back(load_user(train_manifest, entry));
  std::vector<detail::TrainUser> users;
  std::int64_t skipped = 0;
  for (const auto& rec : records) {
    detail::TrainUser tu;
    tu.record = &rec;
    for (std::size_t vi = 0; vi < rec.videos.size(); ++vi)
      for (const auto span : slice_segments(rec.videos[vi].labels, cfg.segment_len))
        if (span.end - span.begin >= 2)
          tu.segments.push_back({static_cast<std::int64_t>(vi), span});
    if (tu.segments.empty()) {
      ++skipped;
      std::fprintf(stderr, "warning: user %s has no trainable segment, skipping\n",
                   rec.user_id.c_str());
      continue;
    }
    users.push_back(std::move(tu));
  }
  if (users.empty()) throw std::invalid_argument("training set has no trainable segment");

  TrainState<T> state;
  if (resume != nullptr) {
    state = *resume;
  } else {
    state.model = init_model<T>(train_manifest.d, cfg.seed);
    state.adam = AdamState<T>::zeros_for(
        static_cast<const ModelParams<T>&>(state.model).named_tensors());
    state.rng_state = Rng(mix_seed(cfg.seed, kTagTrain)).serialize();
  }
  if (state.model.d() != train_manifest.d)
    throw ManifestError("checkpoint d=" + std::to_string(state.model.d()) +
                        " does not match corpus d=" + std::to_string(train_manifest.d));
  Rng rng = Rng::deserialize(state.rng_state);

  const std::int64_t n_users = static_cast<std::int64_t>(users.size());
  const std::int64_t batch = std::min<std::int64_t>(cfg.batch_users, n_users);
  const std::int64_t steps_per_epoch = (n_users + cfg.batch_users - 1) / cfg.batch_users;

  TrainResult result;
  result.skipped_users = skipped;
  result.best_val_map = state.best_val_map;
  result.best_epoch = state.best_epoch;

  auto params = state.model.named_tensors();
  std::vector<std::int64_t> user_pool(static_cast<std::size_t>(n_users));
  for (std::size_t i = 0; i < user_pool.size(); ++i) user_pool[i] = static_cast<std::int64_t>(i);

  for (std::int64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0;
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      // Distinct users via partial Fisher-Yates, then ascending order.
      for (std::int64_t i = 0; i < batch; ++i) {
        const std::int64_t j =
            i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n_users - i)));
        std::swap(user_pool[static_cast<std::size_t>(i)], user_pool[static_cast<std::size_t>(j)]);
      }
      std::vector<std::int64_t> picked(user_pool.begin(), user_pool.begin() + batch);
      std::sort(picked.begin(), picked.end());
      std::vector<std::size_t> seg_choice(static_cast<std::size_t>(batch));
      for (std::int64_t i = 0; i < batch; ++i)
        seg_choice[static_cast<std::size_t>(i)] = static_cast<std::size_t>(rng.below(
            static_cast<std::uint64_t>(users[static_cast<std::size_t>(picked[static_cast<std::size_t>(i)])].segments.size())));

      std::vector<double> losses(static_cast<std::size_t>(batch));
      std::vector<std::vector<Array<T>>> grads(static_cast<std::size_t>(batch));
      parallel_for(batch, threads, [&](std::int64_t bi) {
        const auto& tu = users[static_cast<std::size_t>(picked[static_cast<std::size_t>(bi)])];
        const auto& seg = tu.segments[seg_choice[static_cast<std::size_t>(bi)]];
        auto [loss_value, seg_grads] = detail::segment_pass(state.model, cfg, *tu.record, seg);
        losses[static_cast<std::size_t>(bi)] = loss_value;
        grads[static_cast<std::size_t>(bi)] = std::move(seg_grads);
      });

      // Sequential reduction in ascending user order.
      double step_loss = 0;
      std::vector<Array<T>> total = std::move(grads[0]);
      step_loss += losses[0];
      for (std::int64_t bi = 1; bi < batch; ++bi) {
        step_loss += losses[static_cast<std::size_t>(bi)];
        for (std::size_t p = 0; p < total.size(); ++p) {
          const auto& src = grads[static_cast<std::size_t>(bi)][p];
          for (std::size_t e = 0; e < total[p].data.size(); ++e)
            total[p].data[e] += src.data[e];
        }
      }
      step_loss /= static_cast<double>(batch);
      if (!std::isfinite(step_loss)) {
        const auto& tu = users[static_cast<std::size_t>(picked[0])];
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + " (first segment: user " +
                           tu.record->user_id + ")");
      }
      const T scale = static_cast<T>(1.0 / static_cast<double>(batch));
      for (auto& t : total)
        for (T& v : t.data) v *= scale;
      adam_step(params, total, state.adam, cfg);
      result.step_losses.push_back(step_loss);
      epoch_loss += step_loss;
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);

    double val_map = 0;
    if (val_manifest != nullptr)
      val_map = evaluate(state.model, cfg.strategy, cfg.lambda, cfg.max_history, *val_manifest,
                         threads)
                    .map;
    state.epoch = epoch + 1;
    state.rng_state = rng.serialize();
    if (val_map > state.best_val_map) {
      state.best_val_map = val_map;
      state.best_epoch = epoch + 1;
      save_checkpoint(state, cfg, out_dir / "best.prck");
    }
    save_checkpoint(state, cfg, out_dir / "last.prck");

    result.epochs.push_back({epoch + 1, epoch_loss, val_map});
    std::string lines;
    for (const auto& em : result.epochs) {
      nlohmann::json j{{"epoch", em.epoch}, {"train_loss", em.train_loss}, {"val_map", em.val_map}};
      lines += j.dump() + "\n";
    }
    write_file_atomic(out_dir / "metrics.jsonl", lines);
  }
  result.best_val_map = state.best_val_map;
  result.best_epoch = state.best_epoch;
  return result;
}

}  // namespace hldet
