// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Trainable state: encoder weights plus the generic-preference and
// non-highlight embeddings, with a canonical named-tensor registry shared by
// the optimizer and the checkpoint format.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hldet/encoder.hpp"
#include "hldet/featureio.hpp"
#include "hldet/graph.hpp"
#include "hldet/rng.hpp"

namespace hldet {

inline constexpr std::uint64_t kTagInit = 0x10;

template <typename T>
struct ModelParams {
  EncoderParams<T> encoder;
  Array<T> generic;       // g, {d}
  Array<T> nonhighlight;  // u, {d}

  std::int64_t d() const { return generic.shape[0]; }

  std::vector<std::pair<std::string, Array<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Array<T>*>> out;
    EncoderParams<T>::for_each(encoder, [&](const std::string& name, ConvParam<T>& p) {
      out.emplace_back(name + ".w", &p.w);
      out.emplace_back(name + ".b", &p.b);
    });
    out.emplace_back("g", &generic);
    out.emplace_back("u", &nonhighlight);
    return out;
  }

  std::vector<std::pair<std::string, const Array<T>*>> named_tensors() const {
    std::vector<std::pair<std::string, const Array<T>*>> out;
    EncoderParams<T>::for_each(encoder, [&](const std::string& name, const ConvParam<T>& p) {
      out.emplace_back(name + ".w", &p.w);
      out.emplace_back(name + ".b", &p.b);
    });
    out.emplace_back("g", &generic);
    out.emplace_back("u", &nonhighlight);
    return out;
  }
};

// g and u use the same symmetric-uniform scheme as the encoder kernels,
// treated as 1 x d maps.
template <typename T>
ModelParams<T> init_model(std::int64_t d, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kTagInit));
  ModelParams<T> m;
  m.encoder = init_encoder<T>(d, rng);
  m.generic = Array<T>({d});
  m.nonhighlight = Array<T>({d});
  const double a = std::sqrt(6.0 / static_cast<double>(d + 1));
  for (T& v : m.generic.data) v = static_cast<T>(rng.uniform(-a, a));
  for (T& v : m.nonhighlight.data) v = static_cast<T>(rng.uniform(-a, a));
  return m;
}

template <typename T>
struct ModelNodes {
  EncoderNodes<T> encoder;
  typename Graph<T>::Id generic, nonhighlight;
  // Leaf ids aligned with ModelParams::named_tensors() order.
  std::vector<typename Graph<T>::Id> leaf_ids;
};

template <typename T>
ModelNodes<T> make_model_nodes(Graph<T>& g, const ModelParams<T>& params, bool requires_grad) {
  ModelNodes<T> n;
  n.encoder = make_encoder_nodes(g, params.encoder, requires_grad, &n.leaf_ids);
  n.generic = g.leaf(params.generic, requires_grad);
  n.nonhighlight = g.leaf(params.nonhighlight, requires_grad);
  n.leaf_ids.push_back(n.generic);
  n.leaf_ids.push_back(n.nonhighlight);
  return n;
}

// Encodes history segments and mean-pools each into one embedding column.
// When a cap is set, the most recent (last) segments are kept.
template <typename T>
std::vector<std::vector<T>> encode_history(const ModelParams<T>& params,
                                           const std::vector<FeatureMatrix>& segments,
                                           std::optional<std::int64_t> max_history) {
  std::size_t first = 0;
  if (max_history.has_value()) {
    const auto cap = static_cast<std::size_t>(std::max<std::int64_t>(0, *max_history));
    if (segments.size() > cap) first = segments.size() - cap;
  }
  std::vector<std::vector<T>> out;
  for (std::size_t i = first; i < segments.size(); ++i) {
    Graph<T> g;
    auto nodes = make_encoder_nodes(g, params.encoder, false);
    auto enc = build_encoder(g, nodes, g.leaf(to_channel_major<T>(segments[i])));
    const Array<T>& h = g.value(g.mean(enc, 1));
    out.push_back(h.data);
  }
  return out;
}

}  // namespace hldet
