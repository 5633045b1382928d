// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Context encoder: a three-level U-shaped stack of 1-D convolutions that maps
// a {d,T} feature matrix to a {d,T} contextual-semantics matrix. Per level,
// two kernel-3 convolutions with relu; downsampling by stride-2 kernel-3
// convolution; upsampling by nearest-neighbor x2 followed by a kernel-3
// convolution; skip connections concatenate to 2d channels and a kernel-1
// convolution projects back to d. The final convolution has no activation so
// the embeddings stay signed. Inputs are edge-replicated on the right to a
// multiple of 8 frames and the output is cropped back, so the shape contract
// holds for every T >= 1.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hldet/graph.hpp"
#include "hldet/rng.hpp"
#include "hldet/tensor.hpp"

namespace hldet {

inline constexpr int kEncoderLevels = 3;
inline constexpr std::int64_t kEncoderStride = 1ll << kEncoderLevels;

template <typename T>
struct ConvParam {
  Array<T> w;  // {channels_out, channels_in, kernel}
  Array<T> b;  // {channels_out}
};

template <typename T>
struct EncoderParams {
  std::array<ConvParam<T>, kEncoderLevels> enc_a, enc_b, down;
  ConvParam<T> bottom_a, bottom_b;
  std::array<ConvParam<T>, kEncoderLevels> up, merge, dec_a, dec_b;

  std::int64_t d() const { return enc_a[0].w.shape[0]; }

  // Canonical parameter order used for initialization, the optimizer state
  // and checkpoints.
  template <typename Self, typename Fn>
  static void for_each(Self& self, Fn&& fn) {
    for (int l = 0; l < kEncoderLevels; ++l) {
      const std::string p = "enc" + std::to_string(l);
      fn(p + ".a", self.enc_a[l]);
      fn(p + ".b", self.enc_b[l]);
      fn("down" + std::to_string(l), self.down[l]);
    }
    fn("bottom.a", self.bottom_a);
    fn("bottom.b", self.bottom_b);
    for (int l = kEncoderLevels - 1; l >= 0; --l) {
      const std::string s = std::to_string(l);
      fn("up" + s, self.up[l]);
      fn("merge" + s, self.merge[l]);
      fn("dec" + s + ".a", self.dec_a[l]);
      fn("dec" + s + ".b", self.dec_b[l]);
    }
  }
};

// Symmetric uniform initialization with bound sqrt(6 / (fan_in + fan_out)),
// fan counted over the receptive patch; biases zero.
template <typename T>
ConvParam<T> init_conv(std::int64_t c_out, std::int64_t c_in, std::int64_t k, Rng& rng) {
  ConvParam<T> p;
  p.w = Array<T>({c_out, c_in, k});
  p.b = Array<T>({c_out});
  const double fan_in = static_cast<double>(c_in * k);
  const double fan_out = static_cast<double>(c_out * k);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (T& v : p.w.data) v = static_cast<T>(rng.uniform(-a, a));
  return p;
}

template <typename T>
EncoderParams<T> init_encoder(std::int64_t d, Rng& rng) {
  EncoderParams<T> e;
  EncoderParams<T>::for_each(e, [&](const std::string& name, ConvParam<T>& p) {
    const bool is_merge = name.rfind("merge", 0) == 0;
    p = init_conv<T>(d, is_merge ? 2 * d : d, is_merge ? 1 : 3, rng);
  });
  return e;
}

template <typename T>
struct EncoderNodes {
  struct ConvIds {
    typename Graph<T>::Id w, b;
  };
  std::array<ConvIds, kEncoderLevels> enc_a, enc_b, down;
  ConvIds bottom_a, bottom_b;
  std::array<ConvIds, kEncoderLevels> up, merge, dec_a, dec_b;
};

// Creates leaves in the same order as EncoderParams::for_each; when leaf_ids
// is given, the (w, b) ids are appended in that registry order.
template <typename T>
EncoderNodes<T> make_encoder_nodes(Graph<T>& g, const EncoderParams<T>& params,
                                   bool requires_grad,
                                   std::vector<typename Graph<T>::Id>* leaf_ids = nullptr) {
  EncoderNodes<T> n;
  auto put = [&](const ConvParam<T>& p, typename EncoderNodes<T>::ConvIds& ids) {
    ids.w = g.leaf(p.w, requires_grad);
    ids.b = g.leaf(p.b, requires_grad);
    if (leaf_ids) {
      leaf_ids->push_back(ids.w);
      leaf_ids->push_back(ids.b);
    }
  };
  for (int l = 0; l < kEncoderLevels; ++l) {
    put(params.enc_a[l], n.enc_a[l]);
    put(params.enc_b[l], n.enc_b[l]);
    put(params.down[l], n.down[l]);
  }
  put(params.bottom_a, n.bottom_a);
  put(params.bottom_b, n.bottom_b);
  for (int l = kEncoderLevels - 1; l >= 0; --l) {
    put(params.up[l], n.up[l]);
    put(params.merge[l], n.merge[l]);
    put(params.dec_a[l], n.dec_a[l]);
    put(params.dec_b[l], n.dec_b[l]);
  }
  return n;
}

// Builds the encoder subgraph; input {d,T}, output {d,T}.
template <typename T>
typename Graph<T>::Id build_encoder(Graph<T>& g, const EncoderNodes<T>& p,
                                    typename Graph<T>::Id input) {
  using Id = typename Graph<T>::Id;
  const std::int64_t t_orig = g.value(input).shape[1];
  const std::int64_t t_pad = (t_orig + kEncoderStride - 1) / kEncoderStride * kEncoderStride;
  Id x = t_pad == t_orig ? input : g.pad_edge_right(input, t_pad);

  std::array<Id, kEncoderLevels> skips{};
  for (int l = 0; l < kEncoderLevels; ++l) {
    x = g.relu(g.conv1d(x, p.enc_a[l].w, p.enc_a[l].b));
    x = g.relu(g.conv1d(x, p.enc_b[l].w, p.enc_b[l].b));
    skips[static_cast<std::size_t>(l)] = x;
    x = g.conv1d(x, p.down[l].w, p.down[l].b, 2);
  }
  x = g.relu(g.conv1d(x, p.bottom_a.w, p.bottom_a.b));
  x = g.relu(g.conv1d(x, p.bottom_b.w, p.bottom_b.b));
  for (int l = kEncoderLevels - 1; l >= 0; --l) {
    x = g.conv1d(g.upsample2(x), p.up[l].w, p.up[l].b);
    x = g.concat(skips[static_cast<std::size_t>(l)], x, 0);
    x = g.conv1d(x, p.merge[l].w, p.merge[l].b);
    x = g.relu(g.conv1d(x, p.dec_a[l].w, p.dec_a[l].b));
    x = g.conv1d(x, p.dec_b[l].w, p.dec_b[l].b);
    if (l != 0) x = g.relu(x);
  }
  if (t_pad != t_orig) x = g.crop_right(x, t_orig);
  return x;
}

// Safe bound on the temporal receptive radius of one output frame, in input
// frames: each kernel-3 convolution widens by the current scale, each
// resampling contributes one extra scale step for alignment.
inline std::int64_t encoder_receptive_radius() {
  std::int64_t r = 0, s = 1;
  for (int l = 0; l < kEncoderLevels; ++l) {
    r += 2 * s;      // two level convolutions
    r += s;          // downsampling convolution
    s *= 2;
    r += s;          // alignment slack
  }
  r += 2 * s;        // bottom convolutions
  for (int l = kEncoderLevels - 1; l >= 0; --l) {
    s /= 2;
    r += 2 * s;      // post-upsample convolution plus alignment slack
    r += 2 * s;      // two decoder convolutions
  }
  return r;
}

// One-off convenience: encode without keeping a graph around.
template <typename T>
Array<T> encode(const EncoderParams<T>& params, const Array<T>& video) {
  if (video.rank() != 2 || video.shape[0] != params.d())
    throw ShapeError("encode: input " + shape_str(video.shape) + " does not match d=" +
                     std::to_string(params.d()));
  Graph<T> g;
  auto nodes = make_encoder_nodes(g, params, false);
  auto out = build_encoder(g, nodes, g.leaf(video));
  return g.value(out);
}

}  // namespace hldet
