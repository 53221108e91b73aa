// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "synweather/autodiff.hpp"
#include "synweather/rng.hpp"

namespace synweather::nn {

using ad::Var;

/// Ordered named parameter collection. Names are the checkpoint contract.
template <typename T>
struct ParamStore {
  std::vector<std::pair<std::string, Var<T>>> items;

  Var<T> add(const std::string& name, NdArray<T> init) {
    for (const auto& [n, v] : items)
      if (n == name) throw std::invalid_argument("ParamStore: duplicate name \"" + name + "\"");
    auto v = ad::leaf(std::move(init), true);
    items.emplace_back(name, v);
    return v;
  }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return v;
    throw std::out_of_range("ParamStore: no parameter \"" + name + "\"");
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : items) n += v->value.size();
    return n;
  }
};

// --- initializers ------------------------------------------------------------

template <typename T>
NdArray<T> normal_init(Shape shape, double stddev, RngStream& rng) {
  NdArray<T> a(std::move(shape));
  rng.fill_normal(a.ptr(), a.size(), 0.0, stddev);
  return a;
}

/// He/Kaiming init for conv kernels [K, C, R, S].
template <typename T>
NdArray<T> he_init(Shape shape, RngStream& rng) {
  std::int64_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  return normal_init<T>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

// --- layers -------------------------------------------------------------------

template <typename T>
struct Linear {
  Var<T> w, b;

  static Linear create(ParamStore<T>& ps, const std::string& name, std::int64_t in,
                       std::int64_t out, RngStream& rng, double stddev = 0.02,
                       bool bias = true) {
    Linear l;
    l.w = ps.add(name + ".w", normal_init<T>({out, in}, stddev, rng));
    if (bias) l.b = ps.add(name + ".b", NdArray<T>({out}));
    return l;
  }

  Var<T> operator()(const Var<T>& x) const { return ad::linear(x, w, b); }
};

template <typename T>
struct Conv2d {
  Var<T> w, b;
  std::int64_t stride = 1, pad = 0;

  static Conv2d create(ParamStore<T>& ps, const std::string& name, std::int64_t in_c,
                       std::int64_t out_c, std::int64_t kernel, std::int64_t stride,
                       std::int64_t pad, RngStream& rng) {
    Conv2d c;
    c.w = ps.add(name + ".w", he_init<T>({out_c, in_c, kernel, kernel}, rng));
    c.b = ps.add(name + ".b", NdArray<T>({out_c}));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Var<T> operator()(const Var<T>& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct GroupNorm {
  Var<T> gamma, beta;
  int groups = 32;

  static GroupNorm create(ParamStore<T>& ps, const std::string& name, std::int64_t channels,
                          int groups) {
    GroupNorm g;
    g.gamma = ps.add(name + ".g", NdArray<T>({channels}, T(1)));
    g.beta = ps.add(name + ".b", NdArray<T>({channels}));
    g.groups = groups;
    return g;
  }

  Var<T> operator()(const Var<T>& x) const { return ad::group_norm(x, gamma, beta, groups); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma, beta;  // null for the non-affine variant

  static LayerNorm create(ParamStore<T>& ps, const std::string& name, std::int64_t dim) {
    LayerNorm l;
    l.gamma = ps.add(name + ".g", NdArray<T>({dim}, T(1)));
    l.beta = ps.add(name + ".b", NdArray<T>({dim}));
    return l;
  }

  static LayerNorm non_affine() { return LayerNorm{}; }

  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gamma, beta); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> qkv, proj;
  int heads = 1;

  static MultiHeadAttention create(ParamStore<T>& ps, const std::string& name, std::int64_t dim,
                                   int heads, RngStream& rng) {
    if (dim % heads != 0)
      throw std::invalid_argument("attention: hidden size not divisible by head count");
    MultiHeadAttention a;
    a.qkv = Linear<T>::create(ps, name + ".qkv", dim, 3 * dim, rng);
    a.proj = Linear<T>::create(ps, name + ".proj", dim, dim, rng);
    a.heads = heads;
    return a;
  }

  Var<T> operator()(const Var<T>& x) const {
    const std::int64_t b = x->value.shape[0], l = x->value.shape[1], d = x->value.shape[2];
    const std::int64_t dh = d / heads;
    auto qkv_out = qkv(x);  // [B, L, 3D]
    auto split = ad::reshape(qkv_out, {b, l, 3, heads, dh});
    auto perm = ad::permute(split, {2, 0, 3, 1, 4});  // [3, B, H, L, dh]
    auto packed = ad::reshape(perm, {3, b * heads, l, dh});
    auto q = ad::reshape(ad::slice(packed, 0, 0, 1), {b * heads, l, dh});
    auto k = ad::reshape(ad::slice(packed, 0, 1, 1), {b * heads, l, dh});
    auto v = ad::reshape(ad::slice(packed, 0, 2, 1), {b * heads, l, dh});
    auto scores = ad::scale(ad::bmm(q, k, false, true),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto attn = ad::softmax_lastdim(scores);
    auto ctx = ad::bmm(attn, v);  // [BH, L, dh]
    auto merged = ad::reshape(
        ad::permute(ad::reshape(ctx, {b, heads, l, dh}), {0, 2, 1, 3}), {b, l, d});
    return proj(merged);
  }
};

/// Pre-LN ViT block: x += MHA(LN(x)); x += MLP(LN(x)) with GELU.
template <typename T>
struct VitBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Linear<T> fc1, fc2;

  static VitBlock create(ParamStore<T>& ps, const std::string& name, std::int64_t dim, int heads,
                         double mlp_ratio, RngStream& rng) {
    VitBlock blk;
    blk.ln1 = LayerNorm<T>::create(ps, name + ".ln1", dim);
    blk.ln2 = LayerNorm<T>::create(ps, name + ".ln2", dim);
    blk.attn = MultiHeadAttention<T>::create(ps, name + ".attn", dim, heads, rng);
    const auto hidden = static_cast<std::int64_t>(dim * mlp_ratio);
    blk.fc1 = Linear<T>::create(ps, name + ".fc1", dim, hidden, rng);
    blk.fc2 = Linear<T>::create(ps, name + ".fc2", hidden, dim, rng);
    return blk;
  }

  Var<T> operator()(const Var<T>& x) const {
    auto h = ad::add(x, attn(ln1(x)));
    auto m = fc2(ad::gelu(fc1(ln2(h))));
    return ad::add(h, m);
  }
};

// --- fixed embeddings ------------------------------------------------------------

/// 2-D sin-cos position table for a gh x gw token grid, width `dim`
/// (dim divisible by 4; half the features encode rows, half columns).
template <typename T>
NdArray<T> sincos_pos_2d(std::int64_t gh, std::int64_t gw, std::int64_t dim) {
  if (dim % 4 != 0) throw std::invalid_argument("sincos_pos_2d: dim must be divisible by 4");
  const std::int64_t quarter = dim / 4;
  NdArray<T> out({gh * gw, dim});
  for (std::int64_t i = 0; i < gh; ++i) {
    for (std::int64_t j = 0; j < gw; ++j) {
      T* row = out.ptr() + (i * gw + j) * dim;
      for (std::int64_t q = 0; q < quarter; ++q) {
        const double omega = std::pow(10000.0, -static_cast<double>(q) / quarter);
        row[q] = static_cast<T>(std::sin(i * omega));
        row[quarter + q] = static_cast<T>(std::cos(i * omega));
        row[2 * quarter + q] = static_cast<T>(std::sin(j * omega));
        row[3 * quarter + q] = static_cast<T>(std::cos(j * omega));
      }
    }
  }
  return out;
}

/// Sinusoidal timestep features, one row per batch element.
template <typename T>
NdArray<T> timestep_features(const std::vector<int>& t, std::int64_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("timestep_features: dim must be even");
  const std::int64_t half = dim / 2;
  NdArray<T> out({static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    T* row = out.ptr() + b * dim;
    for (std::int64_t q = 0; q < half; ++q) {
      const double omega = std::pow(10000.0, -static_cast<double>(q) / half);
      row[q] = static_cast<T>(std::sin(t[b] * omega));
      row[half + q] = static_cast<T>(std::cos(t[b] * omega));
    }
  }
  return out;
}

}  // namespace synweather::nn
