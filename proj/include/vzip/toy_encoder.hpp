#pragma once

// Seeded fixtures: a tiny bidirectional transformer encoder with planted
// attention sinks, and direct generators of row-stochastic attention.
//
// All randomness comes from CounterStream, a counter-based generator:
//   key      = splitmix64(seed ^ splitmix64(stream))
//   bits(i)  = splitmix64(key + i)
//   unit(i)  = (bits(i) >> 40) * 2^-24            in [0, 1), exact in float
//   uniform  = lo + (hi - lo) * unit(i)           evaluated in float
// where splitmix64 is the standard SplitMix64 finalizer. Element i of every
// tensor uses counter i of its own stream, so output does not depend on
// evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vzip/attention.hpp"
#include "vzip/stack.hpp"
#include "vzip/tensor.hpp"

namespace vzip {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class CounterStream {
 public:
  constexpr CounterStream(std::uint64_t seed, std::uint64_t stream) : key_(splitmix64(seed ^ splitmix64(stream))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const { return splitmix64(key_ + counter); }

  constexpr float unit(std::uint64_t counter) const {
    return static_cast<float>(bits(counter) >> 40) * (1.0f / 16777216.0f);
  }

  constexpr float uniform(std::uint64_t counter, float lo, float hi) const { return lo + (hi - lo) * unit(counter); }

  Tensor fill(Shape shape, float lo, float hi) const {
    Tensor t(std::move(shape));
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = uniform(i, lo, hi);
    return t;
  }

 private:
  std::uint64_t key_;
};

struct ToyConfig {
  std::size_t layers = 24;
  std::size_t heads = 8;
  std::size_t seq = 577;  // CLS at index 0 when has_cls
  std::size_t d_model = 256;
  std::size_t d_head = 32;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  bool has_cls = true;
  // Bias added to the pre-softmax logits of every sink column, per layer.
  std::vector<float> sink_schedule;
  std::vector<std::size_t> sink_columns;
  // Zero the query/key projections so every attention row is uniform.
  bool zero_qk = false;
};

// Linear ramp 0 .. peak across the layers.
inline std::vector<float> ramp_schedule(std::size_t layers, float peak) {
  std::vector<float> s(layers, 0.0f);
  for (std::size_t l = 0; l < layers && layers > 1; ++l)
    s[l] = static_cast<float>(static_cast<double>(peak) * static_cast<double>(l) / static_cast<double>(layers - 1));
  if (layers == 1) s[0] = peak;
  return s;
}

// `count` columns spread evenly over the non-CLS tokens.
inline std::vector<std::size_t> spread_columns(std::size_t seq, std::size_t count, bool has_cls) {
  const std::size_t first = has_cls ? 1 : 0;
  const std::size_t n = seq - first;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count && n > 0; ++i) out.push_back(first + (2 * i + 1) * n / (2 * count));
  return out;
}

inline void validate(const ToyConfig& c) {
  auto bad = [](const std::string& why) { throw ValidationError("toy encoder: " + why); };
  if (c.layers == 0 || c.heads == 0 || c.d_head == 0 || c.batch == 0) bad("layers, heads, d_head and batch must be positive");
  if (c.d_model != c.heads * c.d_head) bad("d_model must equal heads * d_head");
  if (c.seq < 2) bad("seq must be at least 2");
  if (c.sink_schedule.size() != c.layers) bad("sink_schedule needs one entry per layer");
  std::set<std::size_t> seen;
  for (std::size_t s : c.sink_columns) {
    if (s >= c.seq) bad("sink column " + std::to_string(s) + " out of range");
    if (!seen.insert(s).second) bad("duplicate sink column " + std::to_string(s));
  }
  for (float b : c.sink_schedule)
    if (!std::isfinite(b)) bad("sink_schedule must be finite");
}

struct ToyOutput {
  AttentionStack attention;
  HiddenStack hidden;
  KeyStack keys;  // (B, H, S, D_h) per layer
};

namespace detail {

// (B, S, H*Dh) -> (B, H, S, Dh)
inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.shape()[0], s = x.shape()[1], d = x.shape()[2], dh = d / heads;
  Tensor out({b, heads, s, dh});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < s; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(src.data() + (i * s + t) * d + h * dh, dh, dst.data() + ((i * heads + h) * s + t) * dh);
  return out;
}

// (B, H, S, Dh) -> (B, S, H*Dh)
inline Tensor merge_heads(const Tensor& x) {
  const std::size_t b = x.shape()[0], heads = x.shape()[1], s = x.shape()[2], dh = x.shape()[3];
  Tensor out({b, s, heads * dh});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < s; ++t)
        std::copy_n(src.data() + ((i * heads + h) * s + t) * dh, dh, dst.data() + (i * s + t) * heads * dh + h * dh);
  return out;
}

inline Tensor rms_norm(const Tensor& x) {
  Tensor out = x;
  const std::size_t d = x.shape().back();
  auto v = out.data();
  for (std::size_t base = 0; base < v.size(); base += d) {
    double ss = 0.0;
    for (std::size_t e = 0; e < d; ++e) ss += static_cast<double>(v[base + e]) * v[base + e];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + 1e-6);
    for (std::size_t e = 0; e < d; ++e) v[base + e] = static_cast<float>(v[base + e] * inv);
  }
  return out;
}

inline constexpr std::uint64_t kEmbeddingStream = 1;
inline constexpr std::uint64_t kWeightStreamBase = 16;

}  // namespace detail

// Pre-norm attention-only encoder: x <- x + Attn(rms(x)) Wo, with weights
// uniform(-0.1, 0.1) and token embeddings uniform(-1, 1). Layer l adds
// sink_schedule[l] to the logits of every sink column before softmax.
inline ToyOutput run_toy_encoder(const ToyConfig& cfg) {
  validate(cfg);
  const std::size_t d = cfg.d_model;
  ToyOutput out;
  if (cfg.has_cls) out.attention.cls_index = 0;

  Tensor x = CounterStream(cfg.seed, detail::kEmbeddingStream).fill({cfg.batch, cfg.seq, d}, -1.0f, 1.0f);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto weight = [&](std::uint64_t w) {
      if (cfg.zero_qk && w < 2) return Tensor({d, d});
      return CounterStream(cfg.seed, detail::kWeightStreamBase + 4 * l + w).fill({d, d}, -0.1f, 0.1f);
    };
    const Tensor hn = detail::rms_norm(x);
    HeadProjections proj{detail::split_heads(matmul(hn, weight(0)), cfg.heads),
                         detail::split_heads(matmul(hn, weight(1)), cfg.heads)};
    const Tensor v = detail::split_heads(matmul(hn, weight(2)), cfg.heads);

    Tensor logits = attention_logits(proj);
    const float bias = cfg.sink_schedule[l];
    if (bias != 0.0f) {
      auto lg = logits.data();
      for (std::size_t row = 0; row < lg.size() / cfg.seq; ++row)
        for (std::size_t c : cfg.sink_columns) lg[row * cfg.seq + c] += bias;
    }
    Tensor attn = softmax(logits, 3);
    const Tensor o = detail::merge_heads(matmul(attn, v));
    const Tensor delta = matmul(o, weight(3));
    auto xd = x.data();
    auto dd = delta.data();
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += dd[i];

    out.attention.layers.push_back(std::move(attn));
    out.hidden.layers.push_back(x);
    out.keys.layers.push_back(std::move(proj.k));
  }
  return out;
}

enum class AttentionMode { uniform, sink, random_stochastic };

struct AttentionGenConfig {
  std::size_t batch = 1;
  std::size_t heads = 1;
  std::size_t seq = 16;
  std::uint64_t seed = 0;
  std::vector<std::size_t> sink_columns;  // sink mode: planted columns
  double sink_mass = 0.9;                 // sink mode: total mass on the sinks per row
};

inline Tensor gen_attention(AttentionMode mode, const AttentionGenConfig& cfg) {
  if (cfg.batch == 0 || cfg.heads == 0 || cfg.seq == 0) throw ValidationError("gen_attention: dimensions must be positive");
  const std::size_t s = cfg.seq;
  Tensor out({cfg.batch, cfg.heads, s, s});
  auto d = out.data();
  switch (mode) {
    case AttentionMode::uniform:
      for (float& v : d) v = static_cast<float>(1.0 / static_cast<double>(s));
      break;
    case AttentionMode::sink: {
      const std::size_t n = cfg.sink_columns.size();
      if (!(cfg.sink_mass >= 0.0 && cfg.sink_mass < 1.0)) throw ValidationError("gen_attention: sink mass must lie in [0, 1)");
      if (n == 0 || n >= s) throw ValidationError("gen_attention: need between 1 and seq-1 sink columns");
      std::vector<double> row(s, (1.0 - cfg.sink_mass) / static_cast<double>(s - n));
      std::set<std::size_t> seen;
      for (std::size_t c : cfg.sink_columns) {
        if (c >= s || !seen.insert(c).second) throw ValidationError("gen_attention: invalid sink column " + std::to_string(c));
        row[c] = cfg.sink_mass / static_cast<double>(n);
      }
      for (std::size_t base = 0; base < d.size(); base += s)
        for (std::size_t j = 0; j < s; ++j) d[base + j] = static_cast<float>(row[j]);
      break;
    }
    case AttentionMode::random_stochastic: {
      const Tensor noise = CounterStream(cfg.seed, 2).fill(out.shape(), -2.0f, 2.0f);
      out = softmax(noise, 3);
      break;
    }
  }
  return out;
}

}  // namespace vzip
