#pragma once

// Measures how unevenly attention is spread over tokens: received-attention
// profiles, histograms, top-k mass, Gini coefficient and per-layer traces.

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vzip/attention.hpp"
#include "vzip/stack.hpp"
#include "vzip/tensor.hpp"

namespace vzip {

enum class ReceivedSource { cls_row, column_mean };

inline const char* to_string(ReceivedSource s) { return s == ReceivedSource::cls_row ? "cls_row" : "column_mean"; }

struct ReceivedAttentionProfile {
  Tensor per_token;                       // (B, S')
  std::vector<std::size_t> token_index;   // profile column -> original token
  ReceivedSource source = ReceivedSource::column_mean;
  std::size_t layer_index = 0;
};

// With a CLS index: the CLS query row summed over heads, CLS column dropped,
// then divided by H. Without: mean over heads, then mean over queries.
inline ReceivedAttentionProfile received_attention(const Tensor& attn, std::optional<std::size_t> cls_index,
                                                   Validation mode = Validation::strict,
                                                   std::size_t layer_index = 0) {
  if (attn.rank() != 4 || attn.shape()[2] != attn.shape()[3]) {
    throw DimensionError("attention must be (B, H, S, S), got " + shape_str(attn.shape()));
  }
  const std::size_t batch = attn.shape()[0];
  const std::size_t heads = attn.shape()[1];
  const std::size_t seq = attn.shape()[2];
  if (heads == 0 || seq == 0) throw DimensionError("attention has no heads or no tokens");
  require_row_stochastic(attn, mode, "received_attention");

  ReceivedAttentionProfile out;
  out.layer_index = layer_index;
  auto a = attn.data();

  if (cls_index) {
    const std::size_t cls = *cls_index;
    if (seq < 2) throw DimensionError("CLS-row profile needs at least 2 tokens");
    if (cls >= seq) throw RangeError("cls_index " + std::to_string(cls) + " >= sequence length " + std::to_string(seq));
    out.source = ReceivedSource::cls_row;
    for (std::size_t s = 0; s < seq; ++s)
      if (s != cls) out.token_index.push_back(s);
    out.per_token = Tensor({batch, seq - 1});
    auto p = out.per_token.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < seq - 1; ++j) {
        const std::size_t s = out.token_index[j];
        double acc = 0.0;
        for (std::size_t h = 0; h < heads; ++h) acc += a[((b * heads + h) * seq + cls) * seq + s];
        p[b * (seq - 1) + j] = static_cast<float>(acc / static_cast<double>(heads));
      }
    }
  } else {
    out.source = ReceivedSource::column_mean;
    out.token_index.resize(seq);
    std::iota(out.token_index.begin(), out.token_index.end(), std::size_t{0});
    out.per_token = mean_axis(mean_axis(attn, 1), 1);
  }
  return out;
}

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct TopkMass {
  std::size_t k = 0;
  double mass = 0.0;
};

struct ConcentrationReport {
  std::size_t tokens = 0;
  std::vector<HistogramBin> histogram;
  double low_mass_fraction = 0.0;
  std::vector<TopkMass> topk_mass;
  double gini = 0.0;
};

struct ConcentrationConfig {
  std::size_t bins = 50;
  double low_threshold = 1e-3;
  std::vector<std::size_t> ks{8, 16, 32, 64};
};

// Gini coefficient via the sorted cumulative form
//   G = 2 * sum_i i * x_(i) / (n * sum x) - (n + 1) / n,  i = 1..n ascending.
// Defined as 0 for an all-zero distribution.
inline double gini(std::span<const float> values) {
  const std::size_t n = values.size();
  if (n == 0) throw EmptyAxisError("gini of an empty distribution");
  std::vector<double> x(values.begin(), values.end());
  std::sort(x.begin(), x.end());
  double total = 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += x[i];
    weighted += static_cast<double>(i + 1) * x[i];
  }
  if (total <= 0.0) return 0.0;
  const double nd = static_cast<double>(n);
  return std::max(0.0, 2.0 * weighted / (nd * total) - (nd + 1.0) / nd);
}

// Fraction of total mass held by the k largest values.
inline double topk_mass(std::span<const float> values, std::size_t k) {
  if (k == 0 || k > values.size()) {
    throw BudgetError("topk_mass: k=" + std::to_string(k) + " not in [1, " + std::to_string(values.size()) + "]");
  }
  std::vector<double> x(values.begin(), values.end());
  std::sort(x.begin(), x.end(), std::greater<>{});
  double total = 0.0;
  for (double v : x) total += v;
  double top = 0.0;
  for (std::size_t i = 0; i < k; ++i) top += x[i];
  if (total <= 0.0) return static_cast<double>(k) / static_cast<double>(x.size());
  return top / total;
}

// Bins are [lo, hi) except the last, which is closed, over [0, max(values)].
inline std::vector<HistogramBin> histogram(std::span<const float> values, std::size_t bins) {
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  double mx = 0.0;
  for (float v : values) mx = std::max(mx, static_cast<double>(v));
  std::vector<HistogramBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].lo = mx * static_cast<double>(i) / static_cast<double>(bins);
    out[i].hi = mx * static_cast<double>(i + 1) / static_cast<double>(bins);
  }
  for (float fv : values) {
    const double v = fv;
    std::size_t idx = mx > 0.0 ? static_cast<std::size_t>(v / mx * static_cast<double>(bins)) : 0;
    idx = std::min(idx, bins - 1);
    while (idx > 0 && v < out[idx].lo) --idx;
    while (idx + 1 < bins && v >= out[idx + 1].lo) ++idx;
    ++out[idx].count;
  }
  return out;
}

inline ConcentrationReport concentration(std::span<const float> values, const ConcentrationConfig& cfg) {
  if (values.empty()) throw EmptyAxisError("concentration of an empty profile");
  require_finite(values, "concentration");
  for (float v : values)
    if (v < 0.0f) throw NumericInputError("concentration: received attention must be non-negative");
  ConcentrationReport r;
  r.tokens = values.size();
  r.histogram = histogram(values, cfg.bins);
  const auto low = std::count_if(values.begin(), values.end(), [&](float v) { return v < cfg.low_threshold; });
  r.low_mass_fraction = static_cast<double>(low) / static_cast<double>(values.size());
  for (std::size_t k : cfg.ks) r.topk_mass.push_back({k, topk_mass(values, k)});
  r.gini = gini(values);
  return r;
}

struct ProfileReport {
  std::vector<ConcentrationReport> per_batch;
  // Histogram, low-mass fraction and Gini over all tokens of all batch items;
  // top-k mass is the mean of the per-item values, since top-k is per image.
  ConcentrationReport pooled;
};

inline ProfileReport concentration(const ReceivedAttentionProfile& profile, const ConcentrationConfig& cfg) {
  const Tensor& p = profile.per_token;
  if (p.rank() != 2 || p.empty()) throw EmptyAxisError("concentration of an empty profile " + shape_str(p.shape()));
  const std::size_t batch = p.shape()[0];
  const std::size_t tokens = p.shape()[1];
  ProfileReport out;
  for (std::size_t b = 0; b < batch; ++b) out.per_batch.push_back(concentration(p.data().subspan(b * tokens, tokens), cfg));
  out.pooled = concentration(p.data(), ConcentrationConfig{cfg.bins, cfg.low_threshold, {}});
  for (std::size_t i = 0; i < cfg.ks.size(); ++i) {
    double acc = 0.0;
    for (const auto& r : out.per_batch) acc += r.topk_mass[i].mass;
    out.pooled.topk_mass.push_back({cfg.ks[i], acc / static_cast<double>(batch)});
  }
  return out;
}

struct LayerTraceEntry {
  std::size_t layer = 0;
  double topk_mass = 0.0;
  double gini = 0.0;
};

struct LayerTrace {
  std::vector<LayerTraceEntry> per_layer;
};

// Per-layer top-k mass and Gini (pooled over the batch), pulling one layer
// at a time from `load`.
inline LayerTrace layer_trace(std::size_t num_layers, const std::function<Tensor(std::size_t)>& load,
                              std::optional<std::size_t> cls_index, std::size_t k, Validation mode,
                              ReceivedSource source) {
  if (num_layers == 0) throw ValidationError("layer_trace: attention stack is empty");
  if (source == ReceivedSource::cls_row && !cls_index) {
    throw ValidationError("layer_trace: CLS-row source requested but there is no CLS token");
  }
  std::optional<std::size_t> cls;
  if (source == ReceivedSource::cls_row) cls = cls_index;
  const ConcentrationConfig cfg{1, 0.0, {k}};
  LayerTrace trace;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto report = concentration(received_attention(load(l), cls, mode, l), cfg);
    trace.per_layer.push_back({l, report.pooled.topk_mass[0].mass, report.pooled.gini});
  }
  return trace;
}

// The source defaults to the CLS row when the stack has a CLS token.
inline LayerTrace layer_trace(const AttentionStack& stack, std::size_t k, Validation mode = Validation::strict,
                              std::optional<ReceivedSource> source = std::nullopt) {
  const ReceivedSource src = source.value_or(stack.cls_index ? ReceivedSource::cls_row : ReceivedSource::column_mean);
  return layer_trace(
      stack.num_layers(), [&](std::size_t l) { return stack.layers[l]; }, stack.cls_index, k, mode, src);
}

}  // namespace vzip
