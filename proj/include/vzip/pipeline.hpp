#pragma once

// Token budget handling and the end-to-end compression: dominant selection
// followed by contextual merging on one encoder layer.

#include <optional>
#include <string>
#include <vector>

#include "vzip/merger.hpp"
#include "vzip/selector.hpp"
#include "vzip/stack.hpp"

namespace vzip {

struct TokenBudget {
  std::size_t total = 0;
  std::size_t dominant = 0;
  std::size_t contextual = 0;

  friend bool operator==(const TokenBudget&, const TokenBudget&) = default;
};

inline TokenBudget make_budget(std::size_t dominant, std::size_t contextual) {
  if (dominant == 0) throw BudgetError("dominant token count must be at least 1");
  return {dominant + contextual, dominant, contextual};
}

// 27/32 of the budget is dominant, rounded half down; the rest is contextual.
// Reproduces 64 -> 54/10, 128 -> 108/20, 192 -> 162/30 and the 5-crop
// totals 160 -> 135/25, 320 -> 270/50, 640 -> 540/100.
inline TokenBudget default_split(std::size_t total) {
  if (total == 0) throw BudgetError("token budget must be at least 1");
  const std::size_t scaled = total * 27;
  const std::size_t dominant = scaled / 32 + (scaled % 32 > 16 ? 1 : 0);
  return make_budget(dominant, total - dominant);
}

// Divides a multi-crop budget evenly; both parts must divide by the crop count.
inline TokenBudget split_across_crops(const TokenBudget& total, std::size_t crops) {
  if (crops == 0) throw BudgetError("crop count must be at least 1");
  if (total.dominant % crops != 0 || total.contextual % crops != 0) {
    throw BudgetError("budget " + std::to_string(total.dominant) + "+" + std::to_string(total.contextual) +
                      " does not divide evenly across " + std::to_string(crops) + " crops");
  }
  return make_budget(total.dominant / crops, total.contextual / crops);
}

enum class KeySource { keys, hidden };

struct ZipOptions {
  KeySource key_source = KeySource::keys;
  Similarity similarity = Similarity::dot;
  bool drop_remainder = false;
};

struct ZipResult {
  Tensor tokens;  // (B, K, D): dominant block, then contextual block
  std::vector<std::vector<std::size_t>> dominant_indices;
  std::vector<BatchAssignment> merges;
  TokenBudget budget;  // as realised; dominant includes CLS
  std::size_t layer = 0;
};

// Compresses the tokens of one layer. `keys` may be null when no contextual
// tokens are requested or when opts.key_source is KeySource::hidden.
inline ZipResult zip_layer(const Tensor& attn, const Tensor& hidden, const Tensor* keys,
                           std::optional<std::size_t> cls_index, const TokenBudget& budget, SelectorConfig cfg,
                           const ZipOptions& opts = {}) {
  if (budget.dominant + budget.contextual != budget.total || budget.dominant == 0) {
    throw BudgetError("inconsistent token budget");
  }
  if (hidden.rank() != 3) throw DimensionError("hidden states must be (B, S, D), got " + shape_str(hidden.shape()));
  const std::size_t seq = hidden.shape()[1];
  if (budget.total > seq) {
    throw BudgetError("budget " + std::to_string(budget.total) + " exceeds the " + std::to_string(seq) + " tokens");
  }

  // With no contextual tokens the keys are never compared, so the hidden
  // states stand in for missing keys.
  const Tensor* key_tensor = &hidden;
  if (opts.key_source == KeySource::keys) {
    if (keys) {
      key_tensor = keys;
    } else if (budget.contextual > 0) {
      throw ValidationError("contextual merging needs key projections; none supplied (use hidden states as keys explicitly)");
    }
  }

  cfg.cls_index = cls_index;
  cfg.dominant_count = budget.dominant;
  DominantSelection dom = select_dominant(attn, hidden, cfg);

  ZipResult out;
  out.dominant_indices = std::move(dom.indices);
  const std::size_t batch = hidden.shape()[0];
  const std::size_t dim = hidden.shape()[2];
  const std::size_t kd = dom.tokens.shape()[1];

  MergeConfig mc{budget.contextual, opts.similarity, opts.drop_remainder};
  MergeAssignment merged = merge_contextual(*key_tensor, hidden, out.dominant_indices, mc);
  out.merges = std::move(merged.batches);
  const Tensor& ctx = merged.contextual_tokens;
  const std::size_t m = ctx.shape()[1];
  out.budget = make_budget(kd, m);

  out.tokens = Tensor({batch, kd + m, dim});
  auto dst = out.tokens.data();
  auto dd = dom.tokens.data();
  auto cd = ctx.data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(dd.data() + b * kd * dim, kd * dim, dst.data() + b * (kd + m) * dim);
    std::copy_n(cd.data() + b * m * dim, m * dim, dst.data() + (b * (kd + m) + kd) * dim);
  }
  return out;
}

// Resolves cfg.layer (default -2) in both stacks and compresses that layer.
inline ZipResult zip(const AttentionStack& attn, const HiddenStack& hidden, const KeyStack* keys,
                     const TokenBudget& budget, const SelectorConfig& cfg, const ZipOptions& opts = {}) {
  if (attn.num_layers() == 0) throw ValidationError("attention stack is empty");
  if (attn.num_layers() != hidden.num_layers()) {
    throw ValidationError("attention stack has " + std::to_string(attn.num_layers()) + " layers, hidden stack " +
                          std::to_string(hidden.num_layers()));
  }
  if (keys && !keys->layers.empty() && keys->num_layers() != attn.num_layers()) {
    throw ValidationError("key stack has " + std::to_string(keys->num_layers()) + " layers, attention stack " +
                          std::to_string(attn.num_layers()));
  }
  const std::size_t layer = resolve_layer(cfg.layer, attn.num_layers());
  const Tensor* key_tensor = keys && !keys->layers.empty() ? &keys->layers[layer] : nullptr;
  ZipResult out = zip_layer(attn.layers[layer], hidden.layers[layer], key_tensor, attn.cls_index, budget, cfg, opts);
  out.layer = layer;
  return out;
}

struct CropInput {
  AttentionStack attention;
  HiddenStack hidden;
  std::optional<KeyStack> keys;
};

struct MultiCropResult {
  Tensor tokens;  // (B, crops * K_crop, D), crops in input order
  std::vector<ZipResult> crops;
};

// Each crop is zipped independently with the same per-crop budget and the
// results are concatenated along the token axis.
inline MultiCropResult zip_multi_crop(const std::vector<CropInput>& crops, const TokenBudget& per_crop,
                                      const SelectorConfig& cfg, const ZipOptions& opts = {}) {
  if (crops.empty()) throw ValidationError("zip_multi_crop needs at least one crop");
  MultiCropResult out;
  for (const CropInput& c : crops) {
    out.crops.push_back(zip(c.attention, c.hidden, c.keys ? &*c.keys : nullptr, per_crop, cfg, opts));
    const auto& ref = out.crops.front().tokens.shape();
    const auto& cur = out.crops.back().tokens.shape();
    if (cur[0] != ref[0] || cur[2] != ref[2] ||
        c.hidden.layers[out.crops.back().layer].shape() != crops.front().hidden.layers[out.crops.front().layer].shape()) {
      throw DimensionError("crops differ in shape: " + shape_str(cur) + " vs " + shape_str(ref));
    }
  }
  const std::size_t batch = out.crops.front().tokens.shape()[0];
  const std::size_t k = out.crops.front().tokens.shape()[1];
  const std::size_t dim = out.crops.front().tokens.shape()[2];
  const std::size_t n = out.crops.size();
  out.tokens = Tensor({batch, n * k, dim});
  auto dst = out.tokens.data();
  for (std::size_t c = 0; c < n; ++c) {
    auto src = out.crops[c].tokens.data();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(src.data() + b * k * dim, k * dim, dst.data() + (b * n * k + c * k) * dim);
  }
  return out;
}

// (B, K, D) with B = images * crops, crops of one image adjacent, to
// (images, crops * K, D): the same layout zip_multi_crop produces.
inline Tensor fold_crops(const Tensor& tokens, std::size_t crops) {
  if (tokens.rank() != 3) throw DimensionError("fold_crops expects (B, K, D), got " + shape_str(tokens.shape()));
  if (crops == 0 || tokens.shape()[0] % crops != 0) {
    throw BudgetError("batch of " + std::to_string(tokens.shape()[0]) + " is not a multiple of " +
                      std::to_string(crops) + " crops");
  }
  return tokens.reshaped({tokens.shape()[0] / crops, crops * tokens.shape()[1], tokens.shape()[2]});
}

}  // namespace vzip
