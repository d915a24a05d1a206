#pragma once

// Dominant token selection: keep the tokens that receive the most attention,
// either from the CLS query or, for encoders without CLS, on average.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "vzip/attention.hpp"
#include "vzip/tensor.hpp"

namespace vzip {

enum class HeadReduction { sum, mean };

struct SelectorConfig {
  // Tokens kept as dominant, CLS included when present.
  std::size_t dominant_count = 54;
  std::optional<std::size_t> cls_index;
  long layer = -2;
  // Pick dominant_count patches and add CLS on top (K + 1 tokens in total).
  bool cls_extra = false;
  HeadReduction head_reduction = HeadReduction::sum;
  Validation validation = Validation::strict;
};

struct DominantSelection {
  std::vector<std::vector<std::size_t>> indices;  // per batch item, ascending
  Tensor tokens;                                  // (B, K_d, D)
};

// Received attention of every token for one batch item, length S. On the
// CLS path the CLS entry is left at zero; choose_dominant ignores it.
inline std::vector<double> received_scores(const Tensor& attn, std::size_t b, std::optional<std::size_t> cls,
                                           HeadReduction reduction) {
  const std::size_t heads = attn.shape()[1];
  const std::size_t seq = attn.shape()[2];
  auto a = attn.data();
  std::vector<double> score(seq, 0.0);
  if (cls) {
    for (std::size_t h = 0; h < heads; ++h) {
      const float* row = a.data() + ((b * heads + h) * seq + *cls) * seq;
      for (std::size_t s = 0; s < seq; ++s) score[s] += row[s];
    }
    score[*cls] = 0.0;
  } else {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t q = 0; q < seq; ++q) {
        const float* row = a.data() + ((b * heads + h) * seq + q) * seq;
        for (std::size_t s = 0; s < seq; ++s) score[s] += row[s];
      }
    }
    for (double& v : score) v /= static_cast<double>(seq);
  }
  if (reduction == HeadReduction::mean)
    for (double& v : score) v /= static_cast<double>(heads);
  return score;
}

// Turns per-token scores into an ascending dominant index list. With a CLS
// index the CLS token is always kept and the remaining slots go to the
// highest-scoring other tokens.
inline std::vector<std::size_t> choose_dominant(std::span<const double> score, std::size_t count,
                                                std::optional<std::size_t> cls, bool cls_extra = false) {
  const std::size_t seq = score.size();
  if (count == 0) throw BudgetError("dominant_count must be at least 1");
  if (!cls) {
    if (count > seq) {
      throw BudgetError("dominant_count " + std::to_string(count) + " exceeds sequence length " + std::to_string(seq));
    }
    return topk_indices(score, count);
  }
  if (*cls >= seq) throw RangeError("cls_index " + std::to_string(*cls) + " >= sequence length " + std::to_string(seq));
  const std::size_t patches = cls_extra ? count : count - 1;
  if (patches + 1 > seq) {
    throw BudgetError("dominant_count " + std::to_string(count) + (cls_extra ? " plus CLS" : "") +
                      " exceeds sequence length " + std::to_string(seq));
  }
  std::vector<std::size_t> out{*cls};
  if (patches > 0) {
    std::vector<double> others;
    std::vector<std::size_t> origin;
    others.reserve(seq - 1);
    for (std::size_t s = 0; s < seq; ++s) {
      if (s == *cls) continue;
      others.push_back(score[s]);
      origin.push_back(s);
    }
    for (std::size_t j : topk_indices(std::span<const double>(others), patches)) out.push_back(origin[j]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline DominantSelection select_dominant(const Tensor& attn, const Tensor& hidden, const SelectorConfig& cfg) {
  if (attn.rank() != 4 || attn.shape()[2] != attn.shape()[3]) {
    throw DimensionError("attention must be (B, H, S, S), got " + shape_str(attn.shape()));
  }
  if (hidden.rank() != 3) throw DimensionError("hidden states must be (B, S, D), got " + shape_str(hidden.shape()));
  if (attn.shape()[0] != hidden.shape()[0] || attn.shape()[2] != hidden.shape()[1]) {
    throw DimensionError("attention " + shape_str(attn.shape()) + " and hidden " + shape_str(hidden.shape()) +
                         " disagree on batch or sequence length");
  }
  if (attn.shape()[1] == 0) throw DimensionError("attention has no heads");
  require_row_stochastic(attn, cfg.validation, "select_dominant");

  DominantSelection out;
  for (std::size_t b = 0; b < attn.shape()[0]; ++b) {
    const auto score = received_scores(attn, b, cfg.cls_index, cfg.head_reduction);
    out.indices.push_back(choose_dominant(score, cfg.dominant_count, cfg.cls_index, cfg.cls_extra));
  }
  out.tokens = gather_tokens(hidden, out.indices);
  return out;
}

}  // namespace vzip
