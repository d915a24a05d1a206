#pragma once

// Contextual token merging. Non-dominant tokens are split uniformly into
// targets and merge tokens; each merge token joins the target whose key it
// matches best, and each group is averaged in hidden-state space.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "vzip/selector.hpp"
#include "vzip/tensor.hpp"

namespace vzip {

struct SplitResult {
  std::vector<std::size_t> targets;
  std::vector<std::size_t> merge;
};

// targets[i] = remaining[floor(i * R / m)]. With m = 0 every remaining token
// would be discarded, which is refused unless allow_drop is set.
inline SplitResult uniform_split(std::span<const std::size_t> remaining, std::size_t m, bool allow_drop = false) {
  const std::size_t r = remaining.size();
  if (m > r) {
    throw BudgetError("contextual_count " + std::to_string(m) + " exceeds the " + std::to_string(r) +
                      " remaining tokens");
  }
  if (m == 0 && r > 0 && !allow_drop) {
    throw BudgetError("contextual_count 0 would drop " + std::to_string(r) +
                      " remaining tokens; enable drop_remainder to allow it");
  }
  SplitResult out;
  std::vector<bool> is_target(r, false);
  for (std::size_t i = 0; i < m; ++i) is_target[i * r / m] = true;
  for (std::size_t i = 0; i < r; ++i) (is_target[i] ? out.targets : out.merge).push_back(remaining[i]);
  return out;
}

enum class Similarity { dot, cosine };

struct MergeConfig {
  std::size_t contextual_count = 10;
  Similarity similarity = Similarity::dot;
  bool drop_remainder = false;
};

struct BatchAssignment {
  std::vector<std::size_t> target_indices;  // ascending original indices
  std::vector<std::size_t> merge_indices;   // ascending original indices
  std::vector<std::size_t> assignment;      // merge_indices[i] joins target_indices[assignment[i]];
                                            // empty when the remainder was dropped
};

struct MergeAssignment {
  std::vector<BatchAssignment> batches;
  Tensor contextual_tokens;  // (B, M, D)
};

namespace detail {

// One feature row per token: (B, S, D_k) as is, (B, H, S, D_h) with heads
// concatenated.
inline std::vector<double> token_key(const Tensor& keys, std::size_t b, std::size_t s) {
  auto d = keys.data();
  if (keys.rank() == 3) {
    const std::size_t seq = keys.shape()[1];
    const std::size_t dk = keys.shape()[2];
    const float* p = d.data() + (b * seq + s) * dk;
    return std::vector<double>(p, p + dk);
  }
  const std::size_t heads = keys.shape()[1];
  const std::size_t seq = keys.shape()[2];
  const std::size_t dh = keys.shape()[3];
  std::vector<double> out;
  out.reserve(heads * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* p = d.data() + ((b * heads + h) * seq + s) * dh;
    out.insert(out.end(), p, p + dh);
  }
  return out;
}

inline void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

}  // namespace detail

inline MergeAssignment merge_contextual(const Tensor& keys, const Tensor& hidden,
                                        const std::vector<std::vector<std::size_t>>& dominant,
                                        const MergeConfig& cfg) {
  if (hidden.rank() != 3) throw DimensionError("hidden states must be (B, S, D), got " + shape_str(hidden.shape()));
  const std::size_t batch = hidden.shape()[0];
  const std::size_t seq = hidden.shape()[1];
  const std::size_t dim = hidden.shape()[2];
  const bool multi_head = keys.rank() == 4;
  if (!(keys.rank() == 3 || multi_head) || keys.shape()[0] != batch || keys.shape()[multi_head ? 2 : 1] != seq) {
    throw DimensionError("keys " + shape_str(keys.shape()) + " do not align with hidden states " +
                         shape_str(hidden.shape()));
  }
  if (dominant.size() != batch) throw DimensionError("dominant index lists do not match the batch size");
  require_finite(keys, "merge keys");

  const std::size_t m = cfg.contextual_count;
  MergeAssignment out;
  out.contextual_tokens = Tensor({batch, m, dim});
  auto h = hidden.data();
  auto ctx = out.contextual_tokens.data();

  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<bool> taken(seq, false);
    for (std::size_t s : dominant[b]) {
      if (s >= seq) throw RangeError("dominant index " + std::to_string(s) + " >= " + std::to_string(seq));
      taken[s] = true;
    }
    std::vector<std::size_t> remaining;
    for (std::size_t s = 0; s < seq; ++s)
      if (!taken[s]) remaining.push_back(s);
    if (m > 0 && remaining.empty()) throw BudgetError("no tokens remain to form contextual tokens");

    auto split = uniform_split(remaining, m, cfg.drop_remainder);
    BatchAssignment ba;
    ba.target_indices = std::move(split.targets);
    ba.merge_indices = std::move(split.merge);

    std::vector<std::vector<double>> target_keys;
    for (std::size_t t : ba.target_indices) {
      target_keys.push_back(detail::token_key(keys, b, t));
      if (cfg.similarity == Similarity::cosine) detail::normalize(target_keys.back());
    }
    std::vector<double> sim(m);
    // With m = 0 the merge tokens are the dropped remainder and stay unassigned.
    for (std::size_t s : m > 0 ? std::span<const std::size_t>(ba.merge_indices) : std::span<const std::size_t>()) {
      auto key = detail::token_key(keys, b, s);
      if (cfg.similarity == Similarity::cosine) detail::normalize(key);
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < key.size(); ++e) acc += key[e] * target_keys[j][e];
        sim[j] = acc;
      }
      ba.assignment.push_back(argmax(std::span<const double>(sim)));
    }

    // Group means: target first, then its merge tokens in ascending order.
    std::vector<std::vector<double>> sums(m, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(m, 1);
    for (std::size_t j = 0; j < m; ++j) {
      const float* row = h.data() + (b * seq + ba.target_indices[j]) * dim;
      for (std::size_t e = 0; e < dim; ++e) sums[j][e] += row[e];
    }
    for (std::size_t i = 0; i < ba.assignment.size(); ++i) {
      const std::size_t j = ba.assignment[i];
      const float* row = h.data() + (b * seq + ba.merge_indices[i]) * dim;
      for (std::size_t e = 0; e < dim; ++e) sums[j][e] += row[e];
      ++counts[j];
    }
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t e = 0; e < dim; ++e)
        ctx[(b * m + j) * dim + e] = static_cast<float>(sums[j][e] / static_cast<double>(counts[j]));

    out.batches.push_back(std::move(ba));
  }
  return out;
}

inline MergeAssignment merge_contextual(const Tensor& keys, const Tensor& hidden, const DominantSelection& dominant,
                                        const MergeConfig& cfg) {
  return merge_contextual(keys, hidden, dominant.indices, cfg);
}

}  // namespace vzip
