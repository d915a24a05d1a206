#pragma once

// Scaled dot-product attention weights and the softmax self-derivative used
// to reason about why attention collapses onto a few tokens.

#include <cmath>
#include <span>
#include <vector>

#include "vzip/tensor.hpp"

namespace vzip {

// Per-head queries and keys, both (B, H, S, D_h).
struct HeadProjections {
  Tensor q;
  Tensor k;

  std::size_t head_dim() const { return q.rank() == 4 ? q.shape()[3] : 0; }
};

struct AttentionMap {
  Tensor per_head;  // (B, H, S, S), rows sum to 1
  Tensor averaged;  // (B, S, S), mean over heads
};

inline void validate_projections(const HeadProjections& p) {
  if (p.q.rank() != 4) throw DimensionError("queries must be (B, H, S, D_h), got " + shape_str(p.q.shape()));
  if (p.q.shape() != p.k.shape()) {
    throw DimensionError("query shape " + shape_str(p.q.shape()) + " != key shape " + shape_str(p.k.shape()));
  }
  if (p.head_dim() == 0) throw DimensionError("head dimension must be at least 1");
  if (p.q.shape()[2] == 0) throw DimensionError("sequence length must be at least 1");
}

// Q K^T / sqrt(D_h), shape (B, H, S, S).
inline Tensor attention_logits(const HeadProjections& p) {
  validate_projections(p);
  require_finite(p.q, "attention queries");
  require_finite(p.k, "attention keys");
  return scale(matmul(p.q, transpose_last2(p.k)), 1.0 / std::sqrt(static_cast<double>(p.head_dim())));
}

// No causal mask: vision encoders attend bidirectionally. The head mean is
// kept rather than the head sum; any selector may rescale by H without
// changing which tokens rank highest.
inline AttentionMap attention_scores(const HeadProjections& p) {
  AttentionMap out;
  out.per_head = softmax(attention_logits(p), 3);
  out.averaged = mean_axis(out.per_head, 1);
  return out;
}

// d softmax(z)_i / d z_i = s_i (1 - s_i). Off-diagonal terms are not needed.
template <std::floating_point T>
std::vector<double> softmax_jacobian_diag(std::span<const T> z) {
  std::vector<double> s = softmax(z);
  for (double& v : s) v = v * (1.0 - v);
  return s;
}

// Largest |row sum - 1| over the last axis.
inline double row_stochastic_error(const Tensor& attn) {
  if (attn.rank() == 0) return 0.0;
  const std::size_t n = attn.shape().back();
  if (n == 0) return 0.0;
  double worst = 0.0;
  auto d = attn.data();
  for (std::size_t base = 0; base < d.size(); base += n) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += d[base + j];
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

enum class Validation { strict, lenient };

inline constexpr double kStochasticTolerance = 1e-4;

// Rejects non-finite attention, and under Validation::strict also rows that
// do not sum to one within tolerance.
inline void require_row_stochastic(const Tensor& attn, Validation mode, const char* what) {
  require_finite(attn, what);
  if (mode == Validation::lenient) return;
  const double err = row_stochastic_error(attn);
  if (err > kStochasticTolerance) {
    throw NumericInputError(std::string(what) + ": attention rows deviate from 1 by up to " + std::to_string(err) +
                            " (tolerance 1e-4)");
  }
}

}  // namespace vzip
