#pragma once

// Analytical prefill cost of a decoder-only language model:
//   FLOPs = T * (4 n d^2 + 2 n^2 d + 2 n d m),  n = n_text + n_img.
// No decode/KV-cache term is modelled.

#include <cstdint>
#include <string>

#include "vzip/error.hpp"

namespace vzip {

struct ModelDims {
  std::uint64_t layers = 0;  // T
  std::uint64_t hidden = 0;  // d
  std::uint64_t ffn = 0;     // m
  std::uint64_t text = 0;    // system prompt + question tokens
  std::uint64_t image = 0;   // visual tokens

  std::uint64_t sequence() const { return text + image; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

namespace detail {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw ValidationError("FLOP count overflows 64 bits");
  return r;
}

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) throw ValidationError("FLOP count overflows 64 bits");
  return r;
}

}  // namespace detail

inline void validate(const ModelDims& d) {
  if (d.layers == 0 || d.hidden == 0 || d.ffn == 0) {
    throw ValidationError("layers, hidden and ffn sizes must be positive");
  }
  if (d.sequence() == 0) throw ValidationError("sequence length must be positive");
}

inline std::uint64_t total_flops(const ModelDims& d) {
  validate(d);
  using detail::checked_add;
  using detail::checked_mul;
  const std::uint64_t n = d.sequence();
  const std::uint64_t projections = checked_mul(checked_mul(4, n), checked_mul(d.hidden, d.hidden));
  const std::uint64_t attention = checked_mul(checked_mul(2, checked_mul(n, n)), d.hidden);
  const std::uint64_t ffn = checked_mul(checked_mul(2, n), checked_mul(d.hidden, d.ffn));
  return checked_mul(d.layers, checked_add(checked_add(projections, attention), ffn));
}

// total_flops(before) / total_flops(after); the two configurations may only
// differ in the number of visual tokens.
inline double reduction_ratio(const ModelDims& before, const ModelDims& after) {
  if (before.layers != after.layers || before.hidden != after.hidden || before.ffn != after.ffn ||
      before.text != after.text) {
    throw ValidationError("reduction_ratio compares configurations that differ only in image tokens");
  }
  return static_cast<double>(total_flops(before)) / static_cast<double>(total_flops(after));
}

}  // namespace vzip
