#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vzip/error.hpp"
#include "vzip/tensor.hpp"

namespace vzip {

// Attention weights for every encoder block, each (B, H, S, S).
struct AttentionStack {
  std::vector<Tensor> layers;
  std::optional<std::size_t> cls_index;

  std::size_t num_layers() const noexcept { return layers.size(); }
};

// Token hidden states per block, each (B, S, D). Entry i is the output of the
// block whose attention is AttentionStack::layers[i].
struct HiddenStack {
  std::vector<Tensor> layers;

  std::size_t num_layers() const noexcept { return layers.size(); }
};

// Key projections per block, (B, H, S, D_h) or already flattened (B, S, D_k).
struct KeyStack {
  std::vector<Tensor> layers;

  std::size_t num_layers() const noexcept { return layers.size(); }
};

// Maps a signed layer selector onto [0, num_layers). Negative selectors count
// from the end, so -1 is the last block and -2 the one before it.
inline std::size_t resolve_layer(long selector, std::size_t num_layers) {
  const long n = static_cast<long>(num_layers);
  if (selector < 0 ? -selector > n : selector >= n) {
    throw RangeError("layer selector " + std::to_string(selector) + " out of range for " +
                     std::to_string(num_layers) + " layers");
  }
  return static_cast<std::size_t>(selector < 0 ? n + selector : selector);
}

}  // namespace vzip
