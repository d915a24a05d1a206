#pragma once

// Dense row-major float32 tensors and the handful of primitives the token
// compression engine is built on. Reductions and products accumulate in
// double; ties in selection primitives always go to the lowest index.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vzip/error.hpp"

namespace vzip {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
 public:
  Tensor() : shape_{0} {}

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " holds " +
                           std::to_string(shape_numel(shape_)) + " elements but " +
                           std::to_string(data_.size()) + " were supplied");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw RangeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  Shape strides() const {
    Shape s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw DimensionError("index of rank " + std::to_string(index.size()) + " into tensor of shape " +
                           shape_str(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) {
        throw RangeError("index " + std::to_string(i) + " out of range on axis " + std::to_string(axis) +
                         " of shape " + shape_str(shape_));
      }
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  float& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  float at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Bitwise equality of shape and payload (distinguishes -0.0f from 0.0f).
inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0);
}

// FNV-1a over shape extents (as little-endian u64) followed by the raw payload.
inline std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (std::uint64_t e : t.shape()) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(e >> (8 * i));
    mix(buf, 8);
  }
  mix(reinterpret_cast<const unsigned char*>(t.data().data()), t.size() * sizeof(float));
  return h;
}

template <std::floating_point T>
void require_finite(std::span<const T> x, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw NumericInputError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

inline void require_finite(const Tensor& t, const char* what) { require_finite(t.data(), what); }

// Swap the two innermost axes.
inline Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t rows = shape[shape.size() - 2];
  const std::size_t cols = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  Tensor out(shape);
  const std::size_t batch = rows * cols == 0 ? 0 : x.size() / (rows * cols);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dst[base + c * rows + r] = src[base + r * cols + c];
  }
  return out;
}

// Batched matrix product a[..., m, k] x b[..., k, n]. Leading dimensions must
// match exactly, or one operand may be a plain matrix shared by every batch.
// Each output element is summed in double over ascending k.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  auto fail = [&](const std::string& why) {
    throw DimensionError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + ": " + why);
  };
  if (a.rank() < 2 || b.rank() < 2) fail("operands must have rank >= 2");
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != kb) fail("inner dimensions differ");

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  if (batch_a == batch_b || batch_b.empty()) {
    batch = batch_a;
  } else if (batch_a.empty()) {
    batch = batch_b;
  } else {
    fail("leading batch dimensions differ");
  }
  const std::size_t nbatch = shape_numel(batch);
  const bool step_a = !batch_a.empty();
  const bool step_b = !batch_b.empty();

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);

  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  std::vector<double> acc(n);
  for (std::size_t t = 0; t < nbatch; ++t) {
    const float* pa = ad.data() + (step_a ? t * m * k : 0);
    const float* pb = bd.data() + (step_b ? t * k * n : 0);
    float* po = od.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        const float* row = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(row[j]);
      }
      for (std::size_t j = 0; j < n; ++j) po[i * n + j] = static_cast<float>(acc[j]);
    }
  }
  return out;
}

// Elementwise x * factor, evaluated in double and rounded once.
inline Tensor scale(const Tensor& x, double factor) {
  Tensor out = x;
  for (float& v : out.data()) v = static_cast<float>(static_cast<double>(v) * factor);
  return out;
}

namespace detail {

// Visits every 1-D slice along `axis`: fn(base_offset, stride, extent).
template <typename Fn>
void for_each_slice(const Shape& shape, std::size_t axis, Fn&& fn) {
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) fn(o * extent * inner + in, inner, extent);
}

inline void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw RangeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  }
}

}  // namespace detail

// Numerically stable softmax of a single vector, computed in double.
template <std::floating_point T>
std::vector<double> softmax(std::span<const T> x) {
  require_finite(x, "softmax");
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double mx = static_cast<double>(*std::max_element(x.begin(), x.end()));
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(static_cast<double>(x[i]) - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis, "softmax");
  require_finite(x, "softmax");
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  std::vector<double> buf;
  detail::for_each_slice(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t extent) {
    if (extent == 0) return;
    buf.resize(extent);
    double mx = src[base];
    for (std::size_t i = 1; i < extent; ++i) mx = std::max(mx, static_cast<double>(src[base + i * stride]));
    double sum = 0.0;
    for (std::size_t i = 0; i < extent; ++i) {
      buf[i] = std::exp(static_cast<double>(src[base + i * stride]) - mx);
      sum += buf[i];
    }
    for (std::size_t i = 0; i < extent; ++i) dst[base + i * stride] = static_cast<float>(buf[i] / sum);
  });
  return out;
}

// Indices of the k largest entries of x, ties to the lowest index, returned
// in ascending index order.
template <std::floating_point T>
std::vector<std::size_t> topk_indices(std::span<const T> x, std::size_t k) {
  if (k == 0) throw BudgetError("topk_indices: k must be at least 1");
  if (k > x.size()) {
    throw BudgetError("topk_indices: k=" + std::to_string(k) + " exceeds length " + std::to_string(x.size()));
  }
  require_finite(x, "topk_indices");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return x[a] > x[b] || (x[a] == x[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<std::size_t> topk_indices(const Tensor& x, std::size_t k) {
  if (x.rank() != 1) throw DimensionError("topk_indices expects a vector, got " + shape_str(x.shape()));
  return topk_indices(x.data(), k);
}

// Index of the maximum; first occurrence wins.
template <std::floating_point T>
std::size_t argmax(std::span<const T> x) {
  if (x.empty()) throw EmptyAxisError("argmax over an empty axis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

inline std::vector<std::size_t> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("argmax_rows expects a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  if (n == 0) throw EmptyAxisError("argmax_rows: rows have zero columns");
  std::vector<std::size_t> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = argmax(x.data().subspan(i * n, n));
  return out;
}

namespace detail {

template <bool Mean>
Tensor reduce_axis(const Tensor& x, std::size_t axis, const char* op) {
  check_axis(x, axis, op);
  if (x.shape()[axis] == 0) {
    throw EmptyAxisError(std::string(op) + ": axis " + std::to_string(axis) + " of shape " +
                         shape_str(x.shape()) + " is empty");
  }
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  auto src = x.data();
  auto dst = out.data();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  for_each_slice(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t extent) {
    double acc = 0.0;
    for (std::size_t i = 0; i < extent; ++i) acc += src[base + i * stride];
    if constexpr (Mean) acc /= static_cast<double>(extent);
    const std::size_t o = base / (extent * inner);
    const std::size_t in = base % inner;
    dst[o * inner + in] = static_cast<float>(acc);
  });
  return out;
}

}  // namespace detail

inline Tensor mean_axis(const Tensor& x, std::size_t axis) { return detail::reduce_axis<true>(x, axis, "mean_axis"); }
inline Tensor sum_axis(const Tensor& x, std::size_t axis) { return detail::reduce_axis<false>(x, axis, "sum_axis"); }

// Copies hidden[b, indices[b][j], :] into out[b, j, :]. Every batch item
// must select the same number of tokens.
inline Tensor gather_tokens(const Tensor& hidden, const std::vector<std::vector<std::size_t>>& indices) {
  if (hidden.rank() != 3) throw DimensionError("gather_tokens expects (B, S, D), got " + shape_str(hidden.shape()));
  const std::size_t batch = hidden.shape()[0];
  const std::size_t seq = hidden.shape()[1];
  const std::size_t dim = hidden.shape()[2];
  if (indices.size() != batch) {
    throw DimensionError("gather_tokens: " + std::to_string(indices.size()) + " index lists for batch " +
                         std::to_string(batch));
  }
  const std::size_t count = batch ? indices[0].size() : 0;
  Tensor out({batch, count, dim});
  auto src = hidden.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    if (indices[b].size() != count) throw DimensionError("gather_tokens: ragged index lists");
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t s = indices[b][j];
      if (s >= seq) throw RangeError("gather_tokens: token " + std::to_string(s) + " >= " + std::to_string(seq));
      std::copy_n(src.data() + (b * seq + s) * dim, dim, dst.data() + (b * count + j) * dim);
    }
  }
  return out;
}

}  // namespace vzip
