#pragma once

// Test-only reference implementations. They deliberately avoid the library's
// code paths: plain loops, 64-bit arithmetic, full stable sorts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "vzip/tensor.hpp"

namespace vzip::oracle {

// Small deterministic generator for test inputs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  std::size_t index(std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(eng_() % (hi - lo + 1)); }

  Tensor tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = static_cast<float>(uniform(lo, hi));
    return t;
  }

  // Row-stochastic (B, H, S, S) attention: softmax of noise with a random
  // temperature so some rows are peaked.
  Tensor attention(std::size_t b, std::size_t h, std::size_t s) {
    Tensor t({b, h, s, s});
    auto d = t.data();
    for (std::size_t base = 0; base < d.size(); base += s) {
      const double temp = uniform(0.5, 4.0);
      std::vector<double> e(s);
      double sum = 0.0;
      for (auto& v : e) sum += v = std::exp(uniform(-1.0, 1.0) * temp);
      for (std::size_t j = 0; j < s; ++j) d[base + j] = static_cast<float>(e[j] / sum);
    }
    return t;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline std::vector<double> softmax64(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += out[i] = std::exp(z[i] - mx);
  for (double& v : out) v /= sum;
  return out;
}

// Naive triple loop over plain matrices.
inline std::vector<double> matmul64(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                    std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// All indices sorted by value descending, stable (lower index first on ties).
inline std::vector<std::size_t> stable_desc_order(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  return idx;
}

// Received attention computed straight from the definition.
inline std::vector<double> received(const Tensor& attn, std::size_t b, std::optional<std::size_t> cls) {
  const std::size_t heads = attn.shape()[1];
  const std::size_t seq = attn.shape()[2];
  std::vector<double> r(seq, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t q = 0; q < seq; ++q) {
      if (cls && q != *cls) continue;
      for (std::size_t s = 0; s < seq; ++s) r[s] += attn.at({b, h, q, s});
    }
  }
  return r;
}

// Sort, take prefix, union CLS.
inline std::set<std::size_t> select(const Tensor& attn, std::size_t b, std::optional<std::size_t> cls, std::size_t count) {
  std::vector<double> r = received(attn, b, cls);
  std::vector<std::size_t> candidates;
  std::vector<double> values;
  for (std::size_t s = 0; s < r.size(); ++s) {
    if (cls && s == *cls) continue;
    candidates.push_back(s);
    values.push_back(r[s]);
  }
  const std::size_t take = cls ? count - 1 : count;
  std::set<std::size_t> out;
  auto order = stable_desc_order(values);
  for (std::size_t i = 0; i < take; ++i) out.insert(candidates[order[i]]);
  if (cls) out.insert(*cls);
  return out;
}

struct MergeOracle {
  std::vector<std::size_t> targets;
  std::vector<std::size_t> merge;
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> contextual;  // M x D
};

// Uniform split, explicit double-loop dot products over concatenated head
// keys, first-maximum assignment, explicit group means.
inline MergeOracle merge(const Tensor& keys4, const Tensor& hidden, std::size_t b, const std::set<std::size_t>& dominant,
                         std::size_t m) {
  const std::size_t heads = keys4.shape()[1];
  const std::size_t seq = keys4.shape()[2];
  const std::size_t dh = keys4.shape()[3];
  const std::size_t dim = hidden.shape()[2];
  std::vector<std::size_t> remaining;
  for (std::size_t s = 0; s < seq; ++s)
    if (!dominant.count(s)) remaining.push_back(s);
  MergeOracle o;
  std::set<std::size_t> target_pos;
  for (std::size_t i = 0; i < m; ++i) target_pos.insert(i * remaining.size() / m);
  for (std::size_t i = 0; i < remaining.size(); ++i) (target_pos.count(i) ? o.targets : o.merge).push_back(remaining[i]);

  for (std::size_t s : o.merge) {
    std::size_t best = 0;
    double best_sim = -INFINITY;
    for (std::size_t j = 0; j < o.targets.size(); ++j) {
      double sim = 0.0;
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t e = 0; e < dh; ++e)
          sim += static_cast<double>(keys4.at({b, h, s, e})) * static_cast<double>(keys4.at({b, h, o.targets[j], e}));
      if (sim > best_sim) {
        best_sim = sim;
        best = j;
      }
    }
    o.assignment.push_back(best);
  }
  for (std::size_t j = 0; j < o.targets.size(); ++j) {
    std::vector<double> mean(dim, 0.0);
    std::vector<std::size_t> members{o.targets[j]};
    for (std::size_t i = 0; i < o.merge.size(); ++i)
      if (o.assignment[i] == j) members.push_back(o.merge[i]);
    for (std::size_t s : members)
      for (std::size_t e = 0; e < dim; ++e) mean[e] += hidden.at({b, s, e});
    for (double& v : mean) v /= static_cast<double>(members.size());
    o.contextual.push_back(std::move(mean));
  }
  return o;
}

// Mean absolute difference form: sum_ij |x_i - x_j| / (2 n sum x).
inline double gini_pairwise(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (double v : x) total += v;
  if (total <= 0.0) return 0.0;
  double acc = 0.0;
  for (double a : x)
    for (double b : x) acc += std::abs(a - b);
  return acc / (2.0 * n * total);
}

}  // namespace vzip::oracle
