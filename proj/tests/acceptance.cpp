// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// failure or time-limit overrun.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "vzip/vzip.hpp"

using namespace vzip;
namespace fs = std::filesystem;

namespace {

// Golden checksum of the 24-layer demo output at budget 64, seed 0.
constexpr std::uint64_t kDemoChecksum = 0x5be7f5829656e401ull;

// reduction_ratio for 7B-class LLM dims (T=32, d=4096, m=11008, 60 text tokens), 2880 -> 160 image tokens.
constexpr double kLlm7bRatio = 15.235371219923229;

struct Failure {
  std::string what;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void a1_budget_tables() {
  const std::size_t rows[][3] = {{64, 54, 10}, {128, 108, 20}, {192, 162, 30},
                                 {160, 135, 25}, {320, 270, 50}, {640, 540, 100}};
  for (const auto& r : rows) {
    const TokenBudget b = default_split(r[0]);
    check(b.dominant == r[1] && b.contextual == r[2], fmt("default_split(%zu) = (%zu, %zu)", r[0], b.dominant, b.contextual));
  }
}

void a2_selector_oracle() {
  oracle::Rng rng(1002);
  for (int path = 0; path < 2; ++path) {
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t b = rng.index(1, 4), h = rng.index(1, 8), s = rng.index(2, 64);
      Tensor attn = rng.attention(b, h, s);
      SelectorConfig cfg;
      if (path == 0) cfg.cls_index = rng.index(0, s - 1);
      cfg.dominant_count = rng.index(1, s);
      const auto sel = select_dominant(attn, Tensor({b, s, 1}), cfg);
      for (std::size_t i = 0; i < b; ++i)
        check(as_set(sel.indices[i]) == oracle::select(attn, i, cfg.cls_index, cfg.dominant_count),
              fmt("%s path, case %d, batch %zu", path == 0 ? "CLS" : "no-CLS", trial, i));
    }
  }
}

void a3_merger_oracle() {
  oracle::Rng rng(1003);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = rng.index(1, 2), s = rng.index(2, 32), h = rng.index(1, 4), dh = rng.index(1, 8),
                      d = rng.index(1, 8);
    const std::size_t kd = rng.index(1, s - 1);
    const std::size_t m = rng.index(1, s - kd);
    Tensor keys = rng.tensor({b, h, s, dh}, -1, 1);
    Tensor hidden = rng.tensor({b, s, d}, -1, 1);
    std::vector<std::vector<std::size_t>> dominant(b);
    std::vector<std::set<std::size_t>> dom_sets(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::size_t> all(s);
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::shuffle(all.begin(), all.end(), rng.engine());
      dom_sets[i] = {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kd)};
      dominant[i] = {dom_sets[i].begin(), dom_sets[i].end()};
    }
    const auto out = merge_contextual(keys, hidden, dominant, MergeConfig{m});
    for (std::size_t i = 0; i < b; ++i) {
      const auto ref = oracle::merge(keys, hidden, i, dom_sets[i], m);
      const auto& got = out.batches[i];
      check(got.target_indices == ref.targets && got.merge_indices == ref.merge && got.assignment == ref.assignment,
            fmt("case %d batch %zu: assignment differs from oracle", trial, i));
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t e = 0; e < d; ++e) {
          const double err = std::abs(out.contextual_tokens.at({i, j, e}) - ref.contextual[j][e]);
          check(err <= 1e-6, fmt("case %d: contextual token error %.3g", trial, err));
        }
    }
  }
}

void a4_partition() {
  oracle::Rng rng(1004);
  ZipOptions opts;
  opts.drop_remainder = true;
  SelectorConfig cfg;
  cfg.layer = -1;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t s = rng.index(2, 64);
    const std::size_t kd = rng.index(1, s);
    const std::size_t m = rng.index(0, s - kd);
    const std::size_t b = rng.index(1, 2);
    const std::optional<std::size_t> cls = trial % 2 ? std::optional<std::size_t>(rng.index(0, s - 1)) : std::nullopt;
    Tensor attn = rng.attention(b, rng.index(1, 3), s);
    Tensor hidden = rng.tensor({b, s, 2}, -1, 1);
    Tensor keys = rng.tensor({b, 1, s, 3}, -1, 1);
    const auto r = zip_layer(attn, hidden, &keys, cls, make_budget(kd, m), cfg, opts);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& dom = r.dominant_indices[i];
      const auto& mg = r.merges[i];
      std::vector<int> seen(s, 0);
      for (auto* part : {&dom, &mg.target_indices, &mg.merge_indices})
        for (std::size_t x : *part) {
          check(x < s, fmt("case %d: index %zu out of range", trial, x));
          ++seen[x];
        }
      for (std::size_t x = 0; x < s; ++x)
        check(seen[x] == 1, fmt("case %d (S=%zu, Kd=%zu, M=%zu): token %zu covered %d times", trial, s, kd, m, x, seen[x]));
      check(dom.size() == kd && mg.target_indices.size() == m, fmt("case %d: part sizes", trial));
      if (m > 0) check(mg.assignment.size() == mg.merge_indices.size(), fmt("case %d: unassigned merge tokens", trial));
    }
  }
}

void a5_softmax() {
  oracle::Rng rng(1005);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = rng.index(1, 8), n = rng.index(1, 64);
    // Logits on a 2^-10 grid and integer shifts keep x + c exact in float.
    Tensor x = rng.tensor({rows, n}, -20, 20);
    for (float& v : x.data()) v = std::round(v * 1024.0f) / 1024.0f;
    Tensor y = x;
    const float c = static_cast<float>(static_cast<int>(rng.index(0, 200)) - 100);
    for (float& v : y.data()) v += c;
    const Tensor sx = softmax(x, 1), sy = softmax(y, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sum += sx.at({r, j});
        check(std::abs(sx.at({r, j}) - sy.at({r, j})) <= 1e-6, fmt("case %d: shift changed softmax", trial));
      }
      check(std::abs(sum - 1.0) <= 1e-6, fmt("case %d: row sum %.9f", trial, sum));
    }
  }

  HeadProjections p{rng.tensor({2, 3, 17, 8}, -1, 1), rng.tensor({2, 3, 17, 8}, -1, 1)};
  check(row_stochastic_error(attention_scores(p).per_head) <= 1e-6, "attention rows do not sum to one");

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rng.index(2, 32);
    std::vector<double> z(n);
    for (double& v : z) v = rng.uniform(-5, 5);
    const auto diag = softmax_jacobian_diag(std::span<const double>(z));
    const double h = 1e-4;
    for (std::size_t i = 0; i < n; ++i) {
      auto up = z, down = z;
      up[i] += h;
      down[i] -= h;
      const double fd = (softmax(std::span<const double>(up))[i] - softmax(std::span<const double>(down))[i]) / (2 * h);
      check(std::abs(fd - diag[i]) <= 1e-5, fmt("case %d: jacobian error %.3g", trial, std::abs(fd - diag[i])));
    }
  }
}

void a6_flops() {
  check(total_flops({1, 1, 1, 1, 1}) == 20, "T=1 n=2 d=1 m=1");
  check(total_flops({1, 4, 8, 4, 6}) == 2080, "T=1 n=10 d=4 m=8");
  const ModelDims before{32, 4096, 11008, 60, 2880};
  ModelDims after = before;
  after.image = 160;
  const double r = reduction_ratio(before, after);
  check(r >= 7.8, fmt("ratio %.6f below 7.8", r));
  check(r == kLlm7bRatio, fmt("ratio %.17g differs from the frozen constant", r));
}

void a7_analyzer() {
  AttentionGenConfig g;
  g.seq = 577;
  g.heads = 4;
  const auto profile = received_attention(gen_attention(AttentionMode::uniform, g), std::nullopt);
  const auto report = concentration(profile, ConcentrationConfig{50, 1e-3, {1, 8, 16, 64, 577}});
  for (const auto& t : report.pooled.topk_mass)
    check(std::abs(t.mass - static_cast<double>(t.k) / 577.0) <= 1e-9, fmt("uniform topk_mass(%zu) = %.12f", t.k, t.mass));

  ToyConfig cfg;
  cfg.layers = 6;
  cfg.heads = 4;
  cfg.d_model = 64;
  cfg.d_head = 16;
  cfg.sink_schedule = ramp_schedule(cfg.layers, 8.0f);
  cfg.sink_columns = spread_columns(cfg.seq, 8, true);
  const auto toy = run_toy_encoder(cfg);
  const auto trace = layer_trace(toy.attention, 8);
  const double final_mass = trace.per_layer.back().topk_mass;
  check(final_mass >= 0.90, fmt("planted-sink final layer topk_mass(8) = %.4f", final_mass));
  for (std::size_t l = 1; l < trace.per_layer.size(); ++l)
    check(trace.per_layer[l].gini > trace.per_layer[l - 1].gini, fmt("gini not increasing at layer %zu", l));
}

void a8_demo() {
  ToyConfig cfg;
  cfg.sink_schedule = ramp_schedule(cfg.layers, 8.0f);
  cfg.sink_columns = spread_columns(cfg.seq, 8, true);
  const auto toy = run_toy_encoder(cfg);
  const auto r = zip(toy.attention, toy.hidden, &toy.keys, default_split(64), SelectorConfig{});
  check(r.tokens.shape() == Shape{1, 64, 256}, "output shape " + shape_str(r.tokens.shape()));
  const std::uint64_t sum = checksum(r.tokens);
  check(sum == kDemoChecksum, fmt("checksum %016llx differs from golden", static_cast<unsigned long long>(sum)));
}

void a9_io() {
  oracle::Rng rng(1009);
  const fs::path dir = fs::temp_directory_path() / "vzip_acceptance_io";
  fs::remove_all(dir);
  fs::create_directories(dir);

  for (int trial = 0; trial < 50; ++trial) {
    Shape shape;
    for (std::size_t r = rng.index(0, 4); r > 0; --r) shape.push_back(rng.index(0, 6));
    const Tensor t = rng.tensor(shape, -1e3, 1e3);
    write_tensor(dir / "t.npy", t);
    check(bit_equal(read_tensor(dir / "t.npy"), t), "NPY round trip " + shape_str(shape));
  }

  ToyConfig cfg;
  cfg.layers = 3;
  cfg.heads = 2;
  cfg.seq = 65;
  cfg.d_model = 16;
  cfg.d_head = 8;
  cfg.batch = 2;
  cfg.sink_schedule = ramp_schedule(3, 6.0f);
  cfg.sink_columns = spread_columns(cfg.seq, 4, true);
  const auto toy = run_toy_encoder(cfg);
  const Manifest m = write_dataset(dir / "data", toy.attention, toy.hidden, &toy.keys, cfg.d_head, "acceptance");
  HiddenStack hidden;
  for (std::size_t l = 0; l < m.num_layers; ++l) hidden.layers.push_back(load_hidden(m, l));
  const auto r = zip(load_attention_stack(m), hidden, nullptr, default_split(32), SelectorConfig{},
                     ZipOptions{KeySource::hidden});
  Provenance p = make_provenance(r, 1);
  const Provenance back = provenance_from_json(nlohmann::json::parse(to_json(p).dump()));
  check(bit_equal(replay_tokens(load_hidden(m, r.layer), back), r.tokens), "provenance replay differs");

  const auto good = encode_npy(Tensor({2, 3}));
  auto with_dict = [&](const std::string& from, const std::string& to) {
    std::string header(good.begin() + 10, good.begin() + 10 + good[8]);
    header.replace(header.find(from), from.size(), to);
    std::vector<unsigned char> out(good.begin(), good.begin() + 10);
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), good.begin() + 10 + good[8], good.end());
    return out;
  };
  auto version = good;
  version[6] = 3;
  auto truncated = good;
  truncated.resize(truncated.size() - 1);
  const std::vector<std::pair<std::vector<unsigned char>, std::function<void(const fs::path&)>>> cases = {
      {with_dict("'<f4'", "'<f8'"), [](const fs::path& f) { try { read_tensor(f); } catch (const NpyDtypeError&) { return; } throw Failure{"dtype"}; }},
      {with_dict("False", "True "), [](const fs::path& f) { try { read_tensor(f); } catch (const NpyOrderError&) { return; } throw Failure{"order"}; }},
      {version, [](const fs::path& f) { try { read_tensor(f); } catch (const NpyVersionError&) { return; } throw Failure{"version"}; }},
      {truncated, [](const fs::path& f) { try { read_tensor(f); } catch (const NpyTruncatedError&) { return; } throw Failure{"truncation"}; }},
  };
  for (const auto& [bytes, expect] : cases) {
    write_file_atomic(dir / "bad.npy", bytes);
    try {
      expect(dir / "bad.npy");
    } catch (const Failure& f) {
      throw Failure{"malformed " + f.what + " file not reported with its own error"};
    }
  }
  fs::remove_all(dir);
}

void a10_invariances() {
  oracle::Rng rng(1010);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = rng.index(1, 8), s = rng.index(2, 64);
    Tensor attn = rng.attention(1, h, s);
    const std::optional<std::size_t> cls = trial % 2 ? std::optional<std::size_t>(0) : std::nullopt;
    const std::size_t k = rng.index(1, s);
    const auto summed = received_scores(attn, 0, cls, HeadReduction::sum);
    const auto meaned = received_scores(attn, 0, cls, HeadReduction::mean);
    const auto base = as_set(choose_dominant(summed, k, cls));
    check(as_set(choose_dominant(meaned, k, cls)) == base, fmt("case %d: head sum vs mean", trial));
    auto scaled = summed;
    const double c = std::exp(rng.uniform(-20, 20));
    for (double& v : scaled) v *= c;
    check(as_set(choose_dominant(scaled, k, cls)) == base, fmt("case %d: score rescaling by %.6g", trial, c));
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t s = rng.index(2, 32);
    const std::size_t kd = rng.index(1, s - 1);
    const std::size_t m = rng.index(1, s - kd);
    Tensor keys = rng.tensor({1, 2, s, 4}, -1, 1);
    Tensor hidden = rng.tensor({1, s, 2}, -1, 1);
    std::vector<std::vector<std::size_t>> dom{{}};
    for (std::size_t i = 0; i < kd; ++i) dom[0].push_back(i);
    Tensor scaled = keys;
    const float c = static_cast<float>(std::exp(rng.uniform(-10, 10)));
    for (float& v : scaled.data()) v *= c;
    const auto a = merge_contextual(keys, hidden, dom, MergeConfig{m});
    const auto b = merge_contextual(scaled, hidden, dom, MergeConfig{m});
    check(a.batches[0].assignment == b.batches[0].assignment, fmt("case %d: key rescaling by %.6g", trial, c));
  }
}

struct Criterion {
  const char* id;
  const char* name;
  double limit_s;
  void (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"A1", "budget tables", 1, a1_budget_tables},
      {"A2", "selector oracle", 10, a2_selector_oracle},
      {"A3", "merger oracle", 10, a3_merger_oracle},
      {"A4", "partition invariant", 30, a4_partition},
      {"A5", "softmax suite", 5, a5_softmax},
      {"A6", "FLOPs model", 1, a6_flops},
      {"A7", "analyzer", 5, a7_analyzer},
      {"A8", "end-to-end demo", 5, a8_demo},
      {"A9", "I/O", 5, a9_io},
      {"A10", "scale invariances", 10, a10_invariances},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    std::string detail;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run();
    } catch (const Failure& f) {
      detail = f.what;
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (detail.empty() && secs > c.limit_s) detail = fmt("took %.2f s, limit %.0f s", secs, c.limit_s);
    std::printf("%-4s %-20s %s  %.3f s%s%s\n", c.id, c.name, detail.empty() ? "PASS" : "FAIL", secs,
                detail.empty() ? "" : "  ", detail.c_str());
    failed += !detail.empty();
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
