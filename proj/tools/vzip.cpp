// vzip: command-line front end for the token compression engine.
//
// Exit codes: 0 success, 2 usage, 3 data/validation, 4 budget.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vzip/vzip.hpp"

namespace fs = std::filesystem;
using namespace vzip;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitBudget = 4;

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::stringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw CLI::ValidationError(flag, "cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void warn_if_not_stochastic(const Tensor& attn, const std::string& what) {
  const double err = row_stochastic_error(attn);
  if (err > kStochasticTolerance) {
    std::cerr << "warning: " << what << " rows deviate from 1 by up to " << err << " (continuing, --lenient)\n";
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string mode = "toy";
  std::size_t layers = 24;
  std::size_t heads = 8;
  std::size_t seq = 577;
  std::size_t d_model = 256;
  std::size_t d_head = 32;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  bool cls = false;
  bool no_cls = false;
  std::string sink_cols;
  std::size_t num_sinks = 8;
  float sink_bias = 8.0f;
  std::string schedule;
  double sink_mass = 0.9;
  bool zero_qk = false;
  std::string out_dir;
};

void add_gen(CLI::App& app, GenArgs& a) {
  auto* c = app.add_subcommand("gen", "Generate a seeded dataset (manifest + NPY shards)");
  c->add_option("--mode", a.mode, "toy encoder or synthetic attention")
      ->check(CLI::IsMember({"toy", "uniform", "sink", "random"}))
      ->capture_default_str();
  c->add_option("--layers", a.layers)->capture_default_str();
  c->add_option("--heads", a.heads)->capture_default_str();
  c->add_option("--seq", a.seq, "tokens, CLS included")->capture_default_str();
  c->add_option("--d-model", a.d_model)->capture_default_str();
  c->add_option("--d-head", a.d_head)->capture_default_str();
  c->add_option("--batch", a.batch)->capture_default_str();
  c->add_option("--seed", a.seed)->capture_default_str();
  c->add_flag("--cls", a.cls, "synthetic modes: mark token 0 as CLS");
  c->add_flag("--no-cls", a.no_cls, "toy mode: encoder without a CLS token");
  c->add_option("--sink-cols", a.sink_cols, "comma-separated sink columns (default: evenly spread)");
  c->add_option("--num-sinks", a.num_sinks, "number of evenly spread sinks when --sink-cols is absent")
      ->capture_default_str();
  c->add_option("--sink-bias", a.sink_bias, "toy: logit bias reached at the last layer (linear ramp from 0)")
      ->capture_default_str();
  c->add_option("--schedule", a.schedule, "toy: explicit comma-separated per-layer sink bias");
  c->add_option("--sink-mass", a.sink_mass, "sink mode: attention mass held by the sinks")->capture_default_str();
  c->add_flag("--zero-qk", a.zero_qk, "toy: zero query/key weights (uniform attention)");
  c->add_option("--out-dir", a.out_dir)->required();
}

int run_gen(const GenArgs& a) {
  const bool toy = a.mode == "toy";
  const bool has_cls = toy ? !a.no_cls : a.cls;
  std::vector<std::size_t> sinks =
      a.sink_cols.empty() ? spread_columns(a.seq, a.num_sinks, has_cls) : parse_list<std::size_t>(a.sink_cols, "--sink-cols");
  std::ostringstream source;

  if (toy) {
    ToyConfig cfg;
    cfg.layers = a.layers;
    cfg.heads = a.heads;
    cfg.seq = a.seq;
    cfg.d_model = a.d_model;
    cfg.d_head = a.d_head;
    cfg.batch = a.batch;
    cfg.seed = a.seed;
    cfg.has_cls = has_cls;
    cfg.sink_columns = sinks;
    cfg.sink_schedule = a.schedule.empty() ? ramp_schedule(a.layers, a.sink_bias) : parse_list<float>(a.schedule, "--schedule");
    cfg.zero_qk = a.zero_qk;
    const ToyOutput out = run_toy_encoder(cfg);
    source << "toy encoder seed=" << a.seed << (a.zero_qk ? " zero-qk" : "");
    write_dataset(a.out_dir, out.attention, out.hidden, &out.keys, a.d_head, source.str());
    return 0;
  }

  if (a.d_model != a.heads * a.d_head) throw ValidationError("d_model must equal heads * d_head");
  AttentionGenConfig g;
  g.batch = a.batch;
  g.heads = a.heads;
  g.seq = a.seq;
  g.sink_columns = sinks;
  g.sink_mass = a.sink_mass;
  const AttentionMode mode = a.mode == "uniform" ? AttentionMode::uniform
                             : a.mode == "sink"  ? AttentionMode::sink
                                                 : AttentionMode::random_stochastic;
  AttentionStack attn;
  if (has_cls) attn.cls_index = 0;
  HiddenStack hidden;
  KeyStack keys;
  for (std::size_t l = 0; l < a.layers; ++l) {
    g.seed = a.seed + l;
    attn.layers.push_back(gen_attention(mode, g));
    hidden.layers.push_back(CounterStream(a.seed, 1000 + 2 * l).fill({a.batch, a.seq, a.d_model}, -1.0f, 1.0f));
    keys.layers.push_back(CounterStream(a.seed, 1001 + 2 * l).fill({a.batch, a.heads, a.seq, a.d_head}, -1.0f, 1.0f));
  }
  source << a.mode << " attention seed=" << a.seed;
  write_dataset(a.out_dir, attn, hidden, &keys, a.d_head, source.str());
  return 0;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string manifest;
  std::optional<long> layer;
  std::string source;
  std::size_t bins = 50;
  double low_threshold = 1e-3;
  std::string topk;
  bool trace = false;
  std::optional<std::size_t> trace_k;
  bool lenient = false;
  std::string out;
};

void add_analyze(CLI::App& app, AnalyzeArgs& a) {
  auto* c = app.add_subcommand("analyze", "Attention concentration report for one layer (optionally all layers)");
  c->add_option("--manifest", a.manifest)->required();
  c->add_option("--layer", a.layer, "signed layer selector (default: manifest select_layer)");
  c->add_option("--source", a.source, "received-attention source (default: cls when the encoder has CLS)")
      ->check(CLI::IsMember({"cls", "colmean"}));
  c->add_option("--bins", a.bins)->capture_default_str();
  c->add_option("--low-threshold", a.low_threshold)->capture_default_str();
  c->add_option("--topk", a.topk, "comma-separated k values (default 8,16,32,64, capped at the token count)");
  c->add_flag("--trace", a.trace, "add a per-layer top-k mass / Gini trace");
  c->add_option("--trace-k", a.trace_k, "k for the trace (default: first --topk value)");
  c->add_flag("--lenient", a.lenient, "warn instead of failing on non-stochastic attention rows");
  c->add_option("--out", a.out, "report path (default: stdout)");
}

int run_analyze(const AnalyzeArgs& a) {
  const Manifest m = load_manifest(a.manifest);
  const Validation mode = a.lenient ? Validation::lenient : Validation::strict;
  ReceivedSource source = m.has_cls ? ReceivedSource::cls_row : ReceivedSource::column_mean;
  if (a.source == "cls") {
    if (!m.has_cls) throw ValidationError("--source cls requires an encoder with a CLS token");
    source = ReceivedSource::cls_row;
  } else if (a.source == "colmean") {
    source = ReceivedSource::column_mean;
  }
  std::optional<std::size_t> cls;
  if (source == ReceivedSource::cls_row) cls = m.cls_index;
  const std::size_t tokens = cls ? m.seq - 1 : m.seq;

  AnalysisDocument doc;
  doc.select_layer = a.layer.value_or(m.select_layer);
  doc.layer = resolve_layer(doc.select_layer, m.num_layers);
  doc.source = source;
  doc.config.bins = a.bins;
  doc.config.low_threshold = a.low_threshold;
  if (a.topk.empty()) {
    std::erase_if(doc.config.ks, [&](std::size_t k) { return k > tokens; });
  } else {
    doc.config.ks = parse_list<std::size_t>(a.topk, "--topk");
  }

  const Tensor attn = load_attention(m, doc.layer);
  if (a.lenient) warn_if_not_stochastic(attn, "layer " + std::to_string(doc.layer));
  doc.report = concentration(received_attention(attn, cls, mode, doc.layer), doc.config);

  if (a.trace) {
    doc.trace_k = a.trace_k.value_or(doc.config.ks.empty() ? 1 : doc.config.ks.front());
    doc.trace = layer_trace(
        m.num_layers, [&](std::size_t l) { return load_attention(m, l); }, m.cls_index, doc.trace_k, mode, source);
  }
  write_json(a.out, to_json(doc));
  return 0;
}

// ---------------------------------------------------------------- zip

struct ZipArgs {
  std::string manifest;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> dominant;
  std::optional<std::size_t> contextual;
  std::optional<long> layer;
  bool no_cls = false;
  bool cls_extra = false;
  std::string keys = "keys";
  bool cosine = false;
  bool drop_remainder = false;
  std::size_t crops = 1;
  bool lenient = false;
  std::string out_tokens;
  std::string out_prov;
};

void add_zip(CLI::App& app, ZipArgs& a) {
  auto* c = app.add_subcommand("zip", "Compress the tokens of one layer to a budget");
  c->add_option("--manifest", a.manifest)->required();
  c->add_option("--budget", a.budget, "total retained tokens (split 27:5 dominant:contextual by default)");
  c->add_option("--dominant", a.dominant, "dominant tokens (CLS included), summed over crops");
  c->add_option("--contextual", a.contextual, "contextual tokens, summed over crops");
  c->add_option("--layer", a.layer, "signed layer selector (default: manifest select_layer)");
  c->add_flag("--no-cls", a.no_cls, "ignore the CLS token; rank tokens by mean received attention");
  c->add_flag("--cls-extra", a.cls_extra, "keep CLS in addition to the dominant budget");
  c->add_option("--keys", a.keys, "similarity features for merging")
      ->check(CLI::IsMember({"keys", "hidden"}))
      ->capture_default_str();
  c->add_flag("--cosine", a.cosine, "cosine instead of dot-product similarity");
  c->add_flag("--drop-remainder", a.drop_remainder, "allow --contextual 0 to discard the non-dominant tokens");
  c->add_option("--crops", a.crops, "crops per image; batch items are grouped into consecutive crops")
      ->capture_default_str();
  c->add_flag("--lenient", a.lenient, "warn instead of failing on non-stochastic attention rows");
  c->add_option("--out-tokens", a.out_tokens)->required();
  c->add_option("--out-prov", a.out_prov)->required();
}

TokenBudget resolve_budget(const ZipArgs& a) {
  TokenBudget total;
  if (a.dominant && a.contextual) {
    total = make_budget(*a.dominant, *a.contextual);
    if (a.budget && *a.budget != total.total) throw BudgetError("--dominant + --contextual must equal --budget");
  } else if (a.budget && (a.dominant || a.contextual)) {
    const std::size_t part = a.dominant ? *a.dominant : *a.contextual;
    if (part > *a.budget) throw BudgetError("split exceeds --budget");
    total = a.dominant ? make_budget(part, *a.budget - part) : make_budget(*a.budget - part, part);
  } else if (a.budget) {
    total = default_split(*a.budget);
  } else {
    throw CLI::ValidationError("zip", "give --budget, or both --dominant and --contextual");
  }
  return split_across_crops(total, a.crops);
}

int run_zip(const ZipArgs& a) {
  const Manifest m = load_manifest(a.manifest);
  if (a.crops == 0 || m.batch % a.crops != 0) {
    throw BudgetError("manifest batch " + std::to_string(m.batch) + " is not a multiple of --crops " +
                      std::to_string(a.crops));
  }
  const TokenBudget per_crop = resolve_budget(a);
  const long selector = a.layer.value_or(m.select_layer);
  const std::size_t layer = resolve_layer(selector, m.num_layers);

  const Tensor attn = load_attention(m, layer);
  const Tensor hidden = load_hidden(m, layer);
  std::optional<Tensor> keys;
  ZipOptions opts;
  opts.key_source = a.keys == "hidden" ? KeySource::hidden : KeySource::keys;
  opts.similarity = a.cosine ? Similarity::cosine : Similarity::dot;
  opts.drop_remainder = a.drop_remainder;
  if (opts.key_source == KeySource::keys) {
    keys = load_keys(m, layer);
    if (!keys && per_crop.contextual > 0) {
      throw ValidationError("manifest has no key shards; pass --keys hidden to merge on hidden states");
    }
  } else {
    std::cerr << "note: using hidden states as merge similarity features\n";
  }
  if (a.lenient) warn_if_not_stochastic(attn, "layer " + std::to_string(layer));

  SelectorConfig cfg;
  cfg.layer = selector;
  cfg.cls_extra = a.cls_extra;
  cfg.validation = a.lenient ? Validation::lenient : Validation::strict;
  const std::optional<std::size_t> cls = a.no_cls ? std::nullopt : m.cls_index;

  ZipResult result = zip_layer(attn, hidden, keys ? &*keys : nullptr, cls, per_crop, cfg, opts);
  result.layer = layer;

  Provenance prov = make_provenance(result, a.crops);
  prov.manifest = a.manifest;
  prov.select_layer = selector;
  prov.cls_index = cls;
  prov.key_source = opts.key_source;
  prov.similarity = opts.similarity;
  prov.drop_remainder = a.drop_remainder;
  prov.cls_extra = a.cls_extra;

  write_tensor(a.out_tokens, fold_crops(result.tokens, a.crops));
  write_json(a.out_prov, to_json(prov));
  return 0;
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
  std::string manifest;
  std::string prov;
  std::string out;
};

void add_replay(CLI::App& app, ReplayArgs& a) {
  auto* c = app.add_subcommand("replay", "Rebuild zip output tokens from a provenance file and the hidden states");
  c->add_option("--manifest", a.manifest)->required();
  c->add_option("--prov", a.prov)->required();
  c->add_option("--out", a.out)->required();
}

int run_replay(const ReplayArgs& a) {
  const Manifest m = load_manifest(a.manifest);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(a.prov));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("provenance is not valid JSON: ") + e.what());
  }
  const Provenance p = provenance_from_json(j);
  if (p.layer >= m.num_layers) throw RangeError("provenance layer outside the manifest");
  write_tensor(a.out, replay_tokens(load_hidden(m, p.layer), p));
  return 0;
}

// ---------------------------------------------------------------- flops

struct FlopsArgs {
  ModelDims before;
  std::uint64_t img_after = 0;
  std::string out;
};

void add_flops(CLI::App& app, FlopsArgs& a) {
  auto* c = app.add_subcommand("flops", "Prefill FLOPs before/after reducing the visual tokens (no decode term)");
  c->add_option("--layers", a.before.layers, "transformer layers T")->required();
  c->add_option("--hidden", a.before.hidden, "hidden size d")->required();
  c->add_option("--ffn", a.before.ffn, "FFN intermediate size m")->required();
  c->add_option("--text", a.before.text, "system + question tokens")->required();
  c->add_option("--img-before", a.before.image, "visual tokens before compression")->required();
  c->add_option("--img-after", a.img_after, "visual tokens after compression")->required();
  c->add_option("--out", a.out, "JSON path (default: stdout)");
}

int run_flops(const FlopsArgs& a) {
  ModelDims after = a.before;
  after.image = a.img_after;
  write_json(a.out, flops_json(a.before, after));
  return 0;
}

// ---------------------------------------------------------------- demo

struct DemoArgs {
  std::uint64_t seed = 0;
  std::size_t budget = 64;
  std::size_t layers = 24;
  std::size_t heads = 8;
  std::size_t seq = 577;
  std::size_t d_model = 256;
  float sink_bias = 8.0f;
  ModelDims llm{32, 4096, 11008, 60, 0};
};

void add_demo(CLI::App& app, DemoArgs& a) {
  auto* c = app.add_subcommand("demo", "Run the toy encoder end to end and print a summary");
  c->add_option("--seed", a.seed)->capture_default_str();
  c->add_option("--budget", a.budget)->capture_default_str();
  c->add_option("--layers", a.layers)->capture_default_str();
  c->add_option("--heads", a.heads)->capture_default_str();
  c->add_option("--seq", a.seq)->capture_default_str();
  c->add_option("--d-model", a.d_model)->capture_default_str();
  c->add_option("--sink-bias", a.sink_bias)->capture_default_str();
  c->add_option("--llm-layers", a.llm.layers, "LLM layers for the FLOPs estimate")->capture_default_str();
  c->add_option("--llm-hidden", a.llm.hidden)->capture_default_str();
  c->add_option("--llm-ffn", a.llm.ffn)->capture_default_str();
  c->add_option("--llm-text", a.llm.text, "text tokens in the prompt")->capture_default_str();
}

int run_demo(const DemoArgs& a) {
  if (a.heads == 0 || a.d_model % a.heads != 0) throw ValidationError("d_model must be a multiple of heads");
  ToyConfig cfg;
  cfg.layers = a.layers;
  cfg.heads = a.heads;
  cfg.seq = a.seq;
  cfg.d_model = a.d_model;
  cfg.d_head = a.d_model / a.heads;
  cfg.seed = a.seed;
  cfg.sink_schedule = ramp_schedule(a.layers, a.sink_bias);
  cfg.sink_columns = spread_columns(a.seq, 8, true);
  const ToyOutput toy = run_toy_encoder(cfg);

  const TokenBudget budget = default_split(a.budget);
  SelectorConfig sel;
  const ZipResult r = zip(toy.attention, toy.hidden, &toy.keys, budget, sel);

  const auto profile = received_attention(toy.attention.layers[r.layer], toy.attention.cls_index);
  const std::size_t k = std::min<std::size_t>(8, profile.per_token.shape()[1]);
  const auto report = concentration(profile, ConcentrationConfig{50, 1e-3, {k}});

  ModelDims before = a.llm;
  before.image = a.seq - 1;
  ModelDims after = a.llm;
  after.image = r.budget.total;

  std::printf("%-28s %s\n", "encoder", "toy (seeded)");
  std::printf("%-28s %llu\n", "seed", static_cast<unsigned long long>(a.seed));
  std::printf("%-28s %zu (selector %ld)\n", "select layer", r.layer, sel.layer);
  std::printf("%-28s %zu\n", "tokens before", a.seq);
  std::printf("%-28s %zu (%zu dominant + %zu contextual)\n", "tokens after", r.budget.total, r.budget.dominant,
              r.budget.contextual);
  std::printf("%-28s %s\n", "output shape", shape_str(r.tokens.shape()).c_str());
  std::printf("%-28s %.6f\n", ("top-" + std::to_string(k) + " attention mass").c_str(), report.pooled.topk_mass[0].mass);
  std::printf("%-28s %.6f\n", "gini", report.pooled.gini);
  std::printf("%-28s %.6f\n", "low-mass fraction (<1e-3)", report.pooled.low_mass_fraction);
  std::printf("%-28s %.4fx (T=%llu d=%llu m=%llu text=%llu, img %llu -> %llu)\n", "prefill FLOPs reduction",
              reduction_ratio(before, after), static_cast<unsigned long long>(a.llm.layers),
              static_cast<unsigned long long>(a.llm.hidden), static_cast<unsigned long long>(a.llm.ffn),
              static_cast<unsigned long long>(a.llm.text), static_cast<unsigned long long>(before.image),
              static_cast<unsigned long long>(after.image));
  std::printf("%-28s %016llx\n", "output checksum", static_cast<unsigned long long>(checksum(r.tokens)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vzip: attention-guided visual token compression"};
  app.require_subcommand(1);
  GenArgs gen;
  AnalyzeArgs analyze;
  ZipArgs zipa;
  ReplayArgs replay;
  FlopsArgs flops;
  DemoArgs demo;
  add_gen(app, gen);
  add_analyze(app, analyze);
  add_zip(app, zipa);
  add_replay(app, replay);
  add_flops(app, flops);
  add_demo(app, demo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen") return run_gen(gen);
    if (cmd == "analyze") return run_analyze(analyze);
    if (cmd == "zip") return run_zip(zipa);
    if (cmd == "replay") return run_replay(replay);
    if (cmd == "flops") return run_flops(flops);
    if (cmd == "demo") return run_demo(demo);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const BudgetError& e) {
    std::cerr << "budget error: " << e.what() << "\n";
    return kExitBudget;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
