#pragma once

// JSON documents emitted by the CLI: analysis reports, zip provenance and
// FLOPs summaries. Every document carries "schema": "vzip/1" and a "kind".

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vzip/flops.hpp"
#include "vzip/manifest.hpp"
#include "vzip/pipeline.hpp"
#include "vzip/redundancy.hpp"

namespace vzip {

inline nlohmann::json to_json(const ConcentrationReport& r) {
  nlohmann::json j;
  j["tokens"] = r.tokens;
  j["histogram"] = nlohmann::json::array();
  for (const auto& b : r.histogram) j["histogram"].push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
  j["low_mass_fraction"] = r.low_mass_fraction;
  j["topk_mass"] = nlohmann::json::array();
  for (const auto& t : r.topk_mass) j["topk_mass"].push_back({{"k", t.k}, {"mass", t.mass}});
  j["gini"] = r.gini;
  return j;
}

inline nlohmann::json to_json(const LayerTrace& t, std::size_t k) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : t.per_layer) j.push_back({{"layer", e.layer}, {"k", k}, {"topk_mass", e.topk_mass}, {"gini", e.gini}});
  return j;
}

struct AnalysisDocument {
  std::size_t layer = 0;
  long select_layer = -2;
  ReceivedSource source = ReceivedSource::column_mean;
  ConcentrationConfig config;
  ProfileReport report;
  std::optional<LayerTrace> trace;
  std::size_t trace_k = 0;
};

inline nlohmann::json to_json(const AnalysisDocument& d) {
  nlohmann::json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = "analysis";
  j["layer"] = d.layer;
  j["select_layer"] = d.select_layer;
  j["source"] = to_string(d.source);
  j["bins"] = d.config.bins;
  j["low_threshold"] = d.config.low_threshold;
  j["ks"] = d.config.ks;
  j["per_batch"] = nlohmann::json::array();
  for (const auto& r : d.report.per_batch) j["per_batch"].push_back(to_json(r));
  j["pooled"] = to_json(d.report.pooled);
  if (d.trace) j["trace"] = to_json(*d.trace, d.trace_k);
  return j;
}

// One compressed sequence segment: output item `batch`, crop slot `crop`,
// built from manifest batch item `source_batch`.
struct ProvenanceItem {
  std::size_t batch = 0;
  std::size_t crop = 0;
  std::size_t source_batch = 0;
  std::vector<std::size_t> dominant_indices;
  BatchAssignment merge;
};

struct Provenance {
  std::string manifest;
  std::size_t layer = 0;
  long select_layer = -2;
  std::optional<std::size_t> cls_index;
  TokenBudget budget;  // per crop, as realised
  std::size_t crops = 1;
  KeySource key_source = KeySource::keys;
  Similarity similarity = Similarity::dot;
  bool drop_remainder = false;
  bool cls_extra = false;
  Shape output_shape;
  std::vector<ProvenanceItem> items;
};

inline Provenance make_provenance(const ZipResult& r, std::size_t crops) {
  Provenance p;
  p.layer = r.layer;
  p.budget = r.budget;
  p.crops = crops;
  const std::size_t batch = r.tokens.shape()[0];
  p.output_shape = {batch / crops, crops * r.tokens.shape()[1], r.tokens.shape()[2]};
  for (std::size_t b = 0; b < batch; ++b) p.items.push_back({b / crops, b % crops, b, r.dominant_indices[b], r.merges[b]});
  return p;
}

inline nlohmann::json to_json(const Provenance& p) {
  nlohmann::json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = "provenance";
  j["manifest"] = p.manifest;
  j["layer"] = p.layer;
  j["select_layer"] = p.select_layer;
  j["has_cls"] = p.cls_index.has_value();
  if (p.cls_index) j["cls_index"] = *p.cls_index;
  j["budget"] = {{"total", p.budget.total}, {"dominant", p.budget.dominant}, {"contextual", p.budget.contextual}};
  j["crops"] = p.crops;
  j["key_source"] = p.key_source == KeySource::keys ? "keys" : "hidden";
  j["similarity"] = p.similarity == Similarity::dot ? "dot" : "cosine";
  j["drop_remainder"] = p.drop_remainder;
  j["cls_extra"] = p.cls_extra;
  j["output_shape"] = p.output_shape;
  j["items"] = nlohmann::json::array();
  for (const auto& it : p.items) {
    j["items"].push_back({{"batch", it.batch},
                          {"crop", it.crop},
                          {"source_batch", it.source_batch},
                          {"dominant_indices", it.dominant_indices},
                          {"target_indices", it.merge.target_indices},
                          {"merge_indices", it.merge.merge_indices},
                          {"assignment", it.merge.assignment}});
  }
  return j;
}

inline Provenance provenance_from_json(const nlohmann::json& j) {
  try {
    Provenance p;
    p.manifest = j.at("manifest").get<std::string>();
    p.layer = j.at("layer").get<std::size_t>();
    p.select_layer = j.at("select_layer").get<long>();
    if (j.contains("cls_index")) p.cls_index = j["cls_index"].get<std::size_t>();
    const auto& b = j.at("budget");
    p.budget = {b.at("total").get<std::size_t>(), b.at("dominant").get<std::size_t>(), b.at("contextual").get<std::size_t>()};
    p.crops = j.at("crops").get<std::size_t>();
    p.key_source = j.at("key_source").get<std::string>() == "hidden" ? KeySource::hidden : KeySource::keys;
    p.similarity = j.at("similarity").get<std::string>() == "cosine" ? Similarity::cosine : Similarity::dot;
    p.drop_remainder = j.at("drop_remainder").get<bool>();
    p.cls_extra = j.at("cls_extra").get<bool>();
    p.output_shape = j.at("output_shape").get<Shape>();
    for (const auto& it : j.at("items")) {
      ProvenanceItem item;
      item.batch = it.at("batch").get<std::size_t>();
      item.crop = it.at("crop").get<std::size_t>();
      item.source_batch = it.at("source_batch").get<std::size_t>();
      item.dominant_indices = it.at("dominant_indices").get<std::vector<std::size_t>>();
      item.merge.target_indices = it.at("target_indices").get<std::vector<std::size_t>>();
      item.merge.merge_indices = it.at("merge_indices").get<std::vector<std::size_t>>();
      item.merge.assignment = it.at("assignment").get<std::vector<std::size_t>>();
      p.items.push_back(std::move(item));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed provenance: ") + e.what());
  }
}

// Rebuilds the output tokens from the provenance and the hidden states of the
// recorded layer alone; attention and keys are not consulted.
inline Tensor replay_tokens(const Tensor& hidden, const Provenance& p) {
  if (hidden.rank() != 3 || p.output_shape.size() != 3) throw DimensionError("replay needs (B, S, D) hidden states");
  const std::size_t seq = hidden.shape()[1];
  const std::size_t dim = hidden.shape()[2];
  if (p.output_shape[2] != dim || p.crops == 0 || p.output_shape[1] % p.crops != 0) {
    throw ValidationError("provenance output shape does not match the hidden states");
  }
  const std::size_t per_crop = p.output_shape[1] / p.crops;
  Tensor out(p.output_shape);
  auto h = hidden.data();
  auto o = out.data();
  auto row = [&](std::size_t b, std::size_t s) {
    if (b >= hidden.shape()[0] || s >= seq) throw RangeError("provenance index outside the hidden states");
    return h.data() + (b * seq + s) * dim;
  };
  for (const ProvenanceItem& it : p.items) {
    const std::size_t m = it.merge.target_indices.size();
    if (it.dominant_indices.size() + m != per_crop || it.batch >= p.output_shape[0] || it.crop >= p.crops ||
        it.merge.assignment.size() != (m ? it.merge.merge_indices.size() : 0)) {
      throw ValidationError("inconsistent provenance item");
    }
    float* dst = o.data() + (it.batch * p.output_shape[1] + it.crop * per_crop) * dim;
    for (std::size_t j = 0; j < it.dominant_indices.size(); ++j)
      std::copy_n(row(it.source_batch, it.dominant_indices[j]), dim, dst + j * dim);
    for (std::size_t t = 0; t < m; ++t) {
      std::vector<double> acc(row(it.source_batch, it.merge.target_indices[t]),
                              row(it.source_batch, it.merge.target_indices[t]) + dim);
      std::size_t count = 1;
      for (std::size_t i = 0; i < it.merge.assignment.size(); ++i) {
        if (it.merge.assignment[i] != t) continue;
        const float* r = row(it.source_batch, it.merge.merge_indices[i]);
        for (std::size_t e = 0; e < dim; ++e) acc[e] += r[e];
        ++count;
      }
      float* c = dst + (it.dominant_indices.size() + t) * dim;
      for (std::size_t e = 0; e < dim; ++e) c[e] = static_cast<float>(acc[e] / static_cast<double>(count));
    }
  }
  return out;
}

inline nlohmann::json flops_json(const ModelDims& before, const ModelDims& after) {
  nlohmann::json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = "flops";
  j["inputs"] = {{"layers", before.layers}, {"hidden", before.hidden}, {"ffn", before.ffn},
                 {"text", before.text},     {"img_before", before.image}, {"img_after", after.image}};
  j["flops_before"] = total_flops(before);
  j["flops_after"] = total_flops(after);
  j["ratio"] = reduction_ratio(before, after);
  j["scope"] = "prefill";
  return j;
}

}  // namespace vzip
