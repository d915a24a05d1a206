#pragma once

// Dataset manifest: a JSON file describing per-layer NPY shards of attention,
// hidden states and (optionally) keys, with paths relative to the manifest.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vzip/npy.hpp"
#include "vzip/stack.hpp"

namespace vzip {

inline constexpr const char* kSchemaVersion = "vzip/1";

struct ManifestFiles {
  std::vector<std::string> attention;  // one shard per layer, (B, H, S, S)
  std::vector<std::string> hidden;     // (B, S, d_model)
  std::vector<std::string> keys;       // (B, H, S, d_head) or (B, S, H * d_head); may be empty
};

struct Manifest {
  std::size_t num_layers = 0;
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t seq = 0;
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  bool has_cls = false;
  std::optional<std::size_t> cls_index;
  long select_layer = -2;
  ManifestFiles files;
  std::string source;
  std::filesystem::path base_dir;  // directory holding the manifest; not serialized

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
  bool has_keys() const { return !files.keys.empty(); }
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["schema"] = kSchemaVersion;
  j["kind"] = "manifest";
  j["num_layers"] = m.num_layers;
  j["batch"] = m.batch;
  j["heads"] = m.heads;
  j["seq"] = m.seq;
  j["d_model"] = m.d_model;
  j["d_head"] = m.d_head;
  j["has_cls"] = m.has_cls;
  if (m.cls_index) j["cls_index"] = *m.cls_index;
  j["select_layer"] = m.select_layer;
  j["files"]["attention"] = m.files.attention;
  j["files"]["hidden"] = m.files.hidden;
  if (m.has_keys()) j["files"]["keys"] = m.files.keys;
  j["source"] = m.source;
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema", "") != kSchemaVersion) {
      throw ValidationError("manifest schema must be \"" + std::string(kSchemaVersion) + "\"");
    }
    Manifest m;
    m.num_layers = j.at("num_layers").get<std::size_t>();
    m.batch = j.at("batch").get<std::size_t>();
    m.heads = j.at("heads").get<std::size_t>();
    m.seq = j.at("seq").get<std::size_t>();
    m.d_model = j.at("d_model").get<std::size_t>();
    m.d_head = j.at("d_head").get<std::size_t>();
    m.has_cls = j.at("has_cls").get<bool>();
    if (j.contains("cls_index") && !j["cls_index"].is_null()) m.cls_index = j["cls_index"].get<std::size_t>();
    m.select_layer = j.value("select_layer", -2L);
    const auto& f = j.at("files");
    m.files.attention = f.at("attention").get<std::vector<std::string>>();
    m.files.hidden = f.at("hidden").get<std::vector<std::string>>();
    if (f.contains("keys")) m.files.keys = f["keys"].get<std::vector<std::string>>();
    m.source = j.value("source", "");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
}

// Checks internal consistency, then every shard header against the declared
// dimensions. Payloads are not read.
inline void validate_manifest(const Manifest& m) {
  auto bad = [](const std::string& why) { throw ValidationError("manifest: " + why); };
  if (m.num_layers == 0 || m.batch == 0 || m.heads == 0 || m.seq == 0 || m.d_model == 0) {
    bad("num_layers, batch, heads, seq and d_model must be positive");
  }
  if (m.has_cls != m.cls_index.has_value()) bad("cls_index must be present exactly when has_cls is true");
  if (m.cls_index && *m.cls_index >= m.seq) bad("cls_index out of range");
  if (m.files.attention.size() != m.num_layers) bad("expected one attention shard per layer");
  if (m.files.hidden.size() != m.num_layers) bad("expected one hidden-state shard per layer");
  if (m.has_keys() && m.files.keys.size() != m.num_layers) bad("expected one key shard per layer");

  auto check = [&](const std::string& rel, const std::vector<Shape>& allowed) {
    const Shape got = read_npy_shape(m.resolve(rel));
    for (const Shape& s : allowed)
      if (got == s) return;
    bad(rel + " has shape " + shape_str(got) + ", expected " + shape_str(allowed.front()));
  };
  for (const auto& f : m.files.attention) check(f, {{m.batch, m.heads, m.seq, m.seq}});
  for (const auto& f : m.files.hidden) check(f, {{m.batch, m.seq, m.d_model}});
  for (const auto& f : m.files.keys) check(f, {{m.batch, m.heads, m.seq, m.d_head}, {m.batch, m.seq, m.heads * m.d_head}});
}

inline Manifest load_manifest(const std::filesystem::path& path, bool validate = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  Manifest m = manifest_from_json(j);
  m.base_dir = path.parent_path();
  if (validate) validate_manifest(m);
  return m;
}

inline Tensor load_attention(const Manifest& m, std::size_t layer) { return read_tensor(m.resolve(m.files.attention.at(layer))); }
inline Tensor load_hidden(const Manifest& m, std::size_t layer) { return read_tensor(m.resolve(m.files.hidden.at(layer))); }
inline std::optional<Tensor> load_keys(const Manifest& m, std::size_t layer) {
  if (!m.has_keys()) return std::nullopt;
  return read_tensor(m.resolve(m.files.keys.at(layer)));
}

inline AttentionStack load_attention_stack(const Manifest& m) {
  AttentionStack s;
  s.cls_index = m.cls_index;
  for (std::size_t l = 0; l < m.num_layers; ++l) s.layers.push_back(load_attention(m, l));
  return s;
}

// Writes per-layer shards plus manifest.json into `dir` and returns the manifest.
inline Manifest write_dataset(const std::filesystem::path& dir, const AttentionStack& attn, const HiddenStack& hidden,
                              const KeyStack* keys, std::size_t d_head, std::string source) {
  if (attn.num_layers() == 0 || attn.num_layers() != hidden.num_layers()) {
    throw ValidationError("write_dataset: attention and hidden stacks must have the same non-zero layer count");
  }
  std::filesystem::create_directories(dir);
  const Shape& as = attn.layers.front().shape();
  const Shape& hs = hidden.layers.front().shape();
  Manifest m;
  m.num_layers = attn.num_layers();
  m.batch = as.at(0);
  m.heads = as.at(1);
  m.seq = as.at(2);
  m.d_model = hs.at(2);
  m.d_head = d_head;
  m.has_cls = attn.cls_index.has_value();
  m.cls_index = attn.cls_index;
  m.source = std::move(source);
  m.base_dir = dir;
  for (std::size_t l = 0; l < m.num_layers; ++l) {
    const std::string n = std::to_string(l);
    m.files.attention.push_back("attention.layer" + n + ".npy");
    m.files.hidden.push_back("hidden.layer" + n + ".npy");
    write_tensor(dir / m.files.attention.back(), attn.layers[l]);
    write_tensor(dir / m.files.hidden.back(), hidden.layers[l]);
    if (keys && !keys->layers.empty()) {
      m.files.keys.push_back("keys.layer" + n + ".npy");
      write_tensor(dir / m.files.keys.back(), keys->layers.at(l));
    }
  }
  write_file_atomic(dir / "manifest.json", to_json(m).dump(2) + "\n");
  validate_manifest(m);
  return m;
}

}  // namespace vzip
