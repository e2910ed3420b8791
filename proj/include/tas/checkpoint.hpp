#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tas/nn.hpp"

namespace tas {

// Checkpoint = <base>.manifest.json + <base>.weights.bin.
// The manifest carries an ordered layer list (name, rows, cols, activation)
// plus arbitrary extra fields; the bin holds little-endian float32 values in
// manifest order, row-major, weights then biases per layer. Bare parameter
// vectors (e.g. a log-std head) are stored as rows=N, cols=0 entries whose
// payload is the bias block only.

struct CheckpointEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
  Activation act = Activation::Identity;
  const Vec* weights = nullptr;  // rows*cols values; null iff cols == 0
  const Vec* bias = nullptr;     // rows values
};

struct LoadedEntry {
  std::string name;
  Mat weight;
  Vec bias;
  Activation act = Activation::Identity;
};

struct LoadedCheckpoint {
  std::vector<LoadedEntry> entries;
  nlohmann::json manifest;

  const LoadedEntry& entry(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw ShapeError("checkpoint: missing entry " + name);
  }
  bool has_entry(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return true;
    return false;
  }
};

namespace detail {

inline void append_f32_le(std::string& out, double v) {
  const float f = static_cast<float>(v);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline double read_f32_le(const std::string& buf, size_t idx) {
  const size_t off = idx * 4;
  uint32_t bits = (static_cast<uint32_t>(static_cast<unsigned char>(buf[off]))) |
                  (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
                  (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
                  (static_cast<uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

}  // namespace detail

inline std::string checkpoint_weight_bytes(const std::vector<CheckpointEntry>& entries) {
  std::string bytes;
  for (const auto& e : entries) {
    if (e.cols > 0) {
      require(e.weights && static_cast<int>(e.weights->size()) == e.rows * e.cols,
              "checkpoint: weight size mismatch for " + e.name);
      for (double v : *e.weights) detail::append_f32_le(bytes, v);
    }
    require(e.bias && static_cast<int>(e.bias->size()) == e.rows,
            "checkpoint: bias size mismatch for " + e.name);
    for (double v : *e.bias) detail::append_f32_le(bytes, v);
  }
  return bytes;
}

inline void save_checkpoint(const std::string& base_path, const std::vector<CheckpointEntry>& entries,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = extra;
  manifest["layers"] = nlohmann::json::array();
  for (const auto& e : entries) {
    manifest["layers"].push_back({{"name", e.name},
                                  {"rows", e.rows},
                                  {"cols", e.cols},
                                  {"activation", activation_name(e.act)}});
  }
  std::filesystem::path base(base_path);
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  {
    std::ofstream mf(base_path + ".manifest.json", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write " + base_path + ".manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  {
    std::ofstream bf(base_path + ".weights.bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + base_path + ".weights.bin");
    const std::string bytes = checkpoint_weight_bytes(entries);
    bf.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
}

inline LoadedCheckpoint load_checkpoint(const std::string& base_path) {
  std::ifstream mf(base_path + ".manifest.json", std::ios::binary);
  if (!mf) throw ParseError("missing manifest: " + base_path + ".manifest.json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("layers") || !manifest["layers"].is_array())
    throw ParseError("malformed manifest: missing layers array");

  LoadedCheckpoint ck;
  ck.manifest = manifest;
  size_t expected_floats = 0;
  for (const auto& lj : manifest["layers"]) {
    if (!lj.contains("name") || !lj.contains("rows") || !lj.contains("cols") ||
        !lj.contains("activation"))
      throw ParseError("malformed manifest: incomplete layer record");
    LoadedEntry e;
    e.name = lj["name"].get<std::string>();
    const int rows = lj["rows"].get<int>();
    const int cols = lj["cols"].get<int>();
    if (rows < 0 || cols < 0) throw ShapeError("manifest layer " + e.name + ": negative shape");
    e.weight = Mat(cols > 0 ? rows : 0, cols);
    e.bias = Vec(rows, 0.0);
    e.act = activation_from_name(lj["activation"].get<std::string>());
    expected_floats += static_cast<size_t>(rows) * cols + rows;
    ck.entries.push_back(std::move(e));
  }

  std::ifstream bf(base_path + ".weights.bin", std::ios::binary);
  if (!bf) throw ParseError("missing weights: " + base_path + ".weights.bin");
  std::string bytes((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  if (bytes.size() < expected_floats * 4)
    throw TruncationError("weights payload truncated: have " + std::to_string(bytes.size()) +
                          " bytes, manifest expects " + std::to_string(expected_floats * 4));
  if (bytes.size() > expected_floats * 4)
    throw ShapeError("weights payload length mismatch: have " + std::to_string(bytes.size()) +
                     " bytes, manifest expects " + std::to_string(expected_floats * 4));

  size_t idx = 0;
  for (auto& e : ck.entries) {
    for (double& v : e.weight.data) v = detail::read_f32_le(bytes, idx++);
    for (double& v : e.bias) v = detail::read_f32_le(bytes, idx++);
  }
  return ck;
}

inline std::vector<CheckpointEntry> mlp_checkpoint_entries(const MlpParams& p, const std::string& prefix) {
  std::vector<CheckpointEntry> out;
  for (size_t i = 0; i < p.layers.size(); ++i) {
    const Layer& l = p.layers[i];
    out.push_back({prefix + ".layer" + std::to_string(i), l.weight.rows, l.weight.cols, l.act,
                   &l.weight.data, &l.bias});
  }
  return out;
}

// Rebuild an MLP from consecutive checkpoint entries carrying `prefix`.
inline MlpParams mlp_from_checkpoint(const LoadedCheckpoint& ck, const std::string& prefix) {
  MlpParams p;
  for (const auto& e : ck.entries) {
    if (e.name.rfind(prefix + ".layer", 0) != 0) continue;
    Layer l;
    l.weight = e.weight;
    l.bias = e.bias;
    l.act = e.act;
    if (!p.layers.empty() && p.layers.back().weight.rows != l.weight.cols)
      throw ShapeError("checkpoint: layer shapes do not chain for " + prefix);
    p.layers.push_back(std::move(l));
  }
  if (p.layers.empty()) throw ShapeError("checkpoint: no layers found for prefix " + prefix);
  return p;
}

// Round every parameter through float32, matching what a save/load cycle
// produces. Inference determinism claims are stated at this precision.
inline void quantize_to_checkpoint_precision(MlpParams& p) {
  for (auto& l : p.layers) {
    for (double& v : l.weight.data) v = static_cast<double>(static_cast<float>(v));
    for (double& v : l.bias) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace tas
