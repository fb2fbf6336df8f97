#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepvit/config.hpp"
#include "sepvit/model.hpp"

namespace sepvit {

inline constexpr int kCheckpointFormatVersion = 1;

/// Checkpoint directory layout:
///   manifest.json — format version, dtype, full model config, ordered list
///                   of {name, shape} parameter entries
///   params.bin    — the raw little-endian scalars, concatenated in manifest
///                   order
/// The manifest echoes everything needed to rebuild the model; loading needs
/// no other input.
template <typename T>
void save_checkpoint(Model<T>& model, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);

  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["dtype"] = sizeof(T) == 4 ? "float32" : "float64";
  manifest["config"] = config_to_json(model.config());
  manifest["params"] = nlohmann::json::array();

  std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + dir + "/params.bin");
  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    manifest["params"].push_back(entry);
    blob.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(T)));
  });
  blob.close();
  if (!blob) throw IoError("failed writing " + dir + "/params.bin");

  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write " + dir + "/manifest.json");
  mf << manifest.dump(2) << '\n';
}

template <typename T>
Model<T> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }

  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                 ", this build reads version " +
                                 std::to_string(kCheckpointFormatVersion));
  }
  const std::string dtype = manifest.value("dtype", "");
  const std::string want = sizeof(T) == 4 ? "float32" : "float64";
  if (dtype != want) {
    throw CheckpointManifestError("checkpoint dtype '" + dtype + "', expected '" + want + "'");
  }
  if (!manifest.contains("config") || !manifest.contains("params")) {
    throw CheckpointManifestError("manifest missing 'config' or 'params'");
  }

  ModelConfig cfg = config_from_json(manifest["config"]);
  Model<T> model(cfg, 0);

  const auto& entries = manifest["params"];
  std::size_t idx = 0;
  std::uint64_t expected_scalars = 0;
  std::vector<std::pair<std::string, Shape>> manifest_order;
  for (const auto& e : entries) {
    Shape shape = e.at("shape").get<Shape>();
    expected_scalars += numel(shape);
    manifest_order.emplace_back(e.at("name").get<std::string>(), std::move(shape));
  }

  std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary | std::ios::ate);
  if (!blob) throw IoError("cannot open " + dir + "/params.bin");
  const std::uint64_t file_bytes = static_cast<std::uint64_t>(blob.tellg());
  if (file_bytes != expected_scalars * sizeof(T)) {
    throw CheckpointTruncatedError("params.bin holds " + std::to_string(file_bytes) +
                                   " bytes, manifest expects " +
                                   std::to_string(expected_scalars * sizeof(T)));
  }
  blob.seekg(0);

  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    if (idx >= manifest_order.size()) {
      throw CheckpointManifestError("manifest lists fewer parameters than the model has");
    }
    const auto& [mname, mshape] = manifest_order[idx];
    if (mname != name || mshape != t.shape()) {
      throw CheckpointManifestError("parameter " + std::to_string(idx) + ": manifest has '" +
                                    mname + "' " + shape_str(mshape) + ", model expects '" + name +
                                    "' " + shape_str(t.shape()));
    }
    blob.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!blob) throw CheckpointTruncatedError("params.bin truncated at parameter '" + name + "'");
    ++idx;
  });
  if (idx != manifest_order.size()) {
    throw CheckpointManifestError("manifest lists more parameters than the model has");
  }
  return model;
}

}  // namespace sepvit
