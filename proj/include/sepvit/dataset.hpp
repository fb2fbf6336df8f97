#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepvit/common.hpp"
#include "sepvit/rng.hpp"
#include "sepvit/tensor.hpp"

namespace sepvit {

/// Labeled image set, float32 CHW pixels. Classes are balanced to within one
/// sample (labels cycle 0..K-1 through the file).
struct Dataset {
  std::size_t count = 0;
  std::size_t classes = 0;
  std::size_t resolution = 0;
  std::uint64_t seed = 0;
  std::vector<float> images;  // [n, 3, R, R]
  std::vector<std::int32_t> labels;

  std::size_t image_elems() const { return 3 * resolution * resolution; }
};

/// Synthetic classification data: each class is a fixed archetype built from
/// a few low-frequency sinusoids per channel, and each sample adds uniform
/// pixel noise on top. Fully determined by the seed.
inline Dataset make_synthetic_dataset(std::uint64_t seed, std::size_t classes, std::size_t count,
                                      std::size_t resolution) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (count < classes) {
    throw ConfigError("synthetic dataset needs count >= classes, got " + std::to_string(count) +
                      " < " + std::to_string(classes));
  }
  Dataset ds;
  ds.count = count;
  ds.classes = classes;
  ds.resolution = resolution;
  ds.seed = seed;

  const std::size_t r = resolution;
  constexpr std::size_t kWaves = 3;
  constexpr double kTwoPi = 6.283185307179586477;

  Rng arch_rng = Rng(seed).fork(0xA5C0);
  std::vector<float> archetypes(classes * 3 * r * r);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double fx[kWaves], fy[kWaves], amp[kWaves], phase[kWaves];
      for (std::size_t j = 0; j < kWaves; ++j) {
        fx[j] = static_cast<double>(1 + arch_rng.below(4));
        fy[j] = static_cast<double>(1 + arch_rng.below(4));
        amp[j] = arch_rng.uniform(0.4, 1.0);
        phase[j] = arch_rng.uniform(0.0, kTwoPi);
      }
      float* plane = archetypes.data() + (k * 3 + ch) * r * r;
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) {
          double v = 0;
          for (std::size_t j = 0; j < kWaves; ++j) {
            v += amp[j] * std::sin(kTwoPi * (fx[j] * static_cast<double>(x) +
                                             fy[j] * static_cast<double>(y)) /
                                       static_cast<double>(r) +
                                   phase[j]);
          }
          plane[y * r + x] = static_cast<float>(v);
        }
      }
    }
  }

  Rng noise_rng = Rng(seed).fork(0x7015E);
  ds.images.resize(count * ds.image_elems());
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = i % classes;
    ds.labels[i] = static_cast<std::int32_t>(k);
    const float* arch = archetypes.data() + k * ds.image_elems();
    float* img = ds.images.data() + i * ds.image_elems();
    for (std::size_t j = 0; j < ds.image_elems(); ++j) {
      img[j] = arch[j] + static_cast<float>(noise_rng.uniform(-0.3, 0.3));
    }
  }
  return ds;
}

/// Dataset directory: meta.json plus little-endian blobs images.bin
/// (float32) and labels.bin (int32).
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["count"] = ds.count;
  meta["classes"] = ds.classes;
  meta["resolution"] = ds.resolution;
  meta["seed"] = ds.seed;
  std::ofstream mf(fs::path(dir) / "meta.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write " + dir + "/meta.json");
  mf << meta.dump(2) << '\n';

  std::ofstream imgf(fs::path(dir) / "images.bin", std::ios::binary | std::ios::trunc);
  if (!imgf) throw IoError("cannot write " + dir + "/images.bin");
  imgf.write(reinterpret_cast<const char*>(ds.images.data()),
             static_cast<std::streamsize>(ds.images.size() * sizeof(float)));

  std::ofstream labf(fs::path(dir) / "labels.bin", std::ios::binary | std::ios::trunc);
  if (!labf) throw IoError("cannot write " + dir + "/labels.bin");
  labf.write(reinterpret_cast<const char*>(ds.labels.data()),
             static_cast<std::streamsize>(ds.labels.size() * sizeof(std::int32_t)));
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw IoError("cannot open " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    mf >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("meta.json: ") + e.what());
  }
  Dataset ds;
  try {
    ds.count = meta.at("count").get<std::size_t>();
    ds.classes = meta.at("classes").get<std::size_t>();
    ds.resolution = meta.at("resolution").get<std::size_t>();
    ds.seed = meta.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("meta.json: ") + e.what());
  }

  ds.images.resize(ds.count * ds.image_elems());
  std::ifstream imgf(fs::path(dir) / "images.bin", std::ios::binary);
  if (!imgf) throw IoError("cannot open " + dir + "/images.bin");
  imgf.read(reinterpret_cast<char*>(ds.images.data()),
            static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  if (static_cast<std::size_t>(imgf.gcount()) != ds.images.size() * sizeof(float)) {
    throw IoError(dir + "/images.bin shorter than meta.json promises");
  }

  ds.labels.resize(ds.count);
  std::ifstream labf(fs::path(dir) / "labels.bin", std::ios::binary);
  if (!labf) throw IoError("cannot open " + dir + "/labels.bin");
  labf.read(reinterpret_cast<char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size() * sizeof(std::int32_t)));
  if (static_cast<std::size_t>(labf.gcount()) != ds.labels.size() * sizeof(std::int32_t)) {
    throw IoError(dir + "/labels.bin shorter than meta.json promises");
  }
  for (std::int32_t l : ds.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= ds.classes) {
      throw IoError(dir + "/labels.bin holds label " + std::to_string(l) + " outside [0, " +
                    std::to_string(ds.classes) + ")");
    }
  }
  return ds;
}

/// Copies samples [first, first+batch) into a [batch, 3, R, R] tensor.
template <typename T>
Tensor<T> dataset_batch(const Dataset& ds, const std::vector<std::size_t>& order,
                        std::size_t first, std::size_t batch, std::vector<int>* labels_out) {
  Tensor<T> images({batch, 3, ds.resolution, ds.resolution});
  T* dst = images.data();
  if (labels_out) labels_out->clear();
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t src_idx = order[first + i];
    const float* src = ds.images.data() + src_idx * ds.image_elems();
    for (std::size_t j = 0; j < ds.image_elems(); ++j) {
      dst[i * ds.image_elems() + j] = static_cast<T>(src[j]);
    }
    if (labels_out) labels_out->push_back(ds.labels[src_idx]);
  }
  return images;
}

}  // namespace sepvit
