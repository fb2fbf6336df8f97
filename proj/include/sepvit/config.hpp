#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "sepvit/block.hpp"
#include "sepvit/common.hpp"

namespace sepvit {

enum class BlockKind { kDssa, kGsa };

inline std::string block_kind_name(BlockKind k) { return k == BlockKind::kDssa ? "DSSA" : "GSA"; }

inline BlockKind block_kind_from_name(const std::string& s) {
  if (s == "DSSA") return BlockKind::kDssa;
  if (s == "GSA") return BlockKind::kGsa;
  throw ConfigError("unknown block kind '" + s + "' (expected DSSA or GSA)");
}

/// Which block types a stage mixes, per the architecture table.
enum class StageBlockRow { kDssaOnly, kDssaGsa };

/// Stages that mix GSA alternate starting with DSSA; DSSA-only stages repeat
/// DSSA. stage_index is 0-based and only informs error messages.
inline std::vector<BlockKind> expand_block_pattern(std::size_t stage_index, std::size_t depth,
                                                   StageBlockRow row) {
  if (depth < 1) {
    throw ConfigError("stage " + std::to_string(stage_index + 1) + " needs depth >= 1");
  }
  std::vector<BlockKind> pattern(depth, BlockKind::kDssa);
  if (row == StageBlockRow::kDssaGsa) {
    for (std::size_t i = 1; i < depth; i += 2) pattern[i] = BlockKind::kGsa;
  }
  return pattern;
}

struct StageConfig {
  std::size_t depth = 0;
  std::size_t channels = 0;
  std::size_t heads = 0;
  std::size_t window = 0;        // M
  std::size_t group = 1;         // g used by GSA blocks
  std::size_t merge_kernel = 3;  // odd, > stride
  std::size_t merge_stride = 2;
  std::vector<BlockKind> block_pattern;  // length == depth
  std::vector<double> droppath_rates;    // length == depth

  std::size_t merge_pad() const { return (merge_kernel - 1) / 2; }
};

struct ModelConfig {
  std::string name;
  std::array<StageConfig, 4> stages;
  std::size_t num_classes = 1000;
  std::size_t input_resolution = 224;
  TokenMode token_mode = TokenMode::kLearnable;
  std::size_t mlp_ratio = 4;

  /// Feature-map side after each stage's merge.
  std::array<std::size_t, 4> stage_sides() const {
    std::array<std::size_t, 4> sides{};
    std::size_t side = input_resolution;
    for (std::size_t s = 0; s < 4; ++s) {
      side /= stages[s].merge_stride;
      sides[s] = side;
    }
    return sides;
  }
};

namespace detail {

inline ModelConfig make_config(std::string name, std::array<std::size_t, 4> depths,
                               std::array<std::size_t, 4> channels,
                               std::array<std::size_t, 4> heads, std::size_t window,
                               std::size_t group, std::size_t resolution,
                               std::size_t num_classes) {
  ModelConfig cfg;
  cfg.name = std::move(name);
  cfg.num_classes = num_classes;
  cfg.input_resolution = resolution;
  const std::array<StageBlockRow, 4> rows = {StageBlockRow::kDssaOnly, StageBlockRow::kDssaGsa,
                                             StageBlockRow::kDssaGsa, StageBlockRow::kDssaOnly};
  for (std::size_t s = 0; s < 4; ++s) {
    StageConfig& st = cfg.stages[s];
    st.depth = depths[s];
    st.channels = channels[s];
    st.heads = heads[s];
    st.window = window;
    st.group = group;
    st.merge_kernel = s == 0 ? 7 : 3;
    st.merge_stride = s == 0 ? 4 : 2;
    st.block_pattern = expand_block_pattern(s, depths[s], rows[s]);
    st.droppath_rates.assign(depths[s], 0.0);
  }
  return cfg;
}

}  // namespace detail

/// Linearly increasing stochastic-depth rates over the whole block sequence,
/// reaching max_rate at the final block.
inline void set_droppath_schedule(ModelConfig& cfg, double max_rate) {
  std::size_t total = 0;
  for (const auto& st : cfg.stages) total += st.depth;
  std::size_t idx = 0;
  for (auto& st : cfg.stages) {
    for (std::size_t i = 0; i < st.depth; ++i, ++idx) {
      st.droppath_rates[i] = total > 1 ? max_rate * static_cast<double>(idx) /
                                             static_cast<double>(total - 1)
                                       : 0.0;
    }
  }
}

inline ModelConfig preset(const std::string& name) {
  if (name == "lite") {
    return detail::make_config("lite", {1, 2, 6, 2}, {32, 64, 128, 256}, {1, 2, 4, 8}, 7, 2, 224,
                               1000);
  }
  if (name == "tiny") {
    return detail::make_config("tiny", {1, 2, 6, 2}, {96, 192, 384, 768}, {3, 6, 12, 24}, 7, 2,
                               224, 1000);
  }
  if (name == "small") {
    return detail::make_config("small", {1, 2, 14, 2}, {96, 192, 384, 768}, {3, 6, 12, 24}, 7, 2,
                               224, 1000);
  }
  if (name == "base") {
    return detail::make_config("base", {1, 2, 14, 2}, {128, 256, 512, 1024}, {4, 8, 16, 32}, 7, 2,
                               224, 1000);
  }
  if (name == "micro") {
    // Desk-scale variant: 64x64 inputs, stage sides 16/8/4/2.
    return detail::make_config("micro", {1, 2, 2, 1}, {16, 32, 64, 128}, {1, 2, 4, 8}, 2, 2, 64,
                               4);
  }
  throw ConfigError("unknown preset '" + name + "' (known: lite, tiny, small, base, micro)");
}

/// Structural legality: merge divisibility, window divisibility, head
/// divisibility, pattern lengths, GSA placement.
inline void validate_config(const ModelConfig& cfg) {
  std::size_t side = cfg.input_resolution;
  if (cfg.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  for (std::size_t s = 0; s < 4; ++s) {
    const StageConfig& st = cfg.stages[s];
    const std::string where = "stage " + std::to_string(s + 1);
    // depth 0 is a legal degenerate stage (merge only, no blocks)
    if (st.channels == 0 || st.heads == 0 || st.channels % st.heads != 0) {
      throw ConfigError(where + ": channels " + std::to_string(st.channels) +
                        " not divisible by heads " + std::to_string(st.heads));
    }
    if (st.merge_kernel % 2 == 0 || st.merge_kernel <= st.merge_stride) {
      throw ConfigError(where + ": merge kernel must be odd and exceed the stride");
    }
    if (side % st.merge_stride != 0) {
      throw ShapeError(where + ": feature side " + std::to_string(side) +
                       " not divisible by merge stride " + std::to_string(st.merge_stride));
    }
    side /= st.merge_stride;
    if (st.block_pattern.size() != st.depth || st.droppath_rates.size() != st.depth) {
      throw ConfigError(where + ": block pattern / droppath length must equal depth");
    }
    if (side % st.window != 0) {
      throw LayoutError(where + ": feature side " + std::to_string(side) +
                        " not divisible by window " + std::to_string(st.window));
    }
    for (BlockKind kind : st.block_pattern) {
      if (kind == BlockKind::kGsa && side % (st.group * st.window) != 0) {
        throw LayoutError(where + ": GSA needs side " + std::to_string(side) +
                          " divisible by g*M = " + std::to_string(st.group * st.window));
      }
    }
  }
}

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["num_classes"] = cfg.num_classes;
  j["input_resolution"] = cfg.input_resolution;
  j["token_mode"] = token_mode_name(cfg.token_mode);
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["stages"] = nlohmann::json::array();
  for (const auto& st : cfg.stages) {
    nlohmann::json js;
    js["depth"] = st.depth;
    js["channels"] = st.channels;
    js["heads"] = st.heads;
    js["window"] = st.window;
    js["group"] = st.group;
    js["merge_kernel"] = st.merge_kernel;
    js["merge_stride"] = st.merge_stride;
    js["block_pattern"] = nlohmann::json::array();
    for (BlockKind k : st.block_pattern) js["block_pattern"].push_back(block_kind_name(k));
    js["droppath_rates"] = st.droppath_rates;
    j["stages"].push_back(js);
  }
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.name = j.value("name", std::string("custom"));
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.input_resolution = j.at("input_resolution").get<std::size_t>();
    cfg.token_mode = token_mode_from_name(j.value("token_mode", std::string("learnable")));
    cfg.mlp_ratio = j.value("mlp_ratio", std::size_t{4});
    const auto& stages = j.at("stages");
    if (!stages.is_array() || stages.size() != 4) {
      throw ParseError("config field 'stages' must be an array of 4 stage objects");
    }
    for (std::size_t s = 0; s < 4; ++s) {
      const auto& js = stages[s];
      StageConfig& st = cfg.stages[s];
      st.depth = js.at("depth").get<std::size_t>();
      st.channels = js.at("channels").get<std::size_t>();
      st.heads = js.at("heads").get<std::size_t>();
      st.window = js.at("window").get<std::size_t>();
      st.group = js.value("group", std::size_t{1});
      st.merge_kernel = js.value("merge_kernel", s == 0 ? std::size_t{7} : std::size_t{3});
      st.merge_stride = js.value("merge_stride", s == 0 ? std::size_t{4} : std::size_t{2});
      if (js.contains("block_pattern")) {
        st.block_pattern.clear();
        for (const auto& name : js.at("block_pattern")) {
          st.block_pattern.push_back(block_kind_from_name(name.get<std::string>()));
        }
      } else {
        st.block_pattern = expand_block_pattern(
            s, st.depth, s == 1 || s == 2 ? StageBlockRow::kDssaGsa : StageBlockRow::kDssaOnly);
      }
      if (js.contains("droppath_rates")) {
        st.droppath_rates = js.at("droppath_rates").get<std::vector<double>>();
      } else {
        st.droppath_rates.assign(st.depth, 0.0);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

}  // namespace sepvit
