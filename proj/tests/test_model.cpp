#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "helpers.hpp"
#include "sepvit/checkpoint.hpp"
#include "sepvit/config.hpp"
#include "sepvit/model.hpp"

using namespace sepvit;
using test_helpers::random_tensor;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::current_path() / name;
  fs::remove_all(p);
  return p;
}

template <typename T>
std::map<std::string, Tensor<T>> named_params(Model<T>& m) {
  std::map<std::string, Tensor<T>> out;
  m.visit_params([&](const std::string& name, Tensor<T>& t) { out.emplace(name, t); });
  return out;
}

}  // namespace

TEST_CASE("presets: architecture table rows") {
  auto tiny = preset("tiny");
  CHECK(tiny.stages[0].channels == 96);
  CHECK(tiny.stages[1].channels == 192);
  CHECK(tiny.stages[2].channels == 384);
  CHECK(tiny.stages[3].channels == 768);
  CHECK(tiny.stages[0].depth == 1);
  CHECK(tiny.stages[1].depth == 2);
  CHECK(tiny.stages[2].depth == 6);
  CHECK(tiny.stages[3].depth == 2);
  CHECK(tiny.stages[0].heads == 3);
  CHECK(tiny.stages[1].heads == 6);
  CHECK(tiny.stages[2].heads == 12);
  CHECK(tiny.stages[3].heads == 24);
  CHECK(tiny.stages[0].window == 7);
  CHECK(tiny.stages[1].group == 2);
  CHECK(tiny.input_resolution == 224);
  CHECK(tiny.token_mode == TokenMode::kLearnable);

  auto lite = preset("lite");
  CHECK(lite.stages[0].channels == 32);
  CHECK(lite.stages[1].channels == 64);
  CHECK(lite.stages[2].channels == 128);
  CHECK(lite.stages[3].channels == 256);
  CHECK(lite.stages[0].heads == 1);
  CHECK(lite.stages[3].heads == 8);

  auto small = preset("small");
  CHECK(small.stages[2].depth == 14);
  auto base = preset("base");
  CHECK(base.stages[3].channels == 1024);
  CHECK(base.stages[3].heads == 32);

  auto micro = preset("micro");
  CHECK(micro.input_resolution == 64);
  CHECK(micro.stages[0].window == 2);
  const auto sides = micro.stage_sides();
  CHECK(sides == std::array<std::size_t, 4>{16, 8, 4, 2});
  for (std::size_t s = 0; s < 4; ++s) CHECK(sides[s] % micro.stages[s].window == 0);
  // GSA stages need side divisible by g*M = 4.
  CHECK(sides[1] % 4 == 0);
  CHECK(sides[2] % 4 == 0);

  CHECK_THROWS_AS(preset("giant"), ConfigError);
  try {
    preset("giant");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("giant") != std::string::npos);
  }
}

TEST_CASE("presets: structural invariants for every variant") {
  for (const char* name : {"lite", "tiny", "small", "base", "micro"}) {
    auto cfg = preset(name);
    validate_config(cfg);
    const auto sides = cfg.stage_sides();
    // 32x total downsampling and channel doubling after stage 2.
    CHECK(sides[3] * 32 == cfg.input_resolution);
    for (std::size_t s = 1; s < 4; ++s)
      CHECK(cfg.stages[s].channels == 2 * cfg.stages[s - 1].channels);
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(cfg.stages[s].channels % cfg.stages[s].heads == 0);
      for (std::size_t i = 0; i < cfg.stages[s].depth; ++i) {
        if (cfg.stages[s].block_pattern[i] == BlockKind::kGsa) {
          CHECK(sides[s] % (cfg.stages[s].group * cfg.stages[s].window) == 0);
          CHECK(s != 0);
          CHECK(s != 3);
        }
      }
    }
  }
}

TEST_CASE("expand_block_pattern: stage rows") {
  auto s2 = expand_block_pattern(1, 2, StageBlockRow::kDssaGsa);
  REQUIRE(s2.size() == 2);
  CHECK(s2[0] == BlockKind::kDssa);
  CHECK(s2[1] == BlockKind::kGsa);

  auto s3 = expand_block_pattern(2, 6, StageBlockRow::kDssaGsa);
  const std::vector<BlockKind> expect = {BlockKind::kDssa, BlockKind::kGsa, BlockKind::kDssa,
                                         BlockKind::kGsa,  BlockKind::kDssa, BlockKind::kGsa};
  CHECK(s3 == expect);

  auto s4 = expand_block_pattern(3, 2, StageBlockRow::kDssaOnly);
  CHECK(s4 == std::vector<BlockKind>{BlockKind::kDssa, BlockKind::kDssa});

  CHECK_THROWS_AS(expand_block_pattern(0, 0, StageBlockRow::kDssaOnly), ConfigError);
}

TEST_CASE("validate_config: indivisible geometries are rejected") {
  auto cfg = preset("tiny");
  cfg.input_resolution = 225;
  CHECK_THROWS_AS(validate_config(cfg), Error);

  auto bad_heads = preset("micro");
  bad_heads.stages[1].heads = 5;
  CHECK_THROWS_AS(validate_config(bad_heads), ConfigError);

  auto bad_window = preset("micro");
  bad_window.stages[3].window = 3;  // side 2 not divisible by 3
  CHECK_THROWS_AS(validate_config(bad_window), LayoutError);
}

TEST_CASE("config: json round trip") {
  auto cfg = preset("micro");
  cfg.token_mode = TokenMode::kFixedZero;
  auto j = config_to_json(cfg);
  auto back = config_from_json(j);
  CHECK(back.name == cfg.name);
  CHECK(back.num_classes == cfg.num_classes);
  CHECK(back.input_resolution == cfg.input_resolution);
  CHECK(back.token_mode == TokenMode::kFixedZero);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(back.stages[s].depth == cfg.stages[s].depth);
    CHECK(back.stages[s].channels == cfg.stages[s].channels);
    CHECK(back.stages[s].block_pattern == cfg.stages[s].block_pattern);
  }
  nlohmann::json broken = j;
  broken.erase("num_classes");
  CHECK_THROWS_AS(config_from_json(broken), ParseError);
}

TEST_CASE("patch merge: downsampling shapes and parameter accounting") {
  Rng rng(5);
  // Stage-1 style dense merge: 224 -> 56.
  MergeParams<float> m1(3, 96, 7, 4, /*separable=*/false, rng);
  Tensor<float> img({1, 3, 224, 224});
  img.fill_uniform(rng, -1, 1);
  auto out1 = m1.apply(img, nullptr);
  CHECK(out1.shape() == Shape{1, 56, 56, 96});

  // Stage-2 style separable merge: 56 -> 28.
  MergeParams<float> m2(96, 192, 3, 2, /*separable=*/true, rng);
  Tensor<float> feat({1, 96, 56, 56});
  feat.fill_uniform(rng, -1, 1);
  auto out2 = m2.apply(feat, nullptr);
  CHECK(out2.shape() == Shape{1, 28, 28, 192});

  // Dense k=3, s=2 convolution from 96 to 192 channels carries
  // 3*3*96*192 + 192 parameters.
  MergeParams<float> dense(96, 192, 3, 2, /*separable=*/false, rng);
  CHECK(dense.conv_w.size() + dense.conv_b.size() == 165888 + 192);

  // The separable pair at the same geometry.
  std::size_t sep_params = 0;
  m2.visit([&](const std::string&, Tensor<float>& t) { sep_params += t.size(); });
  CHECK(sep_params == 96 * 9 + 96 + 96 * 192 + 192 + 2 * 192);

  // Indivisible spatial extent.
  Tensor<float> odd({1, 96, 55, 55});
  CHECK_THROWS_AS(m2.apply(odd, nullptr), ShapeError);
}

TEST_CASE("cpe: identity at init, translation equivariance in the interior") {
  Rng rng(7);
  CpeParams<double> cpe(4);
  auto x = random_tensor(rng, {1, 6, 6, 4});
  auto y = cpe.apply(x, nullptr);
  CHECK(y.values() == x.values());  // zero-initialized conv

  cpe.weight.fill_uniform(rng, -1, 1);
  cpe.bias.fill_uniform(rng, -0.1, 0.1);
  auto base = cpe.apply(x, nullptr);
  Tensor<double> shifted({1, 6, 6, 4});
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t ch = 0; ch < 4; ++ch)
        shifted.data()[(i * 6 + j) * 4 + ch] = x.data()[((i - 1) * 6 + j) * 4 + ch];
  auto moved = cpe.apply(shifted, nullptr);
  for (std::size_t i = 2; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j)
      for (std::size_t ch = 0; ch < 4; ++ch)
        CHECK(moved.data()[(i * 6 + j) * 4 + ch] == base.data()[((i - 1) * 6 + j) * 4 + ch]);
}

TEST_CASE("model forward: micro shape contract and stage sides") {
  Model<float> model(preset("micro"), 11);
  Rng rng(13);
  Tensor<float> images({2, 3, 64, 64});
  images.fill_uniform(rng, -1, 1);
  std::vector<Shape> taps;
  auto logits = model.forward(images, nullptr, false, nullptr, &taps);
  CHECK(logits.shape() == Shape{2, 4});
  REQUIRE(taps.size() == 4);
  CHECK(taps[0] == Shape{2, 16, 16, 16});
  CHECK(taps[1] == Shape{2, 8, 8, 32});
  CHECK(taps[2] == Shape{2, 4, 4, 64});
  CHECK(taps[3] == Shape{2, 2, 2, 128});

  Tensor<float> wrong({2, 3, 32, 32});
  CHECK_THROWS_AS(model.forward(wrong), ShapeError);
}

TEST_CASE("model forward: tiny stage sides at 224 px") {
  Model<float> model(preset("tiny"), 3);
  Tensor<float> images({1, 3, 224, 224});
  Rng rng(17);
  images.fill_uniform(rng, -1, 1);
  std::vector<Shape> taps;
  auto logits = model.forward(images, nullptr, false, nullptr, &taps);
  CHECK(logits.shape() == Shape{1, 1000});
  REQUIRE(taps.size() == 4);
  CHECK(taps[0][1] == 56);
  CHECK(taps[1][1] == 28);
  CHECK(taps[2][1] == 14);
  CHECK(taps[3][1] == 7);
}

TEST_CASE("model forward: permuting the batch permutes the logits") {
  Model<float> model(preset("micro"), 19);
  Rng rng(23);
  Tensor<float> pair({2, 3, 64, 64});
  pair.fill_uniform(rng, -1, 1);
  const std::size_t half = pair.size() / 2;
  Tensor<float> swapped({2, 3, 64, 64});
  for (std::size_t i = 0; i < half; ++i) {
    swapped.data()[i] = pair.data()[half + i];
    swapped.data()[half + i] = pair.data()[i];
  }
  auto a = model.forward(pair);
  auto b = model.forward(swapped);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(a.data()[j] == b.data()[4 + j]);
    CHECK(a.data()[4 + j] == b.data()[j]);
  }
}

TEST_CASE("model: identical seeds build identical parameters") {
  Model<float> a(preset("micro"), 29);
  Model<float> b(preset("micro"), 29);
  auto pa = named_params(a);
  auto pb = named_params(b);
  REQUIRE(pa.size() == pb.size());
  for (auto& [name, t] : pa) {
    REQUIRE(pb.count(name) == 1);
    CHECK(t.values() == pb.at(name).values());
  }
  Model<float> c(preset("micro"), 31);
  bool any_diff = false;
  auto pc = named_params(c);
  for (auto& [name, t] : pa) {
    if (t.values() != pc.at(name).values()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("model: end-to-end micro gradients match finite differences") {
  ModelConfig cfg = preset("micro");
  Model<double> model(cfg, 37);
  Rng rng(41);
  // Move off the all-zero token init: its zero-variance layer-norm rows have
  // curvature that central differences cannot resolve.
  model.visit_params([&](const std::string& name, Tensor<double>& t) {
    if (test_helpers::is_window_token_param(name)) t.fill_uniform(rng, -0.5, 0.5);
  });
  Tensor<double> images({1, 3, 64, 64});
  images.fill_uniform(rng, -0.5, 0.5);
  Tensor<double> probe_w({4, 1});
  probe_w.fill_uniform(rng, -1, 1);

  auto loss_value = [&]() {
    return sum_all(matmul(model.forward(images), probe_w)).item();
  };

  model.zero_grads();
  Tape<double> tape;
  auto loss = sum_all(matmul(model.forward(images, &tape), probe_w, &tape), &tape);
  tape.backward(loss);

  auto params = named_params(model);
  const std::vector<std::pair<std::string, std::size_t>> probes = {
      {"stage1.merge.conv.weight", 5}, {"stage2.block0.dwa.q.weight", 7},
      {"stage3.block1.pwa.k.weight", 11}, {"stage4.block0.mlp.fc2.weight", 3},
      {"head.fc.weight", 2}, {"stage2.block0.dwa.tokens", 1}, {"stage3.cpe.weight", 4},
  };
  for (const auto& [name, idx] : probes) {
    REQUIRE_MESSAGE(params.count(name) == 1, name);
    Tensor<double>& t = params.at(name);
    const double ad = t.has_grad() ? t.grad()[idx] : 0.0;
    const double fd = finite_diff_slot(loss_value, t.data() + idx, 1e-5);
    const double mag = std::max(std::fabs(ad), std::fabs(fd));
    const double err = mag < 1e-9 ? std::fabs(ad - fd) : std::fabs(ad - fd) / mag;
    CHECK_MESSAGE(err < 1e-4, name << ": autodiff " << ad << " vs fd " << fd);
  }
}

TEST_CASE("checkpoint: round trip reproduces the forward bit-exactly") {
  const fs::path dir = fresh_dir("ckpt_roundtrip");
  Model<float> model(preset("micro"), 43);
  Rng rng(47);
  Tensor<float> images({1, 3, 64, 64});
  images.fill_uniform(rng, -1, 1);
  auto before = model.forward(images);

  save_checkpoint(model, dir.string());
  Model<float> restored = load_checkpoint<float>(dir.string());
  auto after = restored.forward(images);
  CHECK(before.values() == after.values());

  // The manifest echoes the config; no other input was used above.
  std::ifstream mf(dir / "manifest.json");
  nlohmann::json manifest;
  mf >> manifest;
  CHECK(manifest["config"]["name"] == "micro");
  CHECK(manifest["format_version"] == kCheckpointFormatVersion);

  std::uint64_t manifest_scalars = 0;
  for (const auto& e : manifest["params"]) {
    std::uint64_t n = 1;
    for (const auto& d : e["shape"]) n *= d.get<std::uint64_t>();
    manifest_scalars += n;
  }
  CHECK(manifest_scalars == model.param_count());
  CHECK(fs::file_size(dir / "params.bin") == manifest_scalars * sizeof(float));
}

TEST_CASE("checkpoint: distinct load failures") {
  const fs::path dir = fresh_dir("ckpt_failures");
  Model<float> model(preset("micro"), 53);
  save_checkpoint(model, dir.string());

  SUBCASE("truncated blob") {
    fs::resize_file(dir / "params.bin", fs::file_size(dir / "params.bin") - 8);
    CHECK_THROWS_AS(load_checkpoint<float>(dir.string()), CheckpointTruncatedError);
  }
  SUBCASE("version mismatch") {
    std::ifstream in(dir / "manifest.json");
    nlohmann::json manifest;
    in >> manifest;
    in.close();
    manifest["format_version"] = 999;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>(dir.string()), CheckpointVersionError);
  }
  SUBCASE("manifest shape mismatch") {
    std::ifstream in(dir / "manifest.json");
    nlohmann::json manifest;
    in >> manifest;
    in.close();
    manifest["params"][0]["shape"] = {1, 2, 3};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>(dir.string()), IoError);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_checkpoint<float>("no_such_checkpoint_dir"), IoError);
  }
}

TEST_CASE("checkpoint: fixed-zero tokens are structural, not serialized") {
  const fs::path dir = fresh_dir("ckpt_fixed_tokens");
  ModelConfig cfg = preset("micro");
  cfg.token_mode = TokenMode::kFixedZero;
  Model<float> model(cfg, 59);
  save_checkpoint(model, dir.string());
  Model<float> restored = load_checkpoint<float>(dir.string());
  CHECK(restored.config().token_mode == TokenMode::kFixedZero);
  bool has_tokens = false;
  restored.visit_params([&](const std::string& name, Tensor<float>&) {
    if (test_helpers::is_window_token_param(name)) has_tokens = true;
  });
  CHECK(!has_tokens);
}
