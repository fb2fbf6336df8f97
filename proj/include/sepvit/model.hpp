#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sepvit/block.hpp"
#include "sepvit/config.hpp"
#include "sepvit/mac_counter.hpp"
#include "sepvit/ops.hpp"
#include "sepvit/window.hpp"

namespace sepvit {

namespace detail {

template <typename T>
Tensor<T> conv_xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<T> w(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  w.fill_uniform(rng, -bound, bound);
  w.set_requires_grad(true);
  return w;
}

}  // namespace detail

/// Overlapping patch merging. Stage 1 consumes RGB with one dense 7x7/s4
/// convolution; later stages downsample with a separable pair (depthwise
/// k x k strided, then pointwise channel expansion), which keeps the
/// overlapping-window downsampling while matching the family's parameter
/// budget. Either form is followed by LN over channels.
template <typename T>
struct MergeParams {
  bool separable = false;
  std::size_t stride = 0, kernel = 0, pad = 0;
  Tensor<T> conv_w, conv_b;            // dense path
  Tensor<T> dw_w, dw_b, pw_w, pw_b;    // separable path
  LayerNormParams<T> norm;

  MergeParams() = default;
  MergeParams(std::size_t c_in, std::size_t c_out, std::size_t kernel_, std::size_t stride_,
              bool separable_, Rng& rng)
      : separable(separable_), stride(stride_), kernel(kernel_), pad((kernel_ - 1) / 2),
        norm(c_out) {
    if (separable) {
      dw_w = detail::conv_xavier<T>({c_in, 1, kernel, kernel}, kernel * kernel,
                                    kernel * kernel, rng);
      dw_b = Tensor<T>({c_in});
      dw_b.set_requires_grad(true);
      pw_w = detail::conv_xavier<T>({c_out, c_in, 1, 1}, c_in, c_out, rng);
      pw_b = Tensor<T>({c_out});
      pw_b.set_requires_grad(true);
    } else {
      conv_w = detail::conv_xavier<T>({c_out, c_in, kernel, kernel}, c_in * kernel * kernel,
                                      c_out * kernel * kernel, rng);
      conv_b = Tensor<T>({c_out});
      conv_b.set_requires_grad(true);
    }
  }

  /// [B, C_in, H, W] -> [B, H/s, W/s, C_out], LN applied channelwise.
  Tensor<T> apply(const Tensor<T>& x, Tape<T>* tape) const {
    if (x.dim(2) % stride != 0 || x.dim(3) % stride != 0) {
      throw ShapeError("patch merge: spatial extents " + shape_str(x.shape()) +
                       " not divisible by stride " + std::to_string(stride));
    }
    Tensor<T> y;
    if (separable) {
      Tensor<T> mid = conv2d(x, dw_w, dw_b, stride, pad, x.dim(1), tape);
      y = conv2d(mid, pw_w, pw_b, 1, 0, 1, tape);
    } else {
      y = conv2d(x, conv_w, conv_b, stride, pad, 1, tape);
    }
    Tensor<T> nhwc = permute(y, {0, 2, 3, 1}, tape);
    return layer_norm(nhwc, norm, T(1e-5), tape);
  }

  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    if (separable) {
      fn("merge.dw.weight", dw_w);
      fn("merge.dw.bias", dw_b);
      fn("merge.pw.weight", pw_w);
      fn("merge.pw.bias", pw_b);
    } else {
      fn("merge.conv.weight", conv_w);
      fn("merge.conv.bias", conv_b);
    }
    fn("merge.norm.gamma", norm.gamma);
    fn("merge.norm.beta", norm.beta);
  }
};

/// Conditional position encoding: x + DepthwiseConv3x3(x), zero-initialized
/// so it starts as the identity. Applied once per stage after the first
/// block.
template <typename T>
struct CpeParams {
  Tensor<T> weight, bias;

  CpeParams() = default;
  explicit CpeParams(std::size_t c) : weight({c, 1, 3, 3}), bias({c}) {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  /// Operates on [B, H, W, C].
  Tensor<T> apply(const Tensor<T>& x, Tape<T>* tape) const {
    MacScope scope("cpe");
    Tensor<T> nchw = permute(x, {0, 3, 1, 2}, tape);
    Tensor<T> conv = conv2d(nchw, weight, bias, 1, 1, nchw.dim(1), tape);
    return add(x, permute(conv, {0, 2, 3, 1}, tape), tape);
  }

  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("cpe.weight", weight);
    fn("cpe.bias", bias);
  }
};

template <typename T>
struct StageParams {
  MergeParams<T> merge;
  CpeParams<T> cpe;
  std::vector<BlockParams<T>> blocks;
  std::vector<WindowLayout> layouts;
  std::vector<double> droppath;
};

/// Four-stage hierarchical SepViT backbone with a GAP → LN → linear head.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    validate_config(cfg_);
    Rng rng = Rng(seed).fork(0x696E6974);  // init stream
    const auto sides = cfg_.stage_sides();
    std::size_t c_in = 3;
    for (std::size_t s = 0; s < 4; ++s) {
      const StageConfig& st = cfg_.stages[s];
      StageParams<T>& stage = stages_[s];
      stage.merge = MergeParams<T>(c_in, st.channels, st.merge_kernel, st.merge_stride, s > 0, rng);
      if (st.depth > 0) stage.cpe = CpeParams<T>(st.channels);
      for (std::size_t i = 0; i < st.depth; ++i) {
        const std::size_t g = st.block_pattern[i] == BlockKind::kGsa ? st.group : 1;
        WindowLayout layout(sides[s], sides[s], st.window, g);
        stage.layouts.push_back(layout);
        stage.blocks.emplace_back(st.channels, st.heads, layout.num_windows(), cfg_.token_mode,
                                  rng, cfg_.mlp_ratio);
      }
      stage.droppath = st.droppath_rates;
      c_in = st.channels;
    }
    head_norm_ = LayerNormParams<T>(c_in);
    head_ = Linear<T>(c_in, cfg_.num_classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const StageParams<T>& stage(std::size_t i) const { return stages_[i]; }
  StageParams<T>& stage(std::size_t i) { return stages_[i]; }

  /// images [B, 3, R, R] -> logits [B, num_classes]. `stage_taps`, when
  /// given, collects each stage's output shape ([B, side, side, C]).
  Tensor<T> forward(const Tensor<T>& images, Tape<T>* tape = nullptr, bool training = false,
                    Rng* rng = nullptr, std::vector<Shape>* stage_taps = nullptr) const {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.input_resolution ||
        images.dim(3) != cfg_.input_resolution) {
      throw ShapeError("forward: images " + shape_str(images.shape()) + " but model expects [B,3," +
                       std::to_string(cfg_.input_resolution) + "," +
                       std::to_string(cfg_.input_resolution) + "]");
    }
    Tensor<T> x = images;  // NCHW between stages, NHWC inside a stage
    for (std::size_t s = 0; s < 4; ++s) {
      MacScope stage_scope("stage" + std::to_string(s + 1));
      const StageParams<T>& stage = stages_[s];
      Tensor<T> map;
      {
        MacScope merge_scope("merge");
        map = stage.merge.apply(x, tape);
      }
      for (std::size_t i = 0; i < stage.blocks.size(); ++i) {
        {
          MacScope block_scope("block" + std::to_string(i));
          map = sepvit_block(map, stage.blocks[i], stage.layouts[i], stage.droppath[i], training,
                             rng, tape);
        }
        if (i == 0) map = stage.cpe.apply(map, tape);
      }
      if (stage_taps) stage_taps->push_back(map.shape());
      x = s + 1 < 4 ? permute(map, {0, 3, 1, 2}, tape) : map;
    }
    MacScope head_scope("head");
    Tensor<T> pooled = mean_hw(x, tape);
    return linear(layer_norm(pooled, head_norm_, T(1e-5), tape), head_, tape);
  }

  /// Walks every learnable tensor as ("<component>.<leaf>", tensor) in a
  /// stable order. Fixed-zero window tokens are structural, not parameters,
  /// and are skipped.
  void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string prefix = "stage" + std::to_string(s + 1) + ".";
      stages_[s].merge.visit(
          [&](const std::string& name, Tensor<T>& t) { fn(prefix + name, t); });
      if (stages_[s].cpe.weight.size() > 0) {
        stages_[s].cpe.visit(
            [&](const std::string& name, Tensor<T>& t) { fn(prefix + name, t); });
      }
      for (std::size_t i = 0; i < stages_[s].blocks.size(); ++i) {
        const std::string bp = prefix + "block" + std::to_string(i) + ".";
        stages_[s].blocks[i].visit(
            [&](const std::string& name, Tensor<T>& t) { fn(bp + name, t); });
      }
    }
    fn("head.norm.gamma", head_norm_.gamma);
    fn("head.norm.beta", head_norm_.beta);
    fn("head.fc.weight", head_.weight);
    fn("head.fc.bias", head_.bias);
  }

  void zero_grads() {
    visit_params([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

  std::size_t param_count() {
    std::size_t total = 0;
    visit_params([&](const std::string&, Tensor<T>& t) { total += t.size(); });
    return total;
  }

 private:
  ModelConfig cfg_;
  std::array<StageParams<T>, 4> stages_;
  LayerNormParams<T> head_norm_;
  Linear<T> head_;
};

}  // namespace sepvit
