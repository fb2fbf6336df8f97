#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sepvit/common.hpp"
#include "sepvit/mac_counter.hpp"
#include "sepvit/ops.hpp"
#include "sepvit/rng.hpp"
#include "sepvit/window.hpp"

namespace sepvit {

enum class TokenMode { kFixedZero, kLearnable };

inline std::string token_mode_name(TokenMode m) {
  return m == TokenMode::kFixedZero ? "fixed_zero" : "learnable";
}

inline TokenMode token_mode_from_name(const std::string& s) {
  if (s == "fixed_zero") return TokenMode::kFixedZero;
  if (s == "learnable") return TokenMode::kLearnable;
  throw ConfigError("unknown token mode '" + s + "' (expected fixed_zero or learnable)");
}

/// One C-vector per window, appended before DWA. Zero at construction in
/// both modes; only the learnable mode participates in gradients.
template <typename T>
struct WindowTokens {
  Tensor<T> values;  // [N, C]
  TokenMode mode = TokenMode::kLearnable;

  WindowTokens() = default;
  WindowTokens(std::size_t n, std::size_t c, TokenMode m) : values({n, c}), mode(m) {
    values.set_requires_grad(mode == TokenMode::kLearnable);
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out], applied as x · W
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) : weight({in, out}), bias({out}) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    weight.fill_uniform(rng, -bound, bound);
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t c) : gamma({c}, T(1)), beta({c}) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }
};

template <typename T>
Tensor<T> concat_window_tokens(const Tensor<T>& wins, const WindowTokens<T>& wt,
                               Tape<T>* tape = nullptr) {
  return concat_window_tokens(wins, wt.values, tape);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Linear<T>& lin, Tape<T>* tape = nullptr) {
  return add_bias(matmul(x, lin.weight, tape), lin.bias, tape);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& ln, T eps = T(1e-5),
                     Tape<T>* tape = nullptr) {
  return layer_norm(x, ln.gamma, ln.beta, eps, tape);
}

/// Learnable state of one SepViT block. The q/k/v projections serve pixel
/// and window tokens alike inside DWA; pwa_query/pwa_key act on window
/// tokens only, and proj is the single output projection after PWA.
template <typename T>
struct BlockParams {
  std::size_t channels = 0;
  std::size_t heads = 0;
  Linear<T> query, key, value;
  Linear<T> pwa_query, pwa_key;
  Linear<T> proj;
  LayerNormParams<T> ln_attn, ln_mlp, ln_tokens;
  Linear<T> mlp_fc1, mlp_fc2;
  WindowTokens<T> tokens;

  BlockParams() = default;
  BlockParams(std::size_t c, std::size_t h, std::size_t num_windows, TokenMode mode, Rng& rng,
              std::size_t mlp_ratio = 4)
      : channels(c),
        heads(h),
        query(c, c, rng),
        key(c, c, rng),
        value(c, c, rng),
        pwa_query(c, c, rng),
        pwa_key(c, c, rng),
        proj(c, c, rng),
        ln_attn(c),
        ln_mlp(c),
        ln_tokens(c),
        mlp_fc1(c, mlp_ratio * c, rng),
        mlp_fc2(mlp_ratio * c, c, rng),
        tokens(num_windows, c, mode) {
    if (h == 0 || c % h != 0) {
      throw ConfigError("channels " + std::to_string(c) + " not divisible by heads " +
                        std::to_string(h));
    }
  }

  std::size_t head_dim() const { return channels / heads; }

  /// Walks learnable tensors in a stable order (fixed-zero tokens excluded).
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    fn("dwa.q.weight", query.weight);
    fn("dwa.q.bias", query.bias);
    fn("dwa.k.weight", key.weight);
    fn("dwa.k.bias", key.bias);
    fn("dwa.v.weight", value.weight);
    fn("dwa.v.bias", value.bias);
    fn("dwa.ln_attn.gamma", ln_attn.gamma);
    fn("dwa.ln_attn.beta", ln_attn.beta);
    if (tokens.mode == TokenMode::kLearnable) fn("dwa.tokens", tokens.values);
    fn("pwa.q.weight", pwa_query.weight);
    fn("pwa.q.bias", pwa_query.bias);
    fn("pwa.k.weight", pwa_key.weight);
    fn("pwa.k.bias", pwa_key.bias);
    fn("pwa.ln_tokens.gamma", ln_tokens.gamma);
    fn("pwa.ln_tokens.beta", ln_tokens.beta);
    fn("pwa.proj.weight", proj.weight);
    fn("pwa.proj.bias", proj.bias);
    fn("mlp.ln.gamma", ln_mlp.gamma);
    fn("mlp.ln.beta", ln_mlp.beta);
    fn("mlp.fc1.weight", mlp_fc1.weight);
    fn("mlp.fc1.bias", mlp_fc1.bias);
    fn("mlp.fc2.weight", mlp_fc2.weight);
    fn("mlp.fc2.bias", mlp_fc2.bias);
  }
};

namespace detail {

// [B, N, T, C] -> [B, N, h, T, d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads, Tape<T>* tape) {
  const std::size_t b = x.dim(0), n = x.dim(1), t = x.dim(2), c = x.dim(3);
  Tensor<T> r = reshape(x, {b, n, t, heads, c / heads}, tape);
  return permute(r, {0, 1, 3, 2, 4}, tape);
}

// [B, N, h, T, d] -> [B, N, T, C]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, Tape<T>* tape) {
  const std::size_t b = x.dim(0), n = x.dim(1), h = x.dim(2), t = x.dim(3), d = x.dim(4);
  Tensor<T> p = permute(x, {0, 1, 3, 2, 4}, tape);
  return reshape(p, {b, n, t, h * d}, tape);
}

}  // namespace detail

/// Depthwise self-attention: per-window multi-head attention over the S+1
/// tokens of each window (pixels plus the window token). Queries never cross
/// window boundaries, and there is no output projection here — the block's
/// only output projection sits after PWA.
template <typename T>
Tensor<T> dwa(const Tensor<T>& z, const BlockParams<T>& params, Tape<T>* tape = nullptr) {
  if (z.rank() != 4) throw ShapeError("dwa expects [B,N,T,C], got " + shape_str(z.shape()));
  if (params.heads == 0 || z.dim(3) % params.heads != 0) {
    throw ConfigError("dwa: channels " + std::to_string(z.dim(3)) + " not divisible by heads " +
                      std::to_string(params.heads));
  }
  if (z.dim(3) != params.channels) {
    throw ShapeError("dwa: input channels " + std::to_string(z.dim(3)) +
                     " vs block parameters for " + std::to_string(params.channels));
  }
  MacScope scope("dwa");
  const std::size_t d = z.dim(3) / params.heads;

  Tensor<T> q = detail::split_heads(linear(z, params.query, tape), params.heads, tape);
  Tensor<T> k = detail::split_heads(linear(z, params.key, tape), params.heads, tape);
  Tensor<T> v = detail::split_heads(linear(z, params.value, tape), params.heads, tape);

  Tensor<T> kt = permute(k, {0, 1, 2, 4, 3}, tape);
  Tensor<T> scores = scale(matmul(q, kt, tape), T(1) / static_cast<T>(std::sqrt(double(d))), tape);
  Tensor<T> attn = softmax_last(scores, tape);
  Tensor<T> mixed = matmul(attn, v, tape);
  return detail::merge_heads(mixed, tape);
}

/// Pointwise self-attention: window tokens (after LN + GELU) produce the
/// query and key; the value branch is the untouched pixel-token windows,
/// mixed whole-window per head. The single output projection follows.
/// `attn_out`, when given, receives the [B, heads, N, N] attention map.
template <typename T>
Tensor<T> pwa(const Tensor<T>& feat, const Tensor<T>& wt, const BlockParams<T>& params,
              Tape<T>* tape = nullptr, Tensor<T>* attn_out = nullptr) {
  if (feat.rank() != 4 || wt.rank() != 3) {
    throw ShapeError("pwa expects feat [B,N,S,C] and wt [B,N,C], got " + shape_str(feat.shape()) +
                     " and " + shape_str(wt.shape()));
  }
  if (feat.dim(0) != wt.dim(0) || feat.dim(1) != wt.dim(1) || feat.dim(3) != wt.dim(2)) {
    throw ShapeError("pwa: window counts differ, feat " + shape_str(feat.shape()) + " vs wt " +
                     shape_str(wt.shape()));
  }
  MacScope scope("pwa");
  const std::size_t b = feat.dim(0), n = feat.dim(1), s = feat.dim(2), c = feat.dim(3);
  const std::size_t h = params.heads, d = c / h;

  Tensor<T> t = gelu(layer_norm(wt, params.ln_tokens, T(1e-5), tape), tape);
  Tensor<T> q = linear(t, params.pwa_query, tape);  // [B, N, C]
  Tensor<T> k = linear(t, params.pwa_key, tape);

  // [B, N, C] -> [B, h, N, d]
  Tensor<T> qh = permute(reshape(q, {b, n, h, d}, tape), {0, 2, 1, 3}, tape);
  Tensor<T> kh = permute(reshape(k, {b, n, h, d}, tape), {0, 2, 1, 3}, tape);
  Tensor<T> kt = permute(kh, {0, 1, 3, 2}, tape);
  Tensor<T> scores = scale(matmul(qh, kt, tape), T(1) / static_cast<T>(std::sqrt(double(d))), tape);
  Tensor<T> attn = softmax_last(scores, tape);  // [B, h, N, N]
  if (attn_out) *attn_out = attn;

  // Value branch: each window's S pixel tokens, one S·d vector per head.
  Tensor<T> vh = reshape(
      permute(reshape(feat, {b, n, s, h, d}, tape), {0, 3, 1, 2, 4}, tape), {b, h, n, s * d}, tape);
  Tensor<T> mixed = matmul(attn, vh, tape);  // [B, h, N, S·d]
  Tensor<T> back = reshape(
      permute(reshape(mixed, {b, h, n, s, d}, tape), {0, 2, 3, 1, 4}, tape), {b, n, s, c}, tape);
  return linear(back, params.proj, tape);
}

/// Linear(C→4C) → GELU → Linear(4C→C).
template <typename T>
Tensor<T> mlp(const Tensor<T>& x, const BlockParams<T>& params, Tape<T>* tape = nullptr) {
  MacScope scope("mlp");
  return linear(gelu(linear(x, params.mlp_fc1, tape), tape), params.mlp_fc2, tape);
}

namespace detail {

// Per-sample stochastic depth: zero the branch with probability `rate` and
// rescale survivors by 1/(1-rate). Identity when not training or rate == 0.
template <typename T>
Tensor<T> droppath(const Tensor<T>& branch, double rate, bool training, Rng* rng, Tape<T>* tape) {
  if (!training || rate <= 0.0) return branch;
  if (rate >= 1.0) throw ParamError("droppath rate must be < 1");
  if (!rng) throw ContractError("droppath with rate > 0 needs an Rng");
  const std::size_t b = branch.dim(0);
  std::vector<T> mask(b);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < b; ++i) mask[i] = rng->uniform() < rate ? T(0) : keep_scale;
  return scale_rows(branch, std::move(mask), tape);
}

}  // namespace detail

/// One SepViT block:
///   windows     = partition(x)
///   augmented   = concat(windows, window tokens)
///   attended    = DWA(LN(augmented))
///   feat, wt    = slice(attended)
///   mid         = x + droppath(reverse(PWA(feat, wt)))
///   out         = mid + droppath(MLP(LN(mid)))
template <typename T>
Tensor<T> sepvit_block(const Tensor<T>& x, const BlockParams<T>& params,
                       const WindowLayout& layout, double droppath_rate = 0.0,
                       bool training = false, Rng* rng = nullptr, Tape<T>* tape = nullptr) {
  Tensor<T> wins = window_partition(x, layout, tape);
  Tensor<T> aug = concat_window_tokens(wins, params.tokens, tape);
  Tensor<T> normed = layer_norm(aug, params.ln_attn, T(1e-5), tape);
  Tensor<T> attended = dwa(normed, params, tape);
  auto [feat, wt] = slice_tokens(attended, tape);
  Tensor<T> mixed = pwa(feat, wt, params, tape);
  Tensor<T> restored = window_reverse(mixed, layout, tape);
  Tensor<T> mid =
      add(x, detail::droppath(restored, droppath_rate, training, rng, tape), tape);
  Tensor<T> expanded = mlp(layer_norm(mid, params.ln_mlp, T(1e-5), tape), params, tape);
  return add(mid, detail::droppath(expanded, droppath_rate, training, rng, tape), tape);
}

/// Grouped self-attention block: the same computation over windows spliced
/// from group×group neighbors (layout.group > 1). With group == 1 this is
/// exactly sepvit_block.
template <typename T>
Tensor<T> gsa_block(const Tensor<T>& x, const BlockParams<T>& params, const WindowLayout& layout,
                    double droppath_rate = 0.0, bool training = false, Rng* rng = nullptr,
                    Tape<T>* tape = nullptr) {
  return sepvit_block(x, params, layout, droppath_rate, training, rng, tape);
}

}  // namespace sepvit
