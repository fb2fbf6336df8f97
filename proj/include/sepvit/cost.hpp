#pragma once

#include <cstdint>
#include <string>

#include "sepvit/common.hpp"

namespace sepvit {

// MAC conventions: 1 MAC = one multiply-accumulate; a p×q · q×r matrix
// product costs p·q·r MACs and a convolution the analogous product.
// Softmax, layer norm, GELU, scaling and bias adds count zero.

namespace detail {

inline void check_positive_geometry(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
  if (h == 0 || w == 0 || c == 0) throw ParamError("cost formulas need positive H, W, C");
}

inline std::uint64_t window_count(std::uint64_t h, std::uint64_t w, std::uint64_t m) {
  if (m == 0 || h % m != 0 || w % m != 0) {
    throw LayoutError("window side " + std::to_string(m) + " does not divide feature map " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  return (h / m) * (w / m);
}

}  // namespace detail

/// Global multi-head self-attention of a full-attention transformer block:
/// 4HWC² + 2H²W²C.
inline std::uint64_t msa_global_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c) {
  detail::check_positive_geometry(h, w, c);
  const std::uint64_t hw = h * w;
  return 4 * hw * c * c + 2 * hw * hw * c;
}

/// Window-based multi-head self-attention with window side M:
/// 4HWC² + 2M²HWC.
inline std::uint64_t window_msa_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                     std::uint64_t m) {
  detail::check_positive_geometry(h, w, c);
  detail::window_count(h, w, m);
  const std::uint64_t hw = h * w;
  return 4 * hw * c * c + 2 * m * m * hw * c;
}

/// Depthwise self-attention: 3HWC² + 3NC² + 2N(M²+1)²C, with N = HW/M².
/// The second term is the window tokens passing through the q/k/v layers,
/// the third the per-window attention over M²+1 tokens.
inline std::uint64_t dwa_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m) {
  detail::check_positive_geometry(h, w, c);
  const std::uint64_t n = detail::window_count(h, w, m);
  const std::uint64_t hw = h * w;
  const std::uint64_t tokens = m * m + 1;
  return 3 * hw * c * c + 3 * n * c * c + 2 * n * tokens * tokens * c;
}

/// Pointwise self-attention: HWC² + 2NC² + N²C + NHWC. Projection of the
/// mixed windows, q/k from N window tokens, the N×N attention map, and the
/// map-times-feature product; the value branch costs nothing.
inline std::uint64_t pwa_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m) {
  detail::check_positive_geometry(h, w, c);
  const std::uint64_t n = detail::window_count(h, w, m);
  const std::uint64_t hw = h * w;
  return hw * c * c + 2 * n * c * c + n * n * c + n * hw * c;
}

/// Two linear layers at the given expansion ratio: 2·HW·C·(ratio·C).
inline std::uint64_t mlp_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                              std::uint64_t ratio = 4) {
  detail::check_positive_geometry(h, w, c);
  return 2 * h * w * c * ratio * c;
}

/// dwa_cost with the window-token terms removed (plain windowed attention
/// over M² tokens through the same projections): 3HWC² + 2NM⁴C.
inline std::uint64_t dwa_cost_without_tokens(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                             std::uint64_t m) {
  detail::check_positive_geometry(h, w, c);
  const std::uint64_t n = detail::window_count(h, w, m);
  return 3 * h * w * c * c + 2 * n * m * m * m * m * c;
}

/// Fraction of dwa_cost attributable to the window-token embedding.
inline double dwa_token_overhead_share(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                       std::uint64_t m) {
  const std::uint64_t full = dwa_cost(h, w, c, m);
  const std::uint64_t bare = dwa_cost_without_tokens(h, w, c, m);
  return static_cast<double>(full - bare) / static_cast<double>(full);
}

/// Full attention + MLP MACs of one SepViT block at the given geometry.
inline std::uint64_t sepvit_block_macs(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                       std::uint64_t m, std::uint64_t mlp_ratio = 4) {
  return dwa_cost(h, w, c, m) + pwa_cost(h, w, c, m) + mlp_cost(h, w, c, mlp_ratio);
}

/// Comparator: two successive window-MSA transformer blocks (each one
/// window attention plus one MLP) at the same geometry.
inline std::uint64_t two_window_msa_blocks_macs(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                                std::uint64_t m, std::uint64_t mlp_ratio = 4) {
  return 2 * (window_msa_cost(h, w, c, m) + mlp_cost(h, w, c, mlp_ratio));
}

}  // namespace sepvit
