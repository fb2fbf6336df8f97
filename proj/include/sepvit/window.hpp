#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "sepvit/common.hpp"
#include "sepvit/ops.hpp"

namespace sepvit {

/// Geometry of a windowed feature map: H×W pixels cut into N windows of side
/// g·M. group == 1 is plain windowing (DSSA); group == 2 splices 2×2
/// neighboring windows into one larger window (GSA).
struct WindowLayout {
  std::size_t height = 0;  // H
  std::size_t width = 0;   // W
  std::size_t window = 0;  // M
  std::size_t group = 1;   // g

  WindowLayout() = default;
  WindowLayout(std::size_t h, std::size_t w, std::size_t m, std::size_t g = 1)
      : height(h), width(w), window(m), group(g) {
    if (m == 0 || g == 0) throw LayoutError("window layout: M and g must be positive");
    const std::size_t s = side();
    if (h % s != 0 || w % s != 0) {
      throw LayoutError("feature map " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible into windows of side g*M = " + std::to_string(s));
    }
  }

  std::size_t side() const { return group * window; }
  std::size_t windows_y() const { return height / side(); }
  std::size_t windows_x() const { return width / side(); }
  std::size_t num_windows() const { return windows_y() * windows_x(); }       // N
  std::size_t tokens_per_window() const { return side() * side(); }           // S

  WindowLayout with_group(std::size_t g) const {
    return WindowLayout(height, width, window, g);
  }
};

/// [B, H, W, C] -> [B, N, S, C]. Windows scan the window grid row-major;
/// pixels scan each window row-major. Pure re-arrangement, bijective.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowLayout& layout,
                           Tape<T>* tape = nullptr) {
  if (x.rank() != 4 || x.dim(1) != layout.height || x.dim(2) != layout.width) {
    throw LayoutError("window_partition: input " + shape_str(x.shape()) + " vs layout " +
                      std::to_string(layout.height) + "x" + std::to_string(layout.width) +
                      " (side " + std::to_string(layout.side()) + ")");
  }
  const std::size_t b = x.dim(0), c = x.dim(3);
  const std::size_t side = layout.side(), wx = layout.windows_x();
  const std::size_t n = layout.num_windows(), s = layout.tokens_per_window();
  const std::size_t w = layout.width;

  Tensor<T> out({b, n, s, c});
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t wy0 = (r / wx) * side;
      const std::size_t wx0 = (r % wx) * side;
      for (std::size_t t = 0; t < s; ++t) {
        const std::size_t iy = wy0 + t / side;
        const std::size_t ix = wx0 + t % side;
        const T* src = xp + ((bi * layout.height + iy) * w + ix) * c;
        T* dst = op + ((bi * n + r) * s + t) * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] = src[j];
      }
    }
  }

  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out, layout, b, c, side, wx, n, s, w]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dx = x.grad().data();
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t wy0 = (r / wx) * side;
          const std::size_t wx0 = (r % wx) * side;
          for (std::size_t t = 0; t < s; ++t) {
            const std::size_t iy = wy0 + t / side;
            const std::size_t ix = wx0 + t % side;
            T* dst = dx + ((bi * layout.height + iy) * w + ix) * c;
            const T* src = g + ((bi * n + r) * s + t) * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
          }
        }
      }
    });
  }
  return out;
}

/// Exact inverse of window_partition: [B, N, S, C] -> [B, H, W, C].
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& wins, const WindowLayout& layout,
                         Tape<T>* tape = nullptr) {
  const std::size_t n = layout.num_windows(), s = layout.tokens_per_window();
  if (wins.rank() != 4 || wins.dim(1) != n || wins.dim(2) != s) {
    throw LayoutError("window_reverse: input " + shape_str(wins.shape()) + " vs layout N=" +
                      std::to_string(n) + " S=" + std::to_string(s));
  }
  const std::size_t b = wins.dim(0), c = wins.dim(3);
  const std::size_t side = layout.side(), wx = layout.windows_x();
  const std::size_t w = layout.width;

  Tensor<T> out({b, layout.height, w, c});
  const T* ip = wins.data();
  T* op = out.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t wy0 = (r / wx) * side;
      const std::size_t wx0 = (r % wx) * side;
      for (std::size_t t = 0; t < s; ++t) {
        const std::size_t iy = wy0 + t / side;
        const std::size_t ix = wx0 + t % side;
        const T* src = ip + ((bi * n + r) * s + t) * c;
        T* dst = op + ((bi * layout.height + iy) * w + ix) * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] = src[j];
      }
    }
  }

  if (tape && wins.needs_grad()) {
    out.mark_on_graph();
    tape->record([wins, out, layout, b, c, side, wx, n, s, w]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dw = wins.grad().data();
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t r = 0; r < n; ++r) {
          const std::size_t wy0 = (r / wx) * side;
          const std::size_t wx0 = (r % wx) * side;
          for (std::size_t t = 0; t < s; ++t) {
            const std::size_t iy = wy0 + t / side;
            const std::size_t ix = wx0 + t % side;
            T* dst = dw + ((bi * n + r) * s + t) * c;
            const T* src = g + ((bi * layout.height + iy) * w + ix) * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
          }
        }
      }
    });
  }
  return out;
}

/// Appends each window's token as the last token position:
/// wins [B, N, S, C] + tokens [N, C] -> [B, N, S+1, C]. The token tensor is
/// shared across the batch, so its gradient sums over batch entries.
template <typename T>
Tensor<T> concat_window_tokens(const Tensor<T>& wins, const Tensor<T>& tokens,
                               Tape<T>* tape = nullptr) {
  if (wins.rank() != 4 || tokens.rank() != 2 || tokens.dim(0) != wins.dim(1) ||
      tokens.dim(1) != wins.dim(3)) {
    throw ShapeError("concat_window_tokens: windows " + shape_str(wins.shape()) + " vs tokens " +
                     shape_str(tokens.shape()));
  }
  const std::size_t b = wins.dim(0), n = wins.dim(1), s = wins.dim(2), c = wins.dim(3);
  Tensor<T> out({b, n, s + 1, c});
  const T* wp = wins.data();
  const T* tp = tokens.data();
  T* op = out.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t r = 0; r < n; ++r) {
      T* dst = op + ((bi * n + r) * (s + 1)) * c;
      const T* src = wp + ((bi * n + r) * s) * c;
      for (std::size_t i = 0; i < s * c; ++i) dst[i] = src[i];
      const T* trow = tp + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[s * c + j] = trow[j];
    }
  }

  if (tape && (wins.needs_grad() || tokens.needs_grad())) {
    out.mark_on_graph();
    const bool wgrad = wins.needs_grad();
    const bool tgrad = tokens.needs_grad();
    tape->record([wins, tokens, out, b, n, s, c, wgrad, tgrad]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dw = wgrad ? wins.grad().data() : nullptr;
      T* dt = tgrad ? tokens.grad().data() : nullptr;
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t r = 0; r < n; ++r) {
          const T* src = g + ((bi * n + r) * (s + 1)) * c;
          if (dw) {
            T* dst = dw + ((bi * n + r) * s) * c;
            for (std::size_t i = 0; i < s * c; ++i) dst[i] += src[i];
          }
          if (dt) {
            T* trow = dt + r * c;
            for (std::size_t j = 0; j < c; ++j) trow[j] += src[s * c + j];
          }
        }
      }
    });
  }
  return out;
}

/// Splits [B, N, S+1, C] back into pixel tokens [B, N, S, C] and window
/// tokens [B, N, C].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> slice_tokens(const Tensor<T>& z, Tape<T>* tape = nullptr) {
  if (z.rank() != 4 || z.dim(2) < 2) {
    throw ShapeError("slice_tokens: need at least one pixel token plus the window token, got " +
                     shape_str(z.shape()));
  }
  const std::size_t b = z.dim(0), n = z.dim(1), s = z.dim(2) - 1, c = z.dim(3);
  Tensor<T> feat({b, n, s, c});
  Tensor<T> wt({b, n, c});
  const T* zp = z.data();
  T* fp = feat.data();
  T* tp = wt.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t r = 0; r < n; ++r) {
      const T* src = zp + ((bi * n + r) * (s + 1)) * c;
      T* fd = fp + ((bi * n + r) * s) * c;
      for (std::size_t i = 0; i < s * c; ++i) fd[i] = src[i];
      T* td = tp + (bi * n + r) * c;
      for (std::size_t j = 0; j < c; ++j) td[j] = src[s * c + j];
    }
  }

  if (tape && z.needs_grad()) {
    feat.mark_on_graph();
    wt.mark_on_graph();
    tape->record([z, feat, wt, b, n, s, c]() {
      const bool fg = feat.has_grad();
      const bool tg = wt.has_grad();
      if (!fg && !tg) return;
      T* dz = z.grad().data();
      const T* gf = fg ? feat.grad().data() : nullptr;
      const T* gt = tg ? wt.grad().data() : nullptr;
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t r = 0; r < n; ++r) {
          T* dst = dz + ((bi * n + r) * (s + 1)) * c;
          if (gf) {
            const T* src = gf + ((bi * n + r) * s) * c;
            for (std::size_t i = 0; i < s * c; ++i) dst[i] += src[i];
          }
          if (gt) {
            const T* src = gt + (bi * n + r) * c;
            for (std::size_t j = 0; j < c; ++j) dst[s * c + j] += src[j];
          }
        }
      }
    });
  }
  return {feat, wt};
}

}  // namespace sepvit
