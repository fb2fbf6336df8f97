#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sepvit/common.hpp"
#include "sepvit/mac_counter.hpp"
#include "sepvit/tape.hpp"
#include "sepvit/tensor.hpp"

namespace sepvit {

namespace detail {

// C[m,n] += A[m,k] · B[k,n]
template <typename T>
inline void mm_acc_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] · Bᵀ
template <typename T>
inline void mm_acc_nt(const T* dc, const T* b, T* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* drow = dc + i * n;
    T* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB[k,n] += Aᵀ · dC
template <typename T>
inline void mm_acc_tn(const T* a, const T* dc, T* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
    }
  }
}

inline Shape leading_dims(const Shape& s, std::size_t drop) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

}  // namespace detail

/// Batched matrix product. `a` is [..., m, k]; `b` is either [k, n] (shared
/// across the batch, the weight-matrix case) or [..., k, n] with leading
/// extents equal to a's. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC (summed over the
/// batch when b is shared).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  Shape lead = detail::leading_dims(a.shape(), 2);
  if (!shared_b && detail::leading_dims(b.shape(), 2) != lead) {
    throw ShapeError("matmul batch extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = numel(lead);

  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(std::move(out_shape));

  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = out.data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    detail::mm_acc_nn(ap + bi * m * k, shared_b ? bp : bp + bi * k * n, cp + bi * m * n, m, k, n);
  }
  count_macs(static_cast<std::uint64_t>(batch) * m * k * n);

  if (tape && (a.needs_grad() || b.needs_grad())) {
    out.mark_on_graph();
    const bool agrad = a.needs_grad();
    const bool bgrad = b.needs_grad();
    tape->record([a, b, out, m, k, n, batch, shared_b, agrad, bgrad]() {
      if (!out.has_grad()) return;
      const T* dc = out.grad().data();
      if (agrad) {
        T* da = a.grad().data();
        const T* bv = b.data();
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::mm_acc_nt(dc + bi * m * n, shared_b ? bv : bv + bi * k * n, da + bi * m * k, m, k,
                            n);
        }
      }
      if (bgrad) {
        T* db = b.grad().data();
        const T* av = a.data();
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::mm_acc_tn(av + bi * m * k, dc + bi * m * n, shared_b ? db : db + bi * k * n, m, k,
                            n);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) op[i] = ap[i] + bp[i];

  if (tape && (a.needs_grad() || b.needs_grad())) {
    out.mark_on_graph();
    const bool agrad = a.needs_grad();
    const bool bgrad = b.needs_grad();
    tape->record([a, b, out, agrad, bgrad]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (agrad) {
        T* da = a.grad().data();
        for (std::size_t i = 0; i < out.size(); ++i) da[i] += g[i];
      }
      if (bgrad) {
        T* db = b.grad().data();
        for (std::size_t i = 0; i < out.size(); ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

/// x[..., c] + bias[c]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias, Tape<T>* tape = nullptr) {
  if (bias.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != bias.dim(0)) {
    throw ShapeError("add_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  const std::size_t c = bias.dim(0);
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  const T* bp = bias.data();
  T* op = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) op[r * c + j] = xp[r * c + j] + bp[j];
  }

  if (tape && (x.needs_grad() || bias.needs_grad())) {
    out.mark_on_graph();
    const bool xgrad = x.needs_grad();
    const bool bgrad = bias.needs_grad();
    tape->record([x, bias, out, rows, c, xgrad, bgrad]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (xgrad) {
        T* dx = x.grad().data();
        for (std::size_t i = 0; i < rows * c; ++i) dx[i] += g[i];
      }
      if (bgrad) {
        T* db = bias.grad().data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) db[j] += g[r * c + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s, Tape<T>* tape = nullptr) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) op[i] = xp[i] * s;
  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out, s]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dx = x.grad().data();
      for (std::size_t i = 0; i < out.size(); ++i) dx[i] += s * g[i];
    });
  }
  return out;
}

/// Multiplies each batch row x[b, ...] by the constant mask[b]. Used for
/// droppath; the mask itself never receives gradient.
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, std::vector<T> mask, Tape<T>* tape = nullptr) {
  if (x.rank() < 1 || x.dim(0) != mask.size()) {
    throw ShapeError("scale_rows: mask length " + std::to_string(mask.size()) +
                     " vs batch extent of " + shape_str(x.shape()));
  }
  const std::size_t b = mask.size();
  const std::size_t inner = x.size() / b;
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < inner; ++j) op[i * inner + j] = xp[i * inner + j] * mask[i];
  }
  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out, mask = std::move(mask), b, inner]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dx = x.grad().data();
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < inner; ++j) dx[i * inner + j] += g[i * inner + j] * mask[i];
      }
    });
  }
  return out;
}

/// Max-subtracted softmax over the last dimension. Non-finite inputs are a
/// numeric error; every output slice sums to 1.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
    throw ShapeError("softmax_last needs a non-empty last dimension, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / n;
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * n;
    T mx = row[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(static_cast<double>(row[j]))) {
        throw NumericError("softmax_last: non-finite input");
      }
      mx = std::max(mx, row[j]);
    }
    T sum = 0;
    T* orow = op + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
  }

  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out, rows, n]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      const T* s = out.data();
      T* dx = x.grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g + r * n;
        const T* sr = s + r * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gr[j] * sr[j];
        T* dr = dx + r * n;
        for (std::size_t j = 0; j < n; ++j) dr[j] += sr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

/// Per-last-dim normalization to mean 0 / variance 1, then gamma⊙x̂ + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5), Tape<T>* tape = nullptr) {
  if (eps <= T(0)) throw ParamError("layer_norm eps must be > 0");
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != beta.dim(0) || x.rank() < 1 ||
      x.dim(x.rank() - 1) != gamma.dim(0)) {
    throw ShapeError("layer_norm: x " + shape_str(x.shape()) + ", gamma " +
                     shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  const std::size_t c = gamma.dim(0);
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  const T* gp = gamma.data();
  const T* bp = beta.data();
  T* op = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    T* orow = op + r * c;
    for (std::size_t j = 0; j < c; ++j) orow[j] = gp[j] * ((row[j] - mean) * inv) + bp[j];
  }

  if (tape && (x.needs_grad() || gamma.needs_grad() || beta.needs_grad())) {
    out.mark_on_graph();
    const bool xg = x.needs_grad(), gg = gamma.needs_grad(), bg = beta.needs_grad();
    tape->record([x, gamma, beta, out, rows, c, eps, xg, gg, bg]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      const T* xp2 = x.data();
      const T* gp2 = gamma.data();
      std::vector<T> xhat(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xp2 + r * c;
        const T* gr = g + r * c;
        T mean = 0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) {
          const T d = row[j] - mean;
          var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) xhat[j] = (row[j] - mean) * inv;

        if (gg) {
          T* dg = gamma.grad().data();
          for (std::size_t j = 0; j < c; ++j) dg[j] += gr[j] * xhat[j];
        }
        if (bg) {
          T* db = beta.grad().data();
          for (std::size_t j = 0; j < c; ++j) db[j] += gr[j];
        }
        if (xg) {
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T dxh = gr[j] * gp2[j];
            m1 += dxh;
            m2 += dxh * xhat[j];
          }
          m1 /= static_cast<T>(c);
          m2 /= static_cast<T>(c);
          T* dx = x.grad().data() + r * c;
          for (std::size_t j = 0; j < c; ++j) {
            const T dxh = gr[j] * gp2[j];
            dx[j] += inv * (dxh - m1 - xhat[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

/// Exact GELU: x·Φ(x) with Φ the standard normal CDF (erf form, not the tanh
/// approximation).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  static const T inv_sqrt2 = static_cast<T>(0.7071067811865475244);
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T cdf = T(0.5) * (T(1) + std::erf(xp[i] * inv_sqrt2));
    op[i] = xp[i] * cdf;
  }
  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out]() {
      if (!out.has_grad()) return;
      static const T inv_sqrt_2pi = static_cast<T>(0.3989422804014326779);
      const T* g = out.grad().data();
      const T* xp2 = x.data();
      T* dx = x.grad().data();
      for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xp2[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        dx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

/// 2-D cross-correlation (no kernel flip). x is [b, c_in, h, w], w is
/// [c_out, c_in/groups, kh, kw]. Output extents use floor arithmetic,
/// h' = (h + 2·pad − kh)/stride + 1; a kernel larger than the padded input is
/// a shape error. groups == c_in == c_out gives depthwise convolution.
/// An empty bias tensor means no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad, std::size_t groups, Tape<T>* tape = nullptr) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  }
  const std::size_t b = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const std::size_t cout = w.dim(0), cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (groups == 0 || stride == 0) throw ParamError("conv2d: stride and groups must be positive");
  if (cin % groups != 0 || cout % groups != 0 || cig != cin / groups) {
    throw ShapeError("conv2d: channels " + std::to_string(cin) + "/" + std::to_string(cout) +
                     " not divisible into " + std::to_string(groups) + " groups (w " +
                     shape_str(w.shape()) + ")");
  }
  if (h + 2 * pad < kh || wid + 2 * pad < kw) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " exceeds padded input " + shape_str(x.shape()));
  }
  if (bias.size() != 0 && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs c_out " +
                     std::to_string(cout));
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wid + 2 * pad - kw) / stride + 1;
  const std::size_t cpg_out = cout / groups;

  Tensor<T> out({b, cout, ho, wo});
  const T* xp = x.data();
  const T* wp = w.data();
  const T* bp = bias.size() ? bias.data() : nullptr;
  T* op = out.data();
  const long ph = static_cast<long>(pad);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const std::size_t gi = oc / cpg_out;
      const T* wker = wp + oc * cig * kh * kw;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc = bp ? bp[oc] : T(0);
          for (std::size_t ic = 0; ic < cig; ++ic) {
            const T* xc = xp + ((bi * cin + gi * cig + ic) * h) * wid;
            const T* wc = wker + ic * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - ph;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - ph;
                if (ix < 0 || ix >= static_cast<long>(wid)) continue;
                acc += xc[iy * static_cast<long>(wid) + ix] * wc[ky * kw + kx];
              }
            }
          }
          op[((bi * cout + oc) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
  count_macs(static_cast<std::uint64_t>(b) * cout * ho * wo * cig * kh * kw);

  if (tape && (x.needs_grad() || w.needs_grad() || bias.needs_grad())) {
    out.mark_on_graph();
    const bool xg = x.needs_grad(), wg = w.needs_grad(), biasg = bias.needs_grad();
    tape->record([x, w, bias, out, b, cin, h, wid, cout, cig, kh, kw, ho, wo, cpg_out, stride, pad,
                  xg, wg, biasg]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      const T* xp2 = x.data();
      const T* wp2 = w.data();
      T* dx = xg ? x.grad().data() : nullptr;
      T* dw = wg ? w.grad().data() : nullptr;
      T* db = biasg ? bias.grad().data() : nullptr;
      const long ph = static_cast<long>(pad);
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t oc = 0; oc < cout; ++oc) {
          const std::size_t gi = oc / cpg_out;
          const T* wker = wp2 + oc * cig * kh * kw;
          T* dwker = wg ? dw + oc * cig * kh * kw : nullptr;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const T go = g[((bi * cout + oc) * ho + oy) * wo + ox];
              if (db) db[oc] += go;
              if (!xg && !wg) continue;
              for (std::size_t ic = 0; ic < cig; ++ic) {
                const std::size_t ch = gi * cig + ic;
                const T* xc = xp2 + ((bi * cin + ch) * h) * wid;
                T* dxc = xg ? dx + ((bi * cin + ch) * h) * wid : nullptr;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const long iy = static_cast<long>(oy * stride + ky) - ph;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - ph;
                    if (ix < 0 || ix >= static_cast<long>(wid)) continue;
                    const std::size_t xi = iy * static_cast<long>(wid) + ix;
                    if (dwker) dwker[ic * kh * kw + ky * kw + kx] += go * xc[xi];
                    if (dxc) dxc[xi] += go * wker[ic * kh * kw + ky * kw + kx];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad,
                 std::size_t groups, Tape<T>* tape = nullptr) {
  return conv2d(x, w, Tensor<T>(), stride, pad, groups, tape);
}

namespace detail {

// Odometer walk: visits output elements in order while tracking the matching
// input offset incrementally (no per-element div/mod).
template <typename T, typename Fn>
inline void permute_walk(const Shape& out_shape, const std::vector<std::size_t>& in_stride_for_out,
                         Fn&& fn) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = numel(out_shape);
  std::vector<std::size_t> coord(rank, 0);
  std::size_t ii = 0;
  for (std::size_t oi = 0; oi < total; ++oi) {
    fn(oi, ii);
    for (std::size_t d = rank; d-- > 0;) {
      if (++coord[d] < out_shape[d]) {
        ii += in_stride_for_out[d];
        break;
      }
      coord[d] = 0;
      ii -= in_stride_for_out[d] * (out_shape[d] - 1);
    }
  }
}

}  // namespace detail

/// out.shape[i] == x.shape[perm[i]]; contiguous copy.
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm,
                  Tape<T>* tape = nullptr) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) {
    throw ShapeError("permute: axes count " + std::to_string(perm.size()) + " vs rank " +
                     std::to_string(rank));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw ShapeError("permute: invalid axis list");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * x.dim(d);
  Shape out_shape(rank);
  std::vector<std::size_t> map(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = x.dim(perm[d]);
    map[d] = in_strides[perm[d]];
  }
  Tensor<T> out(out_shape);
  const T* xp = x.data();
  T* op = out.data();
  detail::permute_walk<T>(out_shape, map, [&](std::size_t oi, std::size_t ii) { op[oi] = xp[ii]; });

  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out, out_shape, map]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dx = x.grad().data();
      detail::permute_walk<T>(out_shape, map,
                              [&](std::size_t oi, std::size_t ii) { dx[ii] += g[oi]; });
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape, Tape<T>* tape = nullptr) {
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                     " changes element count");
  }
  Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), x.values());
  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dx = x.grad().data();
      for (std::size_t i = 0; i < out.size(); ++i) dx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  T acc = 0;
  const T* xp = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += xp[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out]() {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      T* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
    });
  }
  return out;
}

/// Global average pool: [B, H, W, C] -> [B, C].
template <typename T>
Tensor<T> mean_hw(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  if (x.rank() != 4) throw ShapeError("mean_hw expects [B,H,W,C], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<T> out({b, c});
  const T* xp = x.data();
  T* op = out.data();
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t j = 0; j < c; ++j) op[bi * c + j] += xp[(bi * hw + p) * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) op[bi * c + j] *= inv;
  }
  if (tape && x.needs_grad()) {
    out.mark_on_graph();
    tape->record([x, out, b, hw, c, inv]() {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      T* dx = x.grad().data();
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t p = 0; p < hw; ++p) {
          for (std::size_t j = 0; j < c; ++j) dx[(bi * hw + p) * c + j] += g[bi * c + j] * inv;
        }
      }
    });
  }
  return out;
}

/// Mean softmax cross-entropy over the batch; logits [B, K], labels in [0, K).
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& labels,
                               Tape<T>* tape = nullptr) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy_logits expects [B,K], got " + shape_str(logits.shape()));
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows");
  }
  const T* lp = logits.data();
  T total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ShapeError("cross_entropy_logits: label " + std::to_string(y) + " out of range");
    }
    const T* row = lp + i * k;
    T mx = row[0];
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    total += mx + std::log(sum) - row[y];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(b));

  if (tape && logits.needs_grad()) {
    out.mark_on_graph();
    tape->record([logits, labels, out, b, k]() {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(b);
      const T* lp2 = logits.data();
      T* dl = logits.grad().data();
      for (std::size_t i = 0; i < b; ++i) {
        const T* row = lp2 + i * k;
        T mx = row[0];
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < k; ++j) {
          const T p = std::exp(row[j] - mx) * inv;
          dl[i * k + j] += g * (p - (static_cast<std::size_t>(labels[i]) == j ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

}  // namespace sepvit
