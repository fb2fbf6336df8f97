#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sepvit/finite_diff.hpp"
#include "sepvit/tape.hpp"
#include "sepvit/tensor.hpp"

namespace test_helpers {

using sepvit::Tape;
using sepvit::Tensor;

inline Tensor<double> random_tensor(sepvit::Rng& rng, sepvit::Shape shape, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  t.fill_uniform(rng, lo, hi);
  return t;
}

/// Robust per-element comparison of two gradients: relative where the values
/// are meaningful, absolute where both vanish.
inline double max_grad_err(const std::vector<double>& ad, const std::vector<double>& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double mag = std::max(std::fabs(ad[i]), std::fabs(fd[i]));
    const double diff = std::fabs(ad[i] - fd[i]);
    worst = std::max(worst, mag < 1e-9 ? diff : diff / mag);
  }
  return worst;
}

/// Autodiff vs central differences for a scalar-valued function of `x`.
/// `fn(input, tape)` must route every use of x through `input`.
inline double gradcheck(
    const std::function<Tensor<double>(const Tensor<double>&, Tape<double>*)>& fn,
    Tensor<double> x, double h = 1e-5) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tape<double> tape;
  Tensor<double> loss = fn(x, &tape);
  tape.backward(loss);
  const std::vector<double> ad = x.grad();
  Tensor<double> fd = sepvit::finite_diff_grad(
      [&](const Tensor<double>& probe) { return fn(probe, nullptr).item(); }, x, h);
  return max_grad_err(ad, fd.values());
}

/// Taylor-series erf, an oracle independent of std::erf. Accurate to better
/// than 1e-14 for |x| <= 4.
inline double erf_series(double x) {
  const double two_over_sqrt_pi = 1.1283791670955125739;
  double term = x;
  double sum = x;
  for (int n = 1; n < 80; ++n) {
    term *= -x * x / static_cast<double>(n);
    sum += term / static_cast<double>(2 * n + 1);
  }
  return two_over_sqrt_pi * sum;
}

/// Matches the window-token parameter ("...dwa.tokens"), not ln_tokens.
inline bool is_window_token_param(const std::string& name) {
  constexpr const char* kSuffix = ".dwa.tokens";
  constexpr std::size_t kLen = 11;
  return name.size() >= kLen && name.compare(name.size() - kLen, kLen, kSuffix) == 0;
}

inline bool bytes_equal(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace test_helpers
