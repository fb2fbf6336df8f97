#pragma once

#include <functional>

#include "sepvit/common.hpp"
#include "sepvit/tensor.hpp"

namespace sepvit {

/// Central-difference gradient oracle: (f(x+h·e_i) − f(x−h·e_i)) / 2h per
/// element. Double precision only — single precision lacks the headroom.
inline Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                       const Tensor<double>& x, double h) {
  if (h <= 0) throw ParamError("finite_diff_grad: h must be > 0");
  Tensor<double> grad(x.shape());
  Tensor<double> probe = Tensor<double>::from_data(x.shape(), x.values());
  double* p = probe.data();
  double* g = grad.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double fp = f(probe);
    p[i] = saved - h;
    const double fm = f(probe);
    p[i] = saved;
    g[i] = (fp - fm) / (2 * h);
  }
  return grad;
}

/// Central difference of f() with respect to one scalar slot mutated in
/// place. Used to spot-check gradients of whole-model parameters.
inline double finite_diff_slot(const std::function<double()>& f, double* slot, double h) {
  if (h <= 0) throw ParamError("finite_diff_slot: h must be > 0");
  const double saved = *slot;
  *slot = saved + h;
  const double fp = f();
  *slot = saved - h;
  const double fm = f();
  *slot = saved;
  return (fp - fm) / (2 * h);
}

}  // namespace sepvit
