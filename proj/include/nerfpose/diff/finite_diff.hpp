#pragma once

#include "nerfpose/diff/tensor.hpp"

#include <functional>

namespace nerfpose::diff {

/// Central-difference gradient of a tensor->scalar function. Non-finite
/// function values propagate into the corresponding gradient entries.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f,
                                     const Tensor<T>& point, T step) {
  if (!(step > T(0))) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
  Tensor<T> grad(point.shape);
  Tensor<T> x = point;
  for (int64_t i = 0; i < point.numel(); ++i) {
    const T saved = x[i];
    x[i] = saved + step;
    const T hi = f(x);
    x[i] = saved - step;
    const T lo = f(x);
    x[i] = saved;
    grad[i] = (hi - lo) / (T(2) * step);
  }
  return grad;
}

}  // namespace nerfpose::diff
