#pragma once

#include "nerfpose/diff/graph.hpp"
#include "nerfpose/diff/rng.hpp"
#include "nerfpose/diff/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace nerfpose::testutil {

inline double rel_err(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <typename T>
double max_rel_err(const diff::Tensor<T>& a, const diff::Tensor<T>& b, double floor = 1e-2) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, rel_err(static_cast<double>(a[i]), static_cast<double>(b[i]), floor));
  return worst;
}

template <typename T>
diff::Tensor<T> random_tensor(std::vector<int64_t> shape, diff::Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  diff::Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace nerfpose::testutil
