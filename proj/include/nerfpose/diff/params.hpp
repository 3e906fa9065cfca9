#pragma once

#include "nerfpose/diff/rng.hpp"
#include "nerfpose/diff/tensor.hpp"

#include <cmath>
#include <map>
#include <string>

namespace nerfpose::diff {

/// Named parameter tensors with per-parameter Adam state. Shapes are fixed
/// at creation; optimizer state always mirrors the parameter shape.
template <typename T>
struct ParameterStore {
  struct Entry {
    Tensor<T> value;
    Tensor<T> m;      // first moment
    Tensor<T> v;      // second moment
    int64_t steps = 0;
  };

  std::map<std::string, Entry> entries;  // ordered: deterministic iteration
  int64_t global_step = 0;
  int64_t skipped_updates = 0;  // parameters skipped on non-finite gradients

  Tensor<T>& create(const std::string& name, Tensor<T> init) {
    if (entries.count(name)) throw std::invalid_argument("parameter already exists: " + name);
    Entry e;
    e.m = Tensor<T>::zeros(init.shape);
    e.v = Tensor<T>::zeros(init.shape);
    e.value = std::move(init);
    return entries.emplace(name, std::move(e)).first->second.value;
  }

  bool has(const std::string& name) const { return entries.count(name) != 0; }

  Tensor<T>& value(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second.value;
  }
  const Tensor<T>& value(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second.value;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries) n += e.value.numel();
    return n;
  }
};

struct AdamConfig {
  double rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected adaptive-moment update, applied in place. Parameters whose
/// gradient contains a non-finite entry are skipped and counted.
template <typename T>
void adam_step(ParameterStore<T>& store, const std::map<std::string, Tensor<T>>& grads,
               const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    auto it = store.entries.find(name);
    if (it == store.entries.end()) throw std::out_of_range("adam_step: unknown parameter " + name);
    typename ParameterStore<T>::Entry& e = it->second;
    if (g.shape != e.value.shape)
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
    if (!g.all_finite()) {
      ++store.skipped_updates;
      continue;
    }
    e.steps += 1;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    e.m.arr() = b1 * e.m.arr() + (T(1) - b1) * g.arr();
    e.v.arr() = b2 * e.v.arr() + (T(1) - b2) * g.arr().square();
    const T corr1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(e.steps)));
    const T corr2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(e.steps)));
    const T rate = static_cast<T>(cfg.rate);
    const T eps = static_cast<T>(cfg.epsilon);
    e.value.arr() -= rate * (e.m.arr() / corr1) / ((e.v.arr() / corr2).sqrt() + eps);
  }
  store.global_step += 1;
}

// ---- initializers ----------------------------------------------------------

template <typename T>
Tensor<T> randn(std::vector<int64_t> shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

/// He-style fan-in scaling for layers followed by ReLU.
template <typename T>
Tensor<T> he_init(std::vector<int64_t> shape, Rng& rng, int64_t fan_in) {
  return randn<T>(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace nerfpose::diff
