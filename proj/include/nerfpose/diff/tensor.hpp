#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nerfpose::diff {

/// Dense row-major tensor of 32- or 64-bit reals. Rank is dynamic; graph ops
/// state their own rank requirements (most operate on rank-2 views).
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;
  using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(count(shape), T(0)) {}
  Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != count(shape))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return numel() == 1; }

  /// Rank-2 view. Rank-1 tensors are viewed as a single row.
  int64_t rows() const {
    if (rank() <= 1) return 1;
    if (rank() == 2) return shape[0];
    throw std::logic_error("Tensor::rows on rank>2 tensor");
  }
  int64_t cols() const {
    if (rank() == 0) return numel();
    if (rank() == 1) return shape[0];
    if (rank() == 2) return shape[1];
    throw std::logic_error("Tensor::cols on rank>2 tensor");
  }

  MatMap mat() { return MatMap(data.data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data.data(), rows(), cols()); }
  ArrMap arr() { return ArrMap(data.data(), numel()); }
  ConstArrMap arr() const { return ConstArrMap(data.data(), numel()); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  /// Flat index into a rank-3 [d0,d1,d2] tensor.
  T& at3(int64_t i, int64_t j, int64_t k) { return data[(i * shape[1] + j) * shape[2] + k]; }
  const T& at3(int64_t i, int64_t j, int64_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace nerfpose::diff
