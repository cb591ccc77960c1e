#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/error.hpp"

namespace nvlm {

// Dense row-major f64 tensor. Element (i0,...,ik) lives at offset
// sum(i_j * stride_j) with strides derived from the shape.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(check_shape(shape_)), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (check_shape(shape_) != static_cast<std::int64_t>(data_.size())) {
      fail(ErrorCode::ShapeMismatch, "tensor data length ", data_.size(),
           " does not match shape product ", check_shape(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool is_scalar() const { return numel() == 1; }

  // 2-D helpers; a 1-D tensor counts as a single row.
  int rows() const { return ndim() == 2 ? shape_[0] : 1; }
  int cols() const { return ndim() == 2 ? shape_[1] : (ndim() == 1 ? shape_[0] : 0); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool requires_grad = false;

 private:
  static std::int64_t check_shape(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) fail(ErrorCode::ShapeMismatch, "non-positive dimension ", d, " in tensor shape");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (int i = 0; i < t.ndim(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s + "]";
}

// Rectangular boolean mask; used for attention masks.
struct BoolMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> v;

  BoolMatrix() = default;
  BoolMatrix(int r, int c, bool fill = false)
      : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill ? 1 : 0) {}

  bool at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool b) { v[static_cast<std::size_t>(r) * cols + c] = b ? 1 : 0; }

  static BoolMatrix causal(int n) {
    BoolMatrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
  }
};

}  // namespace nvlm
