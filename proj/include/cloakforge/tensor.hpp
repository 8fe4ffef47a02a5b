#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"

namespace cloakforge::det {

// Dense double tensor. Spatial tensors use HWC layout throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(static_cast<size_t>(std::accumulate(shape_.begin(), shape_.end(), int64_t{1},
                                                  std::multiplies<int64_t>())),
              fill) {}

  const std::vector<int>& shape() const { return shape_; }
  int dim(size_t i) const { return shape_.at(i); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // 3-d accessors for [h, w, c] tensors
  double& at(int y, int x, int c) {
    return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }
  double at(int y, int x, int c) const {
    return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }
  // 2-d accessors for [n, k] tensors
  double& at(int i, int k) { return data_[static_cast<size_t>(i) * shape_[1] + k]; }
  double at(int i, int k) const { return data_[static_cast<size_t>(i) * shape_[1] + k]; }

  void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape().size(); ++i)
    s += (i ? "," : "") + std::to_string(t.shape()[i]);
  return s + "]";
}

}  // namespace cloakforge::det
