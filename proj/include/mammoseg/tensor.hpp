#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "mammoseg/error.hpp"

namespace mammoseg {

/// Dense row-major tensor of rank 1-4. Networks use the (batch, channel,
/// height, width) layout throughout.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 4)
      throw ContractError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
    numel_ = 1;
    for (std::int64_t e : shape_) {
      if (e <= 0) throw ContractError("tensor extents must be positive");
      numel_ *= e;
    }
    data_.assign(static_cast<std::size_t>(numel_), T(0));
  }

  static Tensor scalar(T v) {
    Tensor t(std::vector<std::int64_t>{1});
    t.data_[0] = v;
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size(int d) const { return shape_[static_cast<std::size_t>(d)]; }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t numel() const { return numel_; }
  bool defined() const { return numel_ > 0; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * size(1) + c) * size(2) + h) * size(3) + w)];
  }
  const T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * size(1) + c) * size(2) + h) * size(3) + w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
  std::int64_t numel_ = 0;
};

}  // namespace mammoseg
