#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mocc/errors.hpp"

namespace mocc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    oss << (i ? "," : "") << shape[i];
  oss << ']';
  return oss.str();
}

// Dense row-major n-dimensional array. The element count always equals the
// product of the extents; an empty shape denotes "no tensor" (size 0).
template <typename T> class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_.empty() ? 0 : shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if ((shape_.empty() ? 0 : shape_size(shape_)) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros_like(const Tensor &other) { return Tensor(other.shape_); }

  const Shape &shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T *data() noexcept { return data_.data(); }
  const T *data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T> &storage() noexcept { return data_; }
  const std::vector<T> &storage() const noexcept { return data_; }

  T &operator[](std::size_t i) noexcept { return data_[i]; }
  const T &operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-d accessors for [B,C,H,W] tensors.
  T &at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T &at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  // Same data, new extents with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor &operator+=(const Tensor &other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] += other.data_[i];
    return *this;
  }

  Tensor &operator*=(T scale) {
    for (auto &v : data_)
      v *= scale;
    return *this;
  }

  T sum() const {
    double acc = 0.0;
    for (const auto &v : data_)
      acc += static_cast<double>(v);
    return static_cast<T>(acc);
  }

  double squared_norm() const {
    double acc = 0.0;
    for (const auto &v : data_)
      acc += static_cast<double>(v) * static_cast<double>(v);
    return acc;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U> Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void require_same_shape(const Tensor &other, const char *what) const {
    if (shape_ != other.shape_)
      throw DimensionError(std::string(what) + ": shape " + shape_str(shape_) +
                           " vs " + shape_str(other.shape_));
  }

  friend bool operator==(const Tensor &a, const Tensor &b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  void check_extents() const {
    for (auto extent : shape_)
      if (extent == 0)
        throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Spatial extents of a single encoder feature map (height m, width p, depth d).
struct FeatureMapShape {
  std::size_t m = 0;
  std::size_t p = 0;
  std::size_t d = 0;

  std::size_t flat_size() const noexcept { return m * p * d; }
  friend bool operator==(const FeatureMapShape &, const FeatureMapShape &) = default;
};

inline void require_rank4(const Shape &shape, const char *what) {
  if (shape.size() != 4)
    throw DimensionError(std::string(what) + " expects a [B,C,H,W] tensor, got " +
                         shape_str(shape));
}

// Concatenate two tensors along axis 0 (batch).
template <typename T> Tensor<T> concat_batch(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
    throw DimensionError("concat_batch: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.storage().begin(), a.storage().end());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(std::move(shape), std::move(data));
}

// Rows [begin, end) along axis 0.
template <typename T>
Tensor<T> slice_batch(const Tensor<T> &t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin >= end || end > t.dim(0))
    throw DimensionError("slice_batch: bad range on " + shape_str(t.shape()));
  const std::size_t row = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<T> data(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * row),
                      t.storage().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor<T>(std::move(shape), std::move(data));
}

} // namespace mocc
