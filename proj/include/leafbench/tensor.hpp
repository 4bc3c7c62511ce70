#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "leafbench/errors.hpp"

namespace leafbench {

/// Batch of feature maps in NHWC order. A single FeatureMap is a Tensor with
/// n == 1; a flat batch of vectors has h == w == 1.
struct Shape {
  std::size_t n = 1, h = 1, w = 1, c = 1;

  std::size_t size() const { return n * h * w * c; }
  std::size_t per_sample() const { return h * w * c; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) +
           "x" + std::to_string(c) + "]";
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n == 0 || shape.h == 0 || shape.w == 0 || shape.c == 0) {
      throw Error(ErrorKind::ShapeMismatch, "tensor dimensions must be >= 1, got " + shape.str());
    }
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw Error(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                                " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() & { return data_; }
  std::span<const T> span() const& { return data_; }
  std::span<const T> span() && = delete;
  std::vector<T>& values() & { return data_; }
  const std::vector<T>& values() const& { return data_; }
  std::vector<T> values() && { return std::move(data_); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) const {
    return ((n * shape_.h + y) * shape_.w + x) * shape_.c + ch;
  }
  T& at(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) { return data_[index(n, y, x, ch)]; }
  const T& at(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) const {
    return data_[index(n, y, x, ch)];
  }

  std::span<T> sample(std::size_t n) { return std::span<T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample()); }
  std::span<const T> sample(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
  }

  /// Same storage viewed under another shape of identical element count.
  Tensor reshaped(Shape shape) const& { return Tensor(shape, data_); }
  Tensor reshaped(Shape shape) && { return Tensor(shape, std::move(data_)); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

}  // namespace leafbench
