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

#include "ripeseg/tensor/errors.hpp"

namespace ripeseg {

/// Dimension list of a dense row-major array. Every extent is positive.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t back() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::size_t numel() const noexcept {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
  }

  /// Product of all extents except the last one.
  std::size_t rows() const noexcept { return rank() == 0 ? 1 : numel() / dims_.back(); }

  Shape with_last(std::size_t extent) const {
    auto d = dims_;
    d.back() = extent;
    return Shape(std::move(d));
  }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  void validate() const {
    for (auto d : dims_)
      if (d == 0) throw ShapeError("zero extent in shape");
  }

  std::vector<std::size_t> dims_;
};

/// Batch/height/width/channel view of a rank-3 (HWC) or rank-4 (NHWC) shape.
struct ImageDims {
  std::size_t n, h, w, c;

  static ImageDims of(const Shape& s) {
    if (s.rank() == 3) return {1, s[0], s[1], s[2]};
    if (s.rank() == 4) return {s[0], s[1], s[2], s[3]};
    throw ShapeError("expected HxWxC or NxHxWxC tensor, got " + s.str());
  }

  /// Shape with the same rank as `like` and the given spatial/channel extents.
  static Shape shape_like(const Shape& like, std::size_t n, std::size_t h, std::size_t w,
                          std::size_t c) {
    if (like.rank() == 3) return Shape{h, w, c};
    return Shape{n, h, w, c};
  }
};

/// Plain dense row-major array. No gradient bookkeeping.
template <class T>
class NDArray {
 public:
  using value_type = T;

  NDArray() = default;
  explicit NDArray(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  NDArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Same data under a different shape of equal element count.
  NDArray reshaped(Shape s) const& { return NDArray(std::move(s), data_); }
  NDArray reshaped(Shape s) && { return NDArray(std::move(s), std::move(data_)); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  NDArray<U> cast() const {
    return NDArray<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const NDArray&, const NDArray&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace ripeseg
