#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace lfsr {

/// Error raised when operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NCHW extents of a dense 4-D tensor.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  constexpr Eigen::Index size() const {
    return static_cast<Eigen::Index>(n) * c * h * w;
  }
  constexpr Eigen::Index sample_size() const {
    return static_cast<Eigen::Index>(c) * h * w;
  }
  constexpr Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense NCHW tensor backed by a contiguous Eigen array (row-major in the
/// sense that w varies fastest).
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
  Tensor(Shape shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor constant(Shape s, Scalar v) { return Tensor(s, Array::Constant(s.size(), v)); }
  static Tensor scalar(Scalar v) { return constant({1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  Eigen::Index size() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  Scalar operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  Eigen::Index index(int n, int c, int y, int x) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  /// Scalar value of a one-element tensor.
  Scalar item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_{};
  Array data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace lfsr
