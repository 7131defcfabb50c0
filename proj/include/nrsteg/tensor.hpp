#pragma once

#include <array>
#include <string>

#include <Eigen/Dense>

#include "nrsteg/error.hpp"

namespace nrsteg {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  Eigen::Index plane() const { return Eigen::Index(height) * width; }
  Eigen::Index item() const { return plane() * channels; }
  Eigen::Index size() const { return item() * batch; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(batch) + "x" + std::to_string(channels) + "x" + std::to_string(height) +
           "x" + std::to_string(width);
  }
};

/// Dense batch of frames or feature maps in NCHW order.
///
/// A single frame (`FrameTensor`) is a tensor with batch() == 1. Element storage
/// is one contiguous Eigen vector so whole-tensor arithmetic stays expression based.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using ItemMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstItemMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape) {
    if (shape.batch < 1 || shape.channels < 1 || shape.height < 1 || shape.width < 1)
      throw ValidationError("tensor dims must all be >= 1, got " + shape.str());
    values_ = Vector<Scalar>::Constant(shape.size(), fill);
  }

  Tensor(int batch, int channels, int height, int width, Scalar fill = Scalar(0))
      : Tensor(Shape{batch, channels, height, width}, fill) {}

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.batch; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  Eigen::Index size() const { return values_.size(); }

  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar* item_data(int n) { return values_.data() + n * shape_.item(); }
  const Scalar* item_data(int n) const { return values_.data() + n * shape_.item(); }

  // Item n viewed as a (channels x height*width) row-major matrix.
  ItemMap item(int n) { return ItemMap(item_data(n), shape_.channels, shape_.plane()); }
  ConstItemMap item(int n) const {
    return ConstItemMap(item_data(n), shape_.channels, shape_.plane());
  }

  Scalar& operator()(int n, int c, int y, int x) {
    return values_[((Eigen::Index(n) * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }
  Scalar operator()(int n, int c, int y, int x) const {
    return values_[((Eigen::Index(n) * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }

  bool all_finite() const { return values_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape_ = shape_;
    out.values_ = values_.template cast<Other>();
    return out;
  }

 private:
  template <typename>
  friend class Tensor;

  Shape shape_{};
  Vector<Scalar> values_;
};

}  // namespace nrsteg
