#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "srkit/errors.hpp"

namespace srkit {

using Index = std::int64_t;

// Dense 4-D feature map in row-major NCHW order, templated on the scalar
// (float for training/inference, double for gradient checks).
//
// The buffer is shared between copies, so passing tensors by value is cheap.
// Every operation treats its inputs as immutable and returns a fresh tensor;
// mutable access is reserved for whoever created the tensor (builders, the
// optimizer updating parameters in place).
template <typename Scalar>
class Tensor {
 public:
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() : dims_{0, 0, 0, 0} {}

  Tensor(Index n, Index c, Index h, Index w) : dims_{n, c, h, w} {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw ShapeError("tensor dimensions must be non-negative, got (" + shape_str() + ")");
    data_ = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(n * c * h * w),
                                                  Scalar(0));
  }

  Index n() const { return dims_[0]; }
  Index c() const { return dims_[1]; }
  Index h() const { return dims_[2]; }
  Index w() const { return dims_[3]; }
  const std::array<Index, 4>& dims() const { return dims_; }
  Index size() const { return dims_[0] * dims_[1] * dims_[2] * dims_[3]; }
  bool empty() const { return !data_; }

  Scalar* data() { return data_->data(); }
  const Scalar* data() const { return data_->data(); }

  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return (*data_)[static_cast<std::size_t>(offset(n, c, h, w))];
  }
  Scalar& at(Index n, Index c, Index h, Index w) {
    return (*data_)[static_cast<std::size_t>(offset(n, c, h, w))];
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  ArrayMap flat() { return ArrayMap(data(), size()); }
  ConstArrayMap flat() const { return ConstArrayMap(data(), size()); }

  // Deep copy with its own buffer.
  Tensor clone() const {
    Tensor out(dims_[0], dims_[1], dims_[2], dims_[3]);
    *out.data_ = *data_;
    return out;
  }

  std::string shape_str() const {
    return std::to_string(dims_[0]) + "," + std::to_string(dims_[1]) + "," +
           std::to_string(dims_[2]) + "," + std::to_string(dims_[3]);
  }

 private:
  std::array<Index, 4> dims_;
  std::shared_ptr<std::vector<Scalar>> data_;
};

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  const Scalar* p = t.data();
  for (Index i = 0, n = t.size(); i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch (" + a.shape_str() + ") vs (" +
                     b.shape_str() + ")");
}

}  // namespace srkit
