#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/error.hpp"

namespace ccnn {

/// Ordered list of positive extents, outermost first.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::size_t numel() const noexcept {
    std::size_t n = dims_.empty() ? 0 : 1;
    for (std::size_t d : dims_) n *= d;
    return n;
  }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const {
    std::size_t n = 1;
    for (std::size_t d : dims_) {
      if (d == 0) fail(ErrorKind::Dimension, "shape " + str() + " has a zero extent");
      if (n > std::numeric_limits<std::size_t>::max() / d)
        fail(ErrorKind::Dimension, "shape " + str() + " overflows the index type");
      n *= d;
    }
  }

  std::vector<std::size_t> dims_;
};

/// Allocator with a fixed 64-byte alignment. Vectorized Eigen reductions
/// peel their first iterations according to the buffer address, so storage
/// whose alignment varied between allocations would round differently.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

/// Dense row-major tensor. Training runs on Tensor<float>; Tensor<double>
/// exists so gradient checks can run the same kernels at higher precision.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
  using Storage = std::vector<Scalar, AlignedAllocator<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(Shape shape, const std::vector<Scalar>& values)
      : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}
  Tensor(Shape shape, Storage values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.numel())
      fail(ErrorKind::Dimension, "tensor of shape " + shape_.str() + " given " +
                                     std::to_string(data_.size()) + " values");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() & noexcept { return data_; }
  std::span<const Scalar> values() const& noexcept { return data_; }
  // A span into a temporary would dangle (e.g. in a range-for).
  std::span<const Scalar> values() && = delete;

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  Scalar& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  Scalar at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Views the flat buffer as a rows x cols row-major matrix.
  MatrixMap matrix(std::size_t rows, std::size_t cols) {
    check_view(rows, cols);
    return MatrixMap(data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  ConstMatrixMap matrix(std::size_t rows, std::size_t cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  /// Rank-2 tensors only.
  MatrixMap matrix() { return matrix(dim(0), dim(1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), dim(1)); }

  VectorMap vector() { return VectorMap(data(), static_cast<Eigen::Index>(size())); }
  ConstVectorMap vector() const { return ConstVectorMap(data(), static_cast<Eigen::Index>(size())); }

  void fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename Other>
  Tensor<Other> cast() const {
    typename Tensor<Other>::Storage out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_view(std::size_t rows, std::size_t cols) const {
    if (rows * cols != size())
      fail(ErrorKind::Dimension, "cannot view " + shape_.str() + " as " + std::to_string(rows) +
                                     "x" + std::to_string(cols));
  }

  Shape shape_;
  Storage data_;
};

inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.rank() != rank)
    fail(ErrorKind::Dimension, std::string(what) + ": expected rank " + std::to_string(rank) +
                                   ", got " + shape.str());
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& what) {
  if (!t.all_finite()) fail(ErrorKind::NumericFault, what + " produced a non-finite value");
}

}  // namespace ccnn
