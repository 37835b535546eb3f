#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace segpl {

/// Over-aligned allocator: vectorised kernels peel loops by address, so equal
/// inputs only give bit-identical sums when buffers start on the same boundary.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with a dynamic shape.
///
/// Image batches use [batch, channels, spatial...] with one (H, W) or three
/// (D, H, W) spatial axes. Single samples drop the batch axis.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double value);

  /// Same values under a new shape with equal element count.
  Tensor reshaped(std::vector<int> shape) const;

  /// Rows [begin, end) along axis 0.
  Tensor slice_batch(int begin, int end) const;
  /// Element count of one entry along axis 0.
  std::size_t batch_stride() const;

  /// Concatenate along axis 0; trailing dims must agree.
  static Tensor concat_batch(const Tensor& a, const Tensor& b);
  /// Stack equally shaped tensors along a new leading axis.
  static Tensor stack(const std::vector<Tensor>& items);

  bool all_finite() const;
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double scale);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<int> shape_;
  AlignedBuffer data_;
};

std::string shape_string(const std::vector<int>& shape);

/// Element count implied by a shape; throws ShapeError on non-positive dims.
std::size_t element_count(const std::vector<int>& shape);

}  // namespace segpl
