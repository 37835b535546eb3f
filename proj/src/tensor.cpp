#include "segpl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "segpl/error.hpp"

namespace segpl {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

std::size_t Tensor::batch_stride() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / static_cast<std::size_t>(shape_[0]);
}

Tensor Tensor::slice_batch(int begin, int end) const {
  if (rank() == 0 || begin < 0 || end > shape_[0] || begin >= end) {
    throw ShapeError("invalid batch slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + shape_string(shape_));
  }
  std::vector<int> shape = shape_;
  shape[0] = end - begin;
  const std::size_t stride = batch_stride();
  std::vector<double> values(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                             data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::concat_batch(const Tensor& a, const Tensor& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.rank() != b.rank() || !std::equal(a.shape_.begin() + 1, a.shape_.end(), b.shape_.begin() + 1)) {
    throw ShapeError("cannot concatenate " + shape_string(a.shape_) + " with " + shape_string(b.shape_));
  }
  std::vector<int> shape = a.shape_;
  shape[0] += b.shape_[0];
  std::vector<double> values;
  values.reserve(a.size() + b.size());
  values.insert(values.end(), a.data_.begin(), a.data_.end());
  values.insert(values.end(), b.data_.begin(), b.data_.end());
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list");
  std::vector<int> shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), items.front().shape_.begin(), items.front().shape_.end());
  std::vector<double> values;
  values.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    if (t.shape_ != items.front().shape_) {
      throw ShapeError("stack: shape " + shape_string(t.shape_) + " differs from " +
                       shape_string(items.front().shape_));
    }
    values.insert(values.end(), t.data_.begin(), t.data_.end());
  }
  return Tensor(std::move(shape), std::move(values));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw ShapeError("add: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

}  // namespace segpl
