#include "bks/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bks/errors.hpp"

namespace bks {

namespace {

void check_extents(const Shape& shape) {
  for (auto extent : shape) {
    BKS_CHECK(
        extent > 0,
        DimensionError,
        "tensor extents must be positive, got ",
        shape_str(shape));
  }
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) {
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) {
      ss << ',';
    }
    ss << shape[i];
  }
  ss << ']';
  return ss.str();
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : Tensor(std::move(shape), std::move(data), Unchecked{}) {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    BKS_CHECK(
        std::isfinite(data_[i]),
        UsageError,
        "non-finite tensor literal at element ",
        i);
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data, Unchecked)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  BKS_CHECK(
      data_.size() == shape_numel(shape_),
      DimensionError,
      "shape ",
      shape_str(shape_),
      " needs ",
      shape_numel(shape_),
      " elements, got ",
      data_.size());
}

Tensor Tensor::computed(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data), Unchecked{});
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
  check_extents(shape);
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) {
  return Tensor(Shape{}, {value});
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(
      Shape{static_cast<std::int64_t>(values.size())},
      std::vector<double>(values));
}

Tensor Tensor::matrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  BKS_CHECK(rows.size() > 0, DimensionError, "matrix literal has no rows");
  const auto cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    BKS_CHECK(
        row.size() == cols,
        DimensionError,
        "ragged matrix literal: expected ",
        cols,
        " columns, got ",
        row.size());
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(
      Shape{
          static_cast<std::int64_t>(rows.size()),
          static_cast<std::int64_t>(cols)},
      std::move(data));
}

std::int64_t Tensor::size(std::size_t axis) const {
  BKS_CHECK(
      axis < shape_.size(),
      DimensionError,
      "axis ",
      axis,
      " out of range for shape ",
      shape_str(shape_));
  return shape_[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  BKS_CHECK(dim() == 2, DimensionError, "at() needs a matrix");
  return data_[row * static_cast<std::size_t>(shape_[1]) + col];
}

double Tensor::item() const {
  BKS_CHECK(
      numel() == 1,
      DimensionError,
      "item() on tensor of shape ",
      shape_str(shape_));
  return data_[0];
}

std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << "Tensor" << shape_str(t.shape()) << '{';
  const auto n = std::min<std::size_t>(t.numel(), 16);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) {
      os << ", ";
    }
    os << t[i];
  }
  if (t.numel() > n) {
    os << ", ...";
  }
  return os << '}';
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  BKS_CHECK(
      a.same_shape(b),
      DimensionError,
      "max_abs_diff shape mismatch ",
      shape_str(a.shape()),
      " vs ",
      shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

} // namespace bks
