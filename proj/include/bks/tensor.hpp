#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace bks {

using Shape = std::vector<std::int64_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major fp64 array. A default-constructed Tensor is a scalar 0.
class Tensor {
 public:
  Tensor();

  // Validates extents, element count, and that every element is finite.
  Tensor(Shape shape, std::vector<double> data);

  // Same as above minus the finiteness check; used for computed results so
  // that a NaN produced by arithmetic propagates to the loss.
  static Tensor computed(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const {
    return shape_;
  }
  std::size_t dim() const {
    return shape_.size();
  }
  std::int64_t size(std::size_t axis) const;
  std::size_t numel() const {
    return data_.size();
  }

  std::span<const double> data() const {
    return data_;
  }
  std::span<double> mutable_data() {
    return data_;
  }

  double operator[](std::size_t i) const {
    return data_[i];
  }
  double& operator[](std::size_t i) {
    return data_[i];
  }

  // Row-major 2-d access.
  double at(std::size_t row, std::size_t col) const;

  // Only valid when numel() == 1.
  double item() const;

  bool same_shape(const Tensor& other) const {
    return shape_ == other.shape_;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  struct Unchecked {};
  Tensor(Shape shape, std::vector<double> data, Unchecked);

  Shape shape_;
  std::vector<double> data_;
};

std::ostream& operator<<(std::ostream& os, const Tensor& t);

// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace bks
