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

#include <Eigen/Dense>

#include "skigear/error.hpp"

namespace skigear {

using shape_t = std::vector<std::size_t>;

inline std::string to_string(const shape_t& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t element_count(const shape_t& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

using row_matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using matrix_map = Eigen::Map<row_matrix>;
using const_matrix_map = Eigen::Map<const row_matrix>;

/// Tensor storage. Every buffer starts on a SIMD boundary, so Eigen's vectorized reductions
/// split the work the same way on every run.
using storage_t = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major array of doubles with rank 1 to 3. A scalar is a tensor of shape [1].
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(shape_t shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_rank(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(shape_t shape, storage_t data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank(shape_);
    if (element_count(shape_) != data_.size())
      throw dimension_error("tensor shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                            " values");
  }

  Tensor(shape_t shape, const std::vector<double>& data) : Tensor(std::move(shape), storage_t(data.begin(), data.end())) {}

  static Tensor scalar(double v) { return Tensor({1}, storage_t{v}); }

  static Tensor vector(std::initializer_list<double> values) { return Tensor({values.size()}, storage_t(values)); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    storage_t data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw dimension_error("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const shape_t& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  storage_t& values() noexcept { return data_; }
  const storage_t& values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  const double& operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Value of a single-element tensor.
  double item() const {
    if (data_.size() != 1) throw contract_error("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(shape_t shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(shape_t shape) && { return Tensor(std::move(shape), std::move(data_)); }

  /// View as a matrix of shape [size / last_dim, last_dim].
  matrix_map as_matrix() {
    const std::size_t cols = shape_.back();
    return {data_.data(), static_cast<Eigen::Index>(data_.size() / cols), static_cast<Eigen::Index>(cols)};
  }
  const_matrix_map as_matrix() const {
    const std::size_t cols = shape_.back();
    return {data_.data(), static_cast<Eigen::Index>(data_.size() / cols), static_cast<Eigen::Index>(cols)};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static void check_rank(const shape_t& shape) {
    if (shape.empty() || shape.size() > 3) throw dimension_error("tensor rank must be 1..3, got " + to_string(shape));
  }

  shape_t shape_;
  storage_t data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

}  // namespace skigear
