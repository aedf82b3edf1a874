#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace selar {

// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data size " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  template <typename U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Square spatial grid of `side` x `side` locations with `depth` channels per
// location, stored (row, column, channel). Locations are addressed by flat
// index row * side + column.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t side, std::size_t depth, T fill = T{})
      : side_(side), depth_(depth), data_(side * side * depth, fill) {}
  Grid(std::size_t side, std::size_t depth, std::vector<T> data)
      : side_(side), depth_(depth), data_(std::move(data)) {
    if (data_.size() != side_ * side_ * depth_) {
      throw std::invalid_argument("Grid: data size " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(side_) + "x" +
                                  std::to_string(side_) + "x" + std::to_string(depth_));
    }
  }

  std::size_t side() const { return side_; }
  std::size_t depth() const { return depth_; }
  std::size_t locations() const { return side_ * side_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> at(std::size_t location) { return {data_.data() + location * depth_, depth_}; }
  std::span<const T> at(std::size_t location) const {
    return {data_.data() + location * depth_, depth_};
  }

  T& operator()(std::size_t r, std::size_t c, std::size_t ch) {
    return data_[(r * side_ + c) * depth_ + ch];
  }
  const T& operator()(std::size_t r, std::size_t c, std::size_t ch) const {
    return data_[(r * side_ + c) * depth_ + ch];
  }

  // Value of channel `ch` at flat location `loc`.
  const T& value(std::size_t loc, std::size_t ch) const { return data_[loc * depth_ + ch]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  template <typename U>
  Grid<U> cast() const {
    return Grid<U>(side_, depth_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t side_ = 0;
  std::size_t depth_ = 0;
  std::vector<T> data_;
};

// M x M x D local visual feature of one image.
using LocalFeatureMap = Grid<float>;
// C x L class-attribute matrix, one row per class.
using AttributeMatrix = Matrix<float>;
// L x D projection from visual to attribute space (1x1 convolution, no bias).
using EmbeddingWeights = Matrix<float>;

template <typename Range>
bool all_finite(const Range& values) {
  for (const auto v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace selar
