#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gridshock {

/// Dense row-major rows x cols array. Used for K x T unit/slot fields.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Dense (unit, slot, variable) array, variable index fastest.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t units, std::size_t slots, std::size_t vars, T fill = T{})
      : units_(units), slots_(slots), vars_(vars), data_(units * slots * vars, fill) {}

  [[nodiscard]] std::size_t units() const { return units_; }
  [[nodiscard]] std::size_t slots() const { return slots_; }
  [[nodiscard]] std::size_t vars() const { return vars_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t i, std::size_t t, std::size_t m) {
    return data_[(i * slots_ + t) * vars_ + m];
  }
  const T& operator()(std::size_t i, std::size_t t, std::size_t m) const {
    return data_[(i * slots_ + t) * vars_ + m];
  }

  /// The M-vector at (i, t).
  std::span<T> cell(std::size_t i, std::size_t t) {
    return {data_.data() + (i * slots_ + t) * vars_, vars_};
  }
  std::span<const T> cell(std::size_t i, std::size_t t) const {
    return {data_.data() + (i * slots_ + t) * vars_, vars_};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t units_ = 0;
  std::size_t slots_ = 0;
  std::size_t vars_ = 0;
  std::vector<T> data_;
};

}  // namespace gridshock
