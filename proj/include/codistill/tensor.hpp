// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace codistill {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles. Every element is finite; construction
// with NaN or Inf throws NumericError.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor filled(Shape shape, double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  // Scalar value of a single-element tensor.
  double item() const;

  // Element access for rank-2 tensors.
  double at(std::size_t row, std::size_t col) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws NumericError naming `context` if any value is NaN or Inf.
void require_finite(std::span<const double> values, const std::string& context);

}  // namespace codistill
