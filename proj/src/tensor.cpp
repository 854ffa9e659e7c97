// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "codistill/error.hpp"

namespace codistill {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void require_finite(std::span<const double> values, const std::string& context) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(context + ": non-finite value at element " +
                         std::to_string(i));
    }
  }
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
  require_finite(data_, "tensor construction");
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= shape_[0] || col >= shape_[1]) {
    throw ShapeError("at(" + std::to_string(row) + ", " + std::to_string(col) +
                     ") on tensor of shape " + to_string(shape_));
  }
  return data_[row * shape_[1] + col];
}

}  // namespace codistill
