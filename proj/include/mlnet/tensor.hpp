// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mlnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_str(const Shape& shape);

/// Dense row-major array. Plain value type; gradients live in the graph.
template <class Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s, Real fill = Real(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<Real> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }
  Real& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  Real at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  std::span<Real> row(std::size_t r) { return {data.data() + r * shape[1], shape[1]}; }
  std::span<const Real> row(std::size_t r) const { return {data.data() + r * shape[1], shape[1]}; }
};

template <class Real>
bool all_finite(std::span<const Real> values);

}  // namespace mlnet
