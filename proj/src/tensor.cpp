// SPDX-License-Identifier: Apache-2.0
#include "mlnet/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>

#include "mlnet/error.hpp"

namespace mlnet {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <class Real>
Tensor<Real>::Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != numel(shape)) {
    throw ContractError("Tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  }
}

template <class Real>
bool all_finite(std::span<const Real> values) {
  // exponent all ones <=> inf or nan; branch-free so the loop vectorizes
  using Bits = std::conditional_t<sizeof(Real) == 8, std::uint64_t, std::uint32_t>;
  constexpr Bits exp_mask = static_cast<Bits>(sizeof(Real) == 8 ? 0x7ff0000000000000ull : 0x7f800000ull);
  Bits bad = 0;
  for (Real v : values) {
    const Bits b = std::bit_cast<Bits>(v);
    bad |= static_cast<Bits>((b & exp_mask) == exp_mask);
  }
  return bad == 0;
}

template struct Tensor<float>;
template struct Tensor<double>;
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace mlnet
