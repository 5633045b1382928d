// Copyright 2026 The hldet Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hldet {

// Thrown when operands do not conform to an operation's shape rules.
class ShapeError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a computation leaves the finite-number domain.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(std::span<const std::int64_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Product of extents with overflow and positivity checks. A rank-0 shape is a
// scalar and has one element.
inline std::int64_t checked_numel(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    if (n > std::numeric_limits<std::int64_t>::max() / e)
      throw ShapeError("element count overflow for shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

// Dense row-major array of real scalars. The value type carried through the
// computation graph; f64 for verification, f32 for training throughput.
template <typename T>
struct Array {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Array() = default;

  explicit Array(std::vector<std::int64_t> s, T fill = T(0))
      : shape(std::move(s)),
        data(static_cast<std::size_t>(checked_numel(shape)), fill) {}

  Array(std::vector<std::int64_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Array scalar_of(T v) { return Array({}, std::vector<T>{v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty(); }

  std::int64_t extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

  // Rank-2 element access, row-major.
  T& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  T at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
Array<T> zeros_like(const Array<T>& a) {
  return Array<T>(a.shape);
}

}  // namespace hldet
