#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "multibreath/errors.hpp"

namespace mb {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major n-d array; the raw value store under autodiff tensors.
template <class T>
struct Array {
  Shape shape;
  std::vector<T> v;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
  Array(Shape s, T fill) : shape(std::move(s)), v(shape_numel(shape), fill) {}
  Array(Shape s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
    if (static_cast<long>(v.size()) != shape_numel(shape))
      throw UsageError("array init: " + std::to_string(v.size()) +
                       " values for shape " + shape_str(shape));
  }

  long numel() const { return static_cast<long>(v.size()); }
  long rank() const { return static_cast<long>(shape.size()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  static Array full(Shape s, T fill) { return Array(std::move(s), fill); }

  template <class U>
  Array<U> cast() const {
    Array<U> out(shape);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

// Decompose an index space around `axis` into (outer, axis_len, inner)
// so that flat = (o * axis_len + a) * inner + i.
inline void axis_split(const Shape& shape, long axis, long& outer, long& len,
                       long& inner) {
  if (axis < 0 || axis >= static_cast<long>(shape.size()))
    throw UsageError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  outer = 1;
  for (long i = 0; i < axis; ++i) outer *= shape[i];
  len = shape[axis];
  inner = 1;
  for (long i = axis + 1; i < static_cast<long>(shape.size()); ++i)
    inner *= shape[i];
}

}  // namespace mb
