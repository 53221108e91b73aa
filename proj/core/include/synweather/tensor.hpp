// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace synweather {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major n-d array. Plain value type: copy copies the payload.
template <typename T>
struct NdArray {
  Shape shape;
  std::vector<T> data;

  NdArray() = default;
  explicit NdArray(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  NdArray(Shape s, T fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  NdArray(Shape s, std::vector<T> payload) : shape(std::move(s)), data(std::move(payload)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("NdArray: payload size does not match shape " + shape_str(shape));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 2-D / 3-D / 4-D accessors for the common layouts (row-major).
  T& at(std::int64_t i, std::int64_t j) { return data[i * shape[1] + j]; }
  const T& at(std::int64_t i, std::int64_t j) const { return data[i * shape[1] + j]; }
  T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  static NdArray zeros(Shape s) { return NdArray(std::move(s)); }
  static NdArray full(Shape s, T v) { return NdArray(std::move(s), v); }

  template <typename U>
  NdArray<U> cast() const {
    NdArray<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  NdArray reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("reshape: element count mismatch " + shape_str(shape) +
                                  " -> " + shape_str(s));
    NdArray out = *this;
    out.shape = std::move(s);
    return out;
  }
};

using Grid2f = NdArray<float>;
using Grid3f = NdArray<float>;

}  // namespace synweather
