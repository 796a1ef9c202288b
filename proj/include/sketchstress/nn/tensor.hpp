#pragma once

#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "sketchstress/error.hpp"

namespace sketchstress::nn {

/// Dense NCHW tensor. Scalars are 1x1x1x1.
template <class T>
struct Tensor {
  std::array<int, 4> shape{1, 1, 1, 1};
  std::vector<T> data;

  Tensor() : data(1, T(0)) {}
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape{n, c, h, w}, data(static_cast<std::size_t>(n) * c * h * w, fill) {}
  explicit Tensor(const std::array<int, 4>& s, T fill = T(0)) : Tensor(s[0], s[1], s[2], s[3], fill) {}

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape[2]) * shape[3]; }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * shape[1] + ic) * shape[2] + iy) * shape[3] + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  T item() const { return data.front(); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool operator==(const Tensor&) const = default;

  std::string shape_string() const {
    return "(" + std::to_string(shape[0]) + "," + std::to_string(shape[1]) + "," + std::to_string(shape[2]) + "," +
           std::to_string(shape[3]) + ")";
  }
};

template <class T>
void require_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape == b.shape, ErrorCode::kInvalidArgument,
          std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace sketchstress::nn
