#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sketchstress/error.hpp"

namespace sketchstress {

/// Interleaved row-major image (row, column, channel).
template <class T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int col, int row, int ch = 0) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  T& at(int col, int row, int ch = 0) { return data[index(col, row, ch)]; }
  const T& at(int col, int row, int ch = 0) const { return data[index(col, row, ch)]; }
  bool contains(int col, int row) const { return col >= 0 && row >= 0 && col < width && row < height; }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }

  bool operator==(const Image& o) const = default;
};

using ImageF = Image<float>;

inline void require_same_shape(const ImageF& a, const ImageF& b, const char* what) {
  require(a.same_shape(b), ErrorCode::kInvalidArgument, std::string(what) + ": image shape mismatch");
}

/// Mirror columns.
template <class T>
Image<T> flip_horizontal(const Image<T>& img) {
  Image<T> out(img.width, img.height, img.channels);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int k = 0; k < img.channels; ++k) out.at(img.width - 1 - c, r, k) = img.at(c, r, k);
    }
  }
  return out;
}

/// Box-filter downsampling by an integer factor.
inline ImageF area_downsample(const ImageF& img, int factor) {
  require(factor >= 1 && img.width % factor == 0 && img.height % factor == 0, ErrorCode::kInvalidArgument,
          "downsampling factor must divide the image size");
  if (factor == 1) return img;
  ImageF out(img.width / factor, img.height / factor, img.channels);
  const double inv = 1.0 / (factor * factor);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      for (int k = 0; k < img.channels; ++k) {
        double sum = 0.0;
        for (int dr = 0; dr < factor; ++dr) {
          for (int dc = 0; dc < factor; ++dc) sum += img.at(c * factor + dc, r * factor + dr, k);
        }
        out.at(c, r, k) = static_cast<float>(sum * inv);
      }
    }
  }
  return out;
}

inline ImageF binarize(const ImageF& img, float threshold, bool strictly_greater = false) {
  ImageF out = img;
  for (auto& v : out.data) v = (strictly_greater ? v > threshold : v >= threshold) ? 1.0f : 0.0f;
  return out;
}

inline double image_sum(const ImageF& img) {
  double s = 0.0;
  for (float v : img.data) s += v;
  return s;
}

}  // namespace sketchstress
