#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "foviq/error.hpp"

namespace foviq {

/// Extent of a voxel grid: width (x), height (y), depth (slices, z).
struct Dims {
  std::size_t w = 1;
  std::size_t h = 1;
  std::size_t d = 1;

  constexpr std::size_t size() const { return w * h * d; }
  constexpr std::size_t plane() const { return w * h; }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;

  std::string str() const {
    return std::to_string(w) + "x" + std::to_string(h) + "x" + std::to_string(d);
  }
};

/// Dense 3D array in x-fastest order (index = (z*h + y)*w + x).
/// A 2D image is simply an Array3 with d == 1.
template <class T>
class Array3 {
 public:
  Array3() = default;
  explicit Array3(Dims dims, T fill = T{}) : dims_(dims), data_(dims.size(), fill) {}
  Array3(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_.size())
      throw InvalidArgument("Array3: data size does not match dims " + dims_.str());
  }

  const Dims& dims() const { return dims_; }
  std::size_t width() const { return dims_.w; }
  std::size_t height() const { return dims_.h; }
  std::size_t depth() const { return dims_.d; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z = 0) const {
    return (z * dims_.h + y) * dims_.w + x;
  }
  T& operator()(std::size_t x, std::size_t y, std::size_t z = 0) { return data_[index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z = 0) const {
    return data_[index(x, y, z)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::span<const T> slice_values(std::size_t z) const {
    return std::span<const T>(data_).subspan(z * dims_.plane(), dims_.plane());
  }

  /// Copy of one z-slice as a 2D array.
  Array3 slice(std::size_t z) const {
    if (z >= dims_.d) throw InvalidArgument("Array3::slice: slice index out of range");
    auto v = slice_values(z);
    return Array3({dims_.w, dims_.h, 1}, std::vector<T>(v.begin(), v.end()));
  }

  friend bool operator==(const Array3&, const Array3&) = default;

 private:
  Dims dims_{0, 0, 0};
  std::vector<T> data_;
};

using Volume = Array3<double>;

/// Places `src` into a zero array of `dims` so that src's center voxel
/// (w/2, h/2, d/2) lands on the center voxel of the result.
inline Volume embed_centered(const Volume& src, Dims dims) {
  const auto& s = src.dims();
  if (s.w > dims.w || s.h > dims.h || s.d > dims.d)
    throw InvalidArgument("embed_centered: source " + s.str() + " larger than window " + dims.str());
  Volume out(dims);
  const std::size_t ox = dims.w / 2 - s.w / 2;
  const std::size_t oy = dims.h / 2 - s.h / 2;
  const std::size_t oz = dims.d / 2 - s.d / 2;
  for (std::size_t z = 0; z < s.d; ++z)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) out(ox + x, oy + y, oz + z) = src(x, y, z);
  return out;
}

/// Extracts the sub-block of `dims` whose corner is (x0, y0, z0).
inline Volume crop(const Volume& src, std::size_t x0, std::size_t y0, std::size_t z0, Dims dims) {
  const auto& s = src.dims();
  if (x0 + dims.w > s.w || y0 + dims.h > s.h || z0 + dims.d > s.d)
    throw InvalidArgument("crop: block " + dims.str() + " exceeds source " + s.str());
  Volume out(dims);
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y) {
      const double* row = &src(x0, y0 + y, z0 + z);
      std::copy(row, row + dims.w, &out(0, y, z));
    }
  return out;
}

}  // namespace foviq
