#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "volmap/error.hpp"

namespace volmap {

/// Dense row-major 2D raster.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t width, std::size_t height, T fill = T{})
      : width_(width), height_(height), data_(width * height, fill) {}
  Image(std::size_t width, std::size_t height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != width_ * height_) {
      throw Error(Errc::kSizeMismatch, "image payload has " + std::to_string(data_.size()) +
                                           " elements, expected " +
                                           std::to_string(width_ * height_));
    }
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t u, std::size_t v) { return data_[v * width_ + u]; }
  const T& operator()(std::size_t u, std::size_t v) const { return data_[v * width_ + u]; }
  T& operator[](std::size_t index) { return data_[index]; }
  const T& operator[](std::size_t index) const { return data_[index]; }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Image<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<T> data_;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

using DepthMap = Image<double>;
using LabelMap = Image<std::uint16_t>;
using ColorMap = Image<Rgb>;

}  // namespace volmap
