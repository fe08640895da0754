#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tthlab/tensor.hpp"

namespace tth {

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;

  std::size_t size() const noexcept { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
  std::string to_string() const;
};

// Axis-aligned pixel window, [y, y+height) x [x, x+width).
struct PixelRect {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool contains(std::size_t py, std::size_t px) const noexcept {
    return py >= y && py < y + height && px >= x && px < x + width;
  }
  bool operator==(const PixelRect&) const = default;
};

// H x W x C pixel array (row-major, channel fastest). Values live in [0, 255]
// as doubles; quantization to bytes happens only at file I/O.
class Image {
 public:
  Image() = default;
  explicit Image(ImageShape shape, double fill = 0.0);
  Image(ImageShape shape, std::vector<double> pixels);

  const ImageShape& shape() const noexcept { return shape_; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t channels() const noexcept { return shape_.channels; }

  std::size_t offset(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return (y * shape_.width + x) * shape_.channels + c;
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return px_[offset(y, x, c)]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return px_[offset(y, x, c)]; }

  std::span<double> pixels() noexcept { return px_; }
  std::span<const double> pixels() const noexcept { return px_; }

  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t);

  // Copy of the pixels inside `rect`.
  Image crop(const PixelRect& rect) const;

  bool operator==(const Image&) const = default;

 private:
  ImageShape shape_;
  std::vector<double> px_;
};

// Rounds every pixel to the nearest integer in [0, 255].
Image quantized(const Image& image);

std::string encode_ppm(const Image& image);
Image decode_ppm(std::string_view bytes);
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace tth
