#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "agnn/tensor.hpp"

namespace agnn {

/// 8-bit RGB frame, row-major, interleaved.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* pixel(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int y, int x) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const Image&) const = default;
};

/// Binary mask; each cell is 0 or 1.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (std::uint8_t v : data) n += v;
    return n;
  }
  bool operator==(const Mask&) const = default;
};

/// Frame as an [H, W, 3] tensor with values in [0, 1].
template <typename S>
Tensor<S> to_tensor(const Image& image) {
  Tensor<S> t(Shape{image.height, image.width, 3});
  for (std::size_t i = 0; i < image.rgb.size(); ++i) t[i] = static_cast<S>(image.rgb[i]) / S(255);
  return t;
}

/// Mask as an [H, W] tensor of zeros and ones.
template <typename S>
Tensor<S> to_tensor(const Mask& mask) {
  Tensor<S> t(Shape{mask.height, mask.width});
  for (std::size_t i = 0; i < mask.data.size(); ++i) t[i] = static_cast<S>(mask.data[i]);
  return t;
}

/// Thresholds a probability map at `threshold` (values >= threshold become 1).
template <typename S>
Mask binarize(const Tensor<S>& probabilities, double threshold = 0.5) {
  if (probabilities.rank() != 2) throw ShapeError("binarize: expected [H,W], got " + probabilities.shape().str());
  Mask m(probabilities.dim(0), probabilities.dim(1));
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = probabilities[i] >= threshold ? 1 : 0;
  return m;
}

/// Bilinear resize of a [h, w] map to [height, width] with half-pixel centres
/// and edge clamping.
template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& map, int height, int width);

// Portable pixmap I/O. Frames are binary P6 with maxval 255; masks are binary
// P5 with maxval 255, foreground 255 and background 0.

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at byte " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

std::string encode_ppm(const Image& image);
std::string encode_pgm(const Mask& mask);
Image decode_ppm(std::string_view bytes);
/// Reads a P5 mask; any value >= 128 counts as foreground.
Mask decode_pgm(std::string_view bytes);

void write_ppm(const std::filesystem::path& path, const Image& image);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Image read_ppm(const std::filesystem::path& path);
Mask read_pgm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace agnn
