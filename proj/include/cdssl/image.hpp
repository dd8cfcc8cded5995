#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace cdssl {

/// H x W x 3 float image, interleaved RGB, nominal range [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), pixels_(height * width * 3, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels_[(y * width_ + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * 3 + c];
  }

  double* data() { return pixels_.data(); }
  const double* data() const { return pixels_.data(); }
  const std::vector<double>& pixels() const { return pixels_; }
  std::vector<double>& pixels() { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

/// Decodes an 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA) to RGB in [0, 1].
Image read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
/// Encoder settings are fixed so identical images produce identical bytes.
void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace cdssl
