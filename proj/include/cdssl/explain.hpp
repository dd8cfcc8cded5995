#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdssl/augment.hpp"
#include "cdssl/image.hpp"
#include "cdssl/model.hpp"
#include "cdssl/synthetic.hpp"

namespace cdssl {

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  int target_class = 0;
  std::string layer;           // encoder block whose activations were used

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double max() const;
  double min() const;
};

struct GradCamOptions {
  /// Encoder block index; defaults to the last block.
  std::optional<std::size_t> layer;
  /// Applied (with seed 0) before the model sees the image; when null the
  /// image is only resized to the encoder input size.
  const AugmentationPipeline* preprocess = nullptr;
};

/// Grad-CAM for `target_class`, returned at the resolution of `image`.
Heatmap grad_cam(const ModelBundle& model, const Image& image, int target_class, const GradCamOptions& options = {});

/// Fixed blue-cyan-yellow-red ramp for v in [0, 1].
std::array<double, 3> colormap(double v);

/// (1 - alpha) * image + alpha * colormap(heatmap), per pixel.
Image overlay(const Heatmap& heatmap, const Image& image, double alpha);
void write_overlay(const Heatmap& heatmap, const Image& image, double alpha, const std::filesystem::path& path);

/// Mean heat inside and outside a set of boxes given in pixel coordinates.
struct RegionContrast {
  double inside = 0.0;
  double outside = 0.0;
};

RegionContrast region_contrast(const Heatmap& heatmap, const std::vector<BlobBox>& boxes);

}  // namespace cdssl
