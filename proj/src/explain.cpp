#include "cdssl/explain.hpp"

#include <algorithm>
#include <cmath>

#include "cdssl/errors.hpp"

namespace cdssl {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double Heatmap::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

double Heatmap::min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }

Heatmap grad_cam(const ModelBundle& model, const Image& image, int target_class, const GradCamOptions& options) {
  if (model.head_kind() != HeadKind::classifier) throw ValidationError("grad_cam needs a classifier model");
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= model.num_outputs()) {
    throw ValidationError("target class " + std::to_string(target_class) + " out of range for " +
                          std::to_string(model.num_outputs()) + " classes");
  }
  const Network& net = model.network();
  const std::size_t blocks = net.trunk_blocks();
  const std::size_t layer = options.layer.value_or(blocks - 1);
  if (layer >= blocks) throw ValidationError("encoder has no block " + std::to_string(layer));
  if (!net.trunk().layer(layer).is_convolutional())
    throw ValidationError("encoder block " + std::to_string(layer) + " is not convolutional");

  const std::size_t s = model.encoder_config().input_size;
  Image input = options.preprocess ? options.preprocess->apply(image, 0) : image;
  if (input.height() != s || input.width() != s) input = resize_bilinear(input, s, s);

  const ParameterSet& params = model.parameters();
  const ForwardMode mode{};
  std::vector<LayerCache> caches(blocks);
  Tensor x = images_to_batch(std::span<const Image>(&input, 1));
  Tensor activation;
  for (std::size_t i = 0; i < blocks; ++i) {
    x = net.trunk().layer(i).forward(params, x, caches[i], mode, nullptr);
    if (i == layer) activation = x;
  }
  if (activation.rank() != 4) throw ValidationError("selected block has no spatial feature map");
  LayerCache pool_cache, head_cache;
  const Tensor features = net.pool().forward(params, x, pool_cache, mode, nullptr);
  const Tensor logits = net.head().forward(params, features, head_cache, mode, nullptr);

  Tensor seed_grad(logits.shape());
  seed_grad.at(0, static_cast<std::size_t>(target_class)) = 1.0;
  ParameterSet scratch = params.zeros_like();
  Tensor g = net.head().backward(params, seed_grad, head_cache, mode, scratch);
  g = net.pool().backward(params, g, pool_cache, mode, scratch);
  for (std::size_t i = blocks - 1; i > layer; --i) g = net.trunk().layer(i).backward(params, g, caches[i], mode, scratch);

  const std::size_t c = activation.dim(1), h = activation.dim(2), w = activation.dim(3);
  std::vector<double> weights(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double sum = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) sum += g.at(0, k, y, xx);
    weights[k] = sum / static_cast<double>(h * w);
  }
  Image coarse(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      double v = 0.0;
      for (std::size_t k = 0; k < c; ++k) v += weights[k] * activation.at(0, k, y, xx);
      v = std::max(v, 0.0);
      for (std::size_t ch = 0; ch < 3; ++ch) coarse.at(y, xx, ch) = v;
    }
  }
  const Image fine = resize_bilinear(coarse, image.height(), image.width());

  Heatmap out;
  out.height = image.height();
  out.width = image.width();
  out.target_class = target_class;
  out.layer = "encoder." + std::to_string(layer);
  out.values.resize(out.height * out.width);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t xx = 0; xx < out.width; ++xx) out.values[y * out.width + xx] = std::max(fine.at(y, xx, 0), 0.0);

  const double hi = out.max(), lo = out.min();
  if (!(hi > 0.0)) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
  } else if (hi > lo) {
    for (double& v : out.values) v = clamp01((v - lo) / (hi - lo));
  } else {
    for (double& v : out.values) v = clamp01(v / hi);
  }
  return out;
}

std::array<double, 3> colormap(double v) {
  v = clamp01(v);
  return {clamp01(1.5 - std::abs(4.0 * v - 3.0)), clamp01(1.5 - std::abs(4.0 * v - 2.0)),
          clamp01(1.5 - std::abs(4.0 * v - 1.0))};
}

Image overlay(const Heatmap& heatmap, const Image& image, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("overlay alpha must lie in [0, 1]");
  if (heatmap.height != image.height() || heatmap.width != image.width()) {
    throw ValidationError("heatmap " + std::to_string(heatmap.height) + "x" + std::to_string(heatmap.width) +
                          " does not match image " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()));
  }
  Image out(image.height(), image.width());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      const auto color = colormap(heatmap.at(y, x));
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = (1.0 - alpha) * image.at(y, x, c) + alpha * color[c];
    }
  }
  return out;
}

void write_overlay(const Heatmap& heatmap, const Image& image, double alpha, const std::filesystem::path& path) {
  write_png(overlay(heatmap, image, alpha), path);
}

RegionContrast region_contrast(const Heatmap& heatmap, const std::vector<BlobBox>& boxes) {
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t y = 0; y < heatmap.height; ++y) {
    for (std::size_t x = 0; x < heatmap.width; ++x) {
      const bool inside = std::any_of(boxes.begin(), boxes.end(), [&](const BlobBox& b) {
        return b.contains(static_cast<int>(x), static_cast<int>(y));
      });
      (inside ? in_sum : out_sum) += heatmap.at(y, x);
      ++(inside ? in_n : out_n);
    }
  }
  return {in_n ? in_sum / static_cast<double>(in_n) : 0.0, out_n ? out_sum / static_cast<double>(out_n) : 0.0};
}

}  // namespace cdssl
