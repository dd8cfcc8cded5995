#include <gtest/gtest.h>

#include <algorithm>

#include "cdssl/errors.hpp"
#include "cdssl/explain.hpp"
#include "support.hpp"

using namespace cdssl;
using cdssl::testing::TempDir;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig e;
  e.channels = {4, 4, 8};
  e.feature_dim = 8;
  e.input_size = 32;
  return e;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& v : img.pixels()) v = rng.uniform();
  return img;
}

// Grad-CAM on the last block of a linear-head classifier, derived by hand:
// d logit_c / d A_k(y, x) = W[c, k] / (h w), so each channel weight is that constant.
std::vector<double> linear_head_cam(const ModelBundle& m, const Image& image, int cls) {
  const std::vector<Image> one{image};
  ForwardTape tape;
  forward(m, images_to_batch(one), &tape);
  const Tensor& a = tape.feature_map;
  const Tensor& w = m.parameters().at("head.0.weight");
  const std::size_t c = a.dim(1), h = a.dim(2), wd = a.dim(3);
  Image coarse(h, wd);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wd; ++x) {
      double v = 0.0;
      for (std::size_t k = 0; k < c; ++k) v += w.at(static_cast<std::size_t>(cls), k) / double(h * wd) * a.at(0, k, y, x);
      for (std::size_t ch = 0; ch < 3; ++ch) coarse.at(y, x, ch) = std::max(v, 0.0);
    }
  const Image fine = resize_bilinear(coarse, image.height(), image.width());
  std::vector<double> out;
  for (std::size_t y = 0; y < fine.height(); ++y)
    for (std::size_t x = 0; x < fine.width(); ++x) out.push_back(std::max(fine.at(y, x, 0), 0.0));
  const double hi = *std::max_element(out.begin(), out.end());
  const double lo = *std::min_element(out.begin(), out.end());
  for (double& v : out) v = hi > lo ? (v - lo) / (hi - lo) : (hi > 0 ? 1.0 : 0.0);
  return out;
}

}  // namespace

TEST(GradCam, MatchesHandDerivedLinearHeadMap) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const ModelBundle m = build_classifier_model(tiny_encoder(), {0, 0, 2}, seed);
    const Image image = random_image(32, 32, seed + 10);
    for (int cls : {0, 1}) {
      const Heatmap got = grad_cam(m, image, cls);
      const auto want = linear_head_cam(m, image, cls);
      ASSERT_EQ(got.values.size(), want.size());
      for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got.values[i], want[i], 1e-9) << "seed " << seed;
      EXPECT_EQ(got.layer, "encoder.3");
    }
  }
}

TEST(GradCam, RangeAndResolution) {
  ClassifierHeadConfig head;
  head.hidden_dim = 6;
  const ModelBundle m = build_classifier_model(tiny_encoder(), head, 5);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {45, 27}, {12, 80}}) {
    const Heatmap map = grad_cam(m, random_image(h, w, h * w), 1);
    EXPECT_EQ(map.height, h);
    EXPECT_EQ(map.width, w);
    ASSERT_EQ(map.values.size(), h * w);
    EXPECT_GE(map.min(), 0.0);
    EXPECT_LE(map.max(), 1.0);
  }
}

TEST(GradCam, ZeroLogitModelGivesZeroMap) {
  ModelBundle m = build_classifier_model(tiny_encoder(), {0, 0, 2}, 5);
  m.parameters().at("head.0.weight").fill(0.0);
  m.parameters().at("head.0.bias").fill(0.0);
  const Heatmap map = grad_cam(m, random_image(32, 32, 1), 0);
  EXPECT_EQ(map.max(), 0.0);
}

TEST(GradCam, EarlierLayerAndPreprocess) {
  const ModelBundle m = build_classifier_model(tiny_encoder(), {0, 0, 2}, 5);
  GradCamOptions opt;
  opt.layer = 1;
  const Heatmap map = grad_cam(m, random_image(40, 40, 2), 1, opt);
  EXPECT_EQ(map.layer, "encoder.1");
  EXPECT_EQ(map.values.size(), 1600u);

  AugmentConfig aug;
  aug.output_size = 32;
  const AugmentationPipeline pre = build_finetune_pipeline(aug, Task::multiclass).evaluation_view();
  opt = {};
  opt.preprocess = &pre;
  const Heatmap a = grad_cam(m, random_image(40, 40, 2), 1, opt);
  const Heatmap b = grad_cam(m, random_image(40, 40, 2), 1, opt);
  EXPECT_EQ(a.values, b.values);
}

TEST(GradCam, RejectsBadRequests) {
  const ModelBundle m = build_classifier_model(tiny_encoder(), {0, 0, 2}, 5);
  const Image image = random_image(32, 32, 1);
  EXPECT_THROW(grad_cam(m, image, 2), ValidationError);
  EXPECT_THROW(grad_cam(m, image, -1), ValidationError);
  GradCamOptions opt;
  opt.layer = 4;
  EXPECT_THROW(grad_cam(m, image, 0, opt), ValidationError);
  ProjectionHeadConfig proj;
  proj.layer_dims = {4};
  EXPECT_THROW(grad_cam(build_projection_model(tiny_encoder(), proj, 1), image, 0), ValidationError);
}

TEST(Colormap, EndpointsAndRange) {
  EXPECT_EQ(colormap(0.0), (std::array<double, 3>{0.0, 0.0, 0.5}));
  EXPECT_EQ(colormap(1.0), (std::array<double, 3>{0.5, 0.0, 0.0}));
  EXPECT_EQ(colormap(0.5), (std::array<double, 3>{0.5, 1.0, 0.5}));
  EXPECT_EQ(colormap(-3.0), colormap(0.0));
  for (int i = 0; i <= 100; ++i)
    for (double c : colormap(i / 100.0)) {
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0);
    }
}

TEST(Overlay, BlendsAndValidates) {
  const Image image = random_image(6, 5, 3);
  Heatmap map;
  map.height = 6;
  map.width = 5;
  map.values.assign(30, 1.0);
  EXPECT_EQ(overlay(map, image, 0.0).pixels(), image.pixels());
  const Image full = overlay(map, image, 1.0);
  EXPECT_EQ(full.at(2, 3, 0), 0.5);
  EXPECT_EQ(full.at(2, 3, 2), 0.0);
  const Image half = overlay(map, image, 0.5);
  EXPECT_DOUBLE_EQ(half.at(1, 1, 0), 0.5 * image.at(1, 1, 0) + 0.25);
  EXPECT_THROW(overlay(map, image, 1.5), ValidationError);
  EXPECT_THROW(overlay(map, Image(5, 6), 0.5), ValidationError);

  TempDir dir;
  write_overlay(map, image, 0.4, dir / "cam.png");
  const Image back = read_png(dir / "cam.png");
  EXPECT_EQ(back.height(), 6u);
  EXPECT_EQ(back.width(), 5u);
}

TEST(RegionContrast, HandExample) {
  Heatmap map;
  map.height = map.width = 4;
  map.values.assign(16, 0.25);
  map.values[0] = map.values[1] = map.values[4] = map.values[5] = 1.0;
  const RegionContrast r = region_contrast(map, {{0, 0, 1, 1}});
  EXPECT_DOUBLE_EQ(r.inside, 1.0);
  EXPECT_DOUBLE_EQ(r.outside, 0.25);
  const RegionContrast none = region_contrast(map, {});
  EXPECT_DOUBLE_EQ(none.inside, 0.0);
  EXPECT_DOUBLE_EQ(none.outside, (4.0 + 12 * 0.25) / 16);
}
