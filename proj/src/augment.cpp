#include "cdssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cdssl/errors.hpp"
#include "cdssl/rng.hpp"

namespace cdssl {

std::string to_string(StageKind kind) {
  switch (kind) {
    case StageKind::resize: return "resize";
    case StageKind::horizontal_flip: return "horizontal_flip";
    case StageKind::vertical_flip: return "vertical_flip";
    case StageKind::grayscale: return "grayscale";
    case StageKind::gaussian_blur: return "gaussian_blur";
    case StageKind::color_jitter: return "color_jitter";
    case StageKind::random_affine: return "random_affine";
    case StageKind::random_crop: return "random_crop";
    case StageKind::normalize: return "normalize";
  }
  return "unknown";
}

// ---- stage construction ------------------------------------------------

namespace {

TransformStage checked(TransformStage stage) {
  stage.validate();
  return stage;
}

}  // namespace

TransformStage TransformStage::resize(std::size_t height, std::size_t width) {
  return checked({StageKind::resize, 1.0, ResizeParams{height, width}});
}
TransformStage TransformStage::horizontal_flip(double p) { return checked({StageKind::horizontal_flip, p, {}}); }
TransformStage TransformStage::vertical_flip(double p) { return checked({StageKind::vertical_flip, p, {}}); }
TransformStage TransformStage::grayscale(double p) { return checked({StageKind::grayscale, p, {}}); }
TransformStage TransformStage::gaussian_blur(double p, BlurParams params) {
  return checked({StageKind::gaussian_blur, p, params});
}
TransformStage TransformStage::color_jitter(double p, JitterParams params) {
  return checked({StageKind::color_jitter, p, params});
}
TransformStage TransformStage::random_affine(double p, AffineParams params) {
  return checked({StageKind::random_affine, p, params});
}
TransformStage TransformStage::random_crop(double p, CropParams params) {
  return checked({StageKind::random_crop, p, params});
}
TransformStage TransformStage::normalize(NormalizeParams params) {
  return checked({StageKind::normalize, 1.0, params});
}

void TransformStage::validate() const {
  const std::string name = to_string(kind);
  if (!(probability >= 0.0 && probability <= 1.0))
    throw ValidationError(name + ": probability must be in [0, 1]");

  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ValidationError(name + ": " + what);
  };
  switch (kind) {
    case StageKind::resize: {
      const auto* p = std::get_if<ResizeParams>(&params);
      require(p != nullptr, "missing size");
      require(p->height > 0 && p->width > 0, "size must be positive");
      break;
    }
    case StageKind::gaussian_blur: {
      const auto* p = std::get_if<BlurParams>(&params);
      require(p != nullptr, "missing kernel");
      require(p->kernel_h > 0 && p->kernel_w > 0 && p->kernel_h % 2 == 1 && p->kernel_w % 2 == 1,
              "kernel dimensions must be odd and positive");
      require(p->sigma_min > 0.0 && p->sigma_max >= p->sigma_min, "sigma range must be positive");
      break;
    }
    case StageKind::color_jitter: {
      const auto* p = std::get_if<JitterParams>(&params);
      require(p != nullptr, "missing strengths");
      require(p->brightness >= 0 && p->contrast >= 0 && p->saturation >= 0,
              "strengths must be non-negative");
      require(p->hue >= 0 && p->hue <= 0.5, "hue must be in [0, 0.5]");
      break;
    }
    case StageKind::random_affine: {
      const auto* p = std::get_if<AffineParams>(&params);
      require(p != nullptr, "missing parameters");
      require(p->min_degrees <= p->max_degrees, "degree range is empty");
      require(p->translate_x >= 0 && p->translate_x <= 1 && p->translate_y >= 0 && p->translate_y <= 1,
              "translate fractions must be in [0, 1]");
      require(p->min_scale > 0 && p->max_scale >= p->min_scale, "scale range must be positive");
      break;
    }
    case StageKind::random_crop: {
      const auto* p = std::get_if<CropParams>(&params);
      require(p != nullptr, "missing parameters");
      require(p->height > 0 && p->width > 0, "size must be positive");
      require(p->scale_min > 0 && p->scale_max <= 1 && p->scale_min <= p->scale_max,
              "scale range must lie in (0, 1]");
      require(p->ratio_min > 0 && p->ratio_min <= p->ratio_max, "ratio range must be positive");
      break;
    }
    case StageKind::normalize: {
      const auto* p = std::get_if<NormalizeParams>(&params);
      require(p != nullptr, "missing mean/std");
      for (double s : p->stddev) require(s > 0.0, "standard deviation must be positive");
      break;
    }
    default:
      break;
  }
}

// ---- image operations --------------------------------------------------

namespace {

double sample_bilinear(const Image& img, double y, double x, std::size_t c, double fill) {
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double wy = y - fy, wx = x - fx;
  const long h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  auto px = [&](long yy, long xx) {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
    return img.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
         wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}

// Bilinear resample of the source window [top, top+src_h) x [left, left+src_w)
// onto an out_h x out_w grid with half-pixel centers and edge clamping.
Image resample_window(const Image& img, double top, double left, double src_h, double src_w,
                      std::size_t out_h, std::size_t out_w) {
  Image out(out_h, out_w);
  const double sy = src_h / static_cast<double>(out_h), sx = src_w / static_cast<double>(out_w);
  const double max_y = static_cast<double>(img.height() - 1), max_x = static_cast<double>(img.width() - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double yy = std::clamp(top + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double xx = std::clamp(left + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(img, yy, xx, c, 0.0);
    }
  }
  return out;
}

std::size_t reflect_index(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return static_cast<std::size_t>(i);
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const int half = size / 2;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= total;
  return k;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Image blend(const Image& a, const Image& b, double factor) {
  Image out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = clamp01(factor * a.data()[i] + (1.0 - factor) * b.data()[i]);
  return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = h * 6.0;
  const int sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

Image color_jitter(const Image& image, const JitterParams& p, Rng& rng) {
  Image out = image;
  int order[4] = {0, 1, 2, 3};
  rng.shuffle(std::span<int>(order));
  for (int op : order) {
    switch (op) {
      case 0:
        if (p.brightness > 0) {
          const double f = rng.uniform(std::max(0.0, 1 - p.brightness), 1 + p.brightness);
          out = blend(out, Image(out.height(), out.width(), 0.0), f);
        }
        break;
      case 1:
        if (p.contrast > 0) {
          const double f = rng.uniform(std::max(0.0, 1 - p.contrast), 1 + p.contrast);
          const Image gray = to_grayscale(out);
          double mean = 0.0;
          for (std::size_t i = 0; i < gray.size(); i += 3) mean += gray.data()[i];
          mean /= static_cast<double>(gray.size() / 3);
          out = blend(out, Image(out.height(), out.width(), mean), f);
        }
        break;
      case 2:
        if (p.saturation > 0) {
          const double f = rng.uniform(std::max(0.0, 1 - p.saturation), 1 + p.saturation);
          out = blend(out, to_grayscale(out), f);
        }
        break;
      default:
        if (p.hue > 0) {
          const double shift = rng.uniform(-p.hue, p.hue);
          for (std::size_t i = 0; i < out.size(); i += 3) {
            double h, s, v;
            rgb_to_hsv(out.data()[i], out.data()[i + 1], out.data()[i + 2], h, s, v);
            h = std::fmod(h + shift + 1.0, 1.0);
            hsv_to_rgb(h, s, v, out.data()[i], out.data()[i + 1], out.data()[i + 2]);
          }
        }
        break;
    }
  }
  return out;
}

Image random_affine(const Image& image, const AffineParams& p, Rng& rng) {
  const double angle = rng.uniform(p.min_degrees, p.max_degrees) * std::numbers::pi / 180.0;
  const double h = static_cast<double>(image.height()), w = static_cast<double>(image.width());
  const double tx = rng.uniform(-p.translate_x, p.translate_x) * w;
  const double ty = rng.uniform(-p.translate_y, p.translate_y) * h;
  const double scale = rng.uniform(p.min_scale, p.max_scale);
  const double cy = 0.5 * h, cx = 0.5 * w;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);

  Image out(image.height(), image.width());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      // Inverse map: undo translation, rotation and scale about the center.
      const double dx = (static_cast<double>(x) + 0.5 - cx - tx) / scale;
      const double dy = (static_cast<double>(y) + 0.5 - cy - ty) / scale;
      const double sx = cos_a * dx + sin_a * dy + cx - 0.5;
      const double sy = -sin_a * dx + cos_a * dy + cy - 0.5;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(image, sy, sx, c, 0.0);
    }
  }
  return out;
}

Image random_resized_crop(const Image& image, const CropParams& p, Rng& rng) {
  if (p.height > image.height() || p.width > image.width()) {
    throw ValidationError("random_crop: target " + std::to_string(p.height) + "x" +
                          std::to_string(p.width) + " exceeds the " +
                          std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                          " input");
  }
  const double h = static_cast<double>(image.height()), w = static_cast<double>(image.width());
  const double area = h * w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(p.scale_min, p.scale_max);
    const double ratio = std::exp(rng.uniform(std::log(p.ratio_min), std::log(p.ratio_max)));
    const double cw = std::round(std::sqrt(target * ratio));
    const double ch = std::round(std::sqrt(target / ratio));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      const double top = std::floor(rng.uniform() * (h - ch + 1));
      const double left = std::floor(rng.uniform() * (w - cw + 1));
      return resample_window(image, top, left, ch, cw, p.height, p.width);
    }
  }
  return resample_window(image, 0.0, 0.0, h, w, p.height, p.width);
}

}  // namespace

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.empty()) throw ValidationError("cannot resize an empty image");
  if (image.height() == height && image.width() == width) return image;
  return resample_window(image, 0.0, 0.0, static_cast<double>(image.height()),
                         static_cast<double>(image.width()), height, width);
}

Image flip_horizontal(const Image& image) {
  Image out(image.height(), image.width());
  const std::size_t w = image.width();
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, w - 1 - x, c);
  return out;
}

Image flip_vertical(const Image& image) {
  Image out(image.height(), image.width());
  const std::size_t h = image.height();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(h - 1 - y, x, c);
  return out;
}

Image to_grayscale(const Image& image) {
  Image out(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); i += 3) {
    const double l = 0.299 * image.data()[i] + 0.587 * image.data()[i + 1] + 0.114 * image.data()[i + 2];
    out.data()[i] = out.data()[i + 1] = out.data()[i + 2] = l;
  }
  return out;
}

Image gaussian_blur(const Image& image, int kernel_h, int kernel_w, double sigma) {
  const auto kh = gaussian_kernel(kernel_h, sigma);
  const auto kw = gaussian_kernel(kernel_w, sigma);
  const long h = static_cast<long>(image.height()), w = static_cast<long>(image.width());
  Image tmp(image.height(), image.width());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < kernel_w; ++k)
          acc += kw[static_cast<std::size_t>(k)] *
                 image.at(static_cast<std::size_t>(y), reflect_index(x + k - kernel_w / 2, w), c);
        tmp.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
  Image out(image.height(), image.width());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < kernel_h; ++k)
          acc += kh[static_cast<std::size_t>(k)] *
                 tmp.at(reflect_index(y + k - kernel_h / 2, h), static_cast<std::size_t>(x), c);
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
  return out;
}

Image normalize_image(const Image& image, const NormalizeParams& p) {
  Image out = image;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = (out.data()[i] - p.mean[i % 3]) / p.stddev[i % 3];
  return out;
}

Image denormalize_image(const Image& image, const NormalizeParams& p) {
  Image out = image;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = out.data()[i] * p.stddev[i % 3] + p.mean[i % 3];
  return out;
}

// ---- pipeline ----------------------------------------------------------

AugmentationPipeline::AugmentationPipeline(std::vector<TransformStage> stages)
    : stages_(std::move(stages)) {
  if (stages_.empty() || stages_.front().kind != StageKind::resize) {
    throw ValidationError("an augmentation pipeline must start with a resize stage");
  }
  for (const auto& s : stages_) s.validate();
  const auto& r = std::get<ResizeParams>(stages_.front().params);
  output_size_ = {r.height, r.width};
  for (const auto& s : stages_) {
    if (s.kind == StageKind::resize && &s != &stages_.front())
      throw ValidationError("only one resize stage is allowed");
    if (s.kind == StageKind::random_crop) {
      const auto& c = std::get<CropParams>(s.params);
      if (c.height != r.height || c.width != r.width)
        throw ValidationError("random_crop target must equal the resize size");
    }
  }
}

bool AugmentationPipeline::has_stage(StageKind kind) const { return find(kind) != nullptr; }

const TransformStage* AugmentationPipeline::find(StageKind kind) const {
  for (const auto& s : stages_)
    if (s.kind == kind) return &s;
  return nullptr;
}

Image AugmentationPipeline::apply(const Image& image, std::uint64_t seed, AugmentTrace* trace) const {
  if (stages_.empty()) throw ValidationError("cannot apply an empty pipeline");
  if (image.empty()) throw ValidationError("cannot augment an empty image");
  if (trace) trace->fired.assign(stages_.size(), false);

  Image current = image;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const TransformStage& stage = stages_[i];
    Rng rng(derive_seed(seed, i));
    if (!rng.bernoulli(stage.probability)) continue;
    if (trace) trace->fired[i] = true;
    switch (stage.kind) {
      case StageKind::resize: {
        const auto& p = std::get<ResizeParams>(stage.params);
        current = resize_bilinear(current, p.height, p.width);
        break;
      }
      case StageKind::horizontal_flip: current = flip_horizontal(current); break;
      case StageKind::vertical_flip: current = flip_vertical(current); break;
      case StageKind::grayscale: current = to_grayscale(current); break;
      case StageKind::gaussian_blur: {
        const auto& p = std::get<BlurParams>(stage.params);
        current = gaussian_blur(current, p.kernel_h, p.kernel_w, rng.uniform(p.sigma_min, p.sigma_max));
        break;
      }
      case StageKind::color_jitter:
        current = color_jitter(current, std::get<JitterParams>(stage.params), rng);
        break;
      case StageKind::random_affine:
        current = random_affine(current, std::get<AffineParams>(stage.params), rng);
        break;
      case StageKind::random_crop:
        current = random_resized_crop(current, std::get<CropParams>(stage.params), rng);
        break;
      case StageKind::normalize:
        current = normalize_image(current, std::get<NormalizeParams>(stage.params));
        break;
    }
  }
  return current;
}

AugmentationPipeline AugmentationPipeline::evaluation_view() const {
  std::vector<TransformStage> kept;
  for (const auto& s : stages_) {
    if (s.kind == StageKind::resize || s.kind == StageKind::normalize) {
      TransformStage copy = s;
      copy.probability = 1.0;
      kept.push_back(copy);
    }
  }
  return AugmentationPipeline(std::move(kept));
}

std::string AugmentationPipeline::describe() const {
  std::ostringstream out;
  out.precision(6);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& s = stages_[i];
    out << i << ' ' << to_string(s.kind) << " p=" << s.probability;
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, ResizeParams>) {
            out << " size=" << p.height << 'x' << p.width;
          } else if constexpr (std::is_same_v<P, BlurParams>) {
            out << " kernel=" << p.kernel_h << 'x' << p.kernel_w << " sigma=[" << p.sigma_min
                << ',' << p.sigma_max << ']';
          } else if constexpr (std::is_same_v<P, JitterParams>) {
            out << " brightness=" << p.brightness << " contrast=" << p.contrast
                << " saturation=" << p.saturation << " hue=" << p.hue;
          } else if constexpr (std::is_same_v<P, AffineParams>) {
            out << " degrees=[" << p.min_degrees << ',' << p.max_degrees << "] translate=("
                << p.translate_x << ',' << p.translate_y << ") scale=[" << p.min_scale << ','
                << p.max_scale << ']';
          } else if constexpr (std::is_same_v<P, CropParams>) {
            out << " size=" << p.height << 'x' << p.width << " scale=[" << p.scale_min << ','
                << p.scale_max << "] ratio=[" << p.ratio_min << ',' << p.ratio_max << ']';
          } else if constexpr (std::is_same_v<P, NormalizeParams>) {
            out << " mean=(" << p.mean[0] << ',' << p.mean[1] << ',' << p.mean[2] << ") std=("
                << p.stddev[0] << ',' << p.stddev[1] << ',' << p.stddev[2] << ')';
          }
        },
        s.params);
    out << '\n';
  }
  return out.str();
}

std::pair<Image, Image> make_view_pair(const Image& image, const AugmentationPipeline& pipeline,
                                       std::uint64_t seed, AugmentTrace* trace_a,
                                       AugmentTrace* trace_b) {
  return {pipeline.apply(image, derive_seed(seed, 0xa11ce), trace_a),
          pipeline.apply(image, derive_seed(seed, 0xb0b), trace_b)};
}

AugmentationPipeline build_pretext_pipeline(const AugmentConfig& c) {
  std::vector<TransformStage> stages;
  stages.push_back(TransformStage::resize(c.output_size, c.output_size));
  if (c.pretext_crop) {
    CropParams crop = c.crop;
    crop.height = crop.width = c.output_size;
    stages.push_back(TransformStage::random_crop(1.0, crop));
  }
  stages.push_back(TransformStage::horizontal_flip(c.hflip_p));
  stages.push_back(TransformStage::vertical_flip(c.vflip_p));
  if (c.pretext_affine_p > 0.0) stages.push_back(TransformStage::random_affine(c.pretext_affine_p, c.affine));
  stages.push_back(TransformStage::grayscale(c.grayscale_p));
  stages.push_back(TransformStage::gaussian_blur(c.blur_p, c.blur));
  return AugmentationPipeline(std::move(stages));
}

AugmentationPipeline build_finetune_pipeline(const AugmentConfig& c, Task task) {
  std::vector<TransformStage> stages;
  stages.push_back(TransformStage::resize(c.output_size, c.output_size));
  CropParams crop = c.crop;
  crop.height = crop.width = c.output_size;
  stages.push_back(TransformStage::random_crop(1.0, crop));
  if (task == Task::multiclass) {
    stages.push_back(TransformStage::horizontal_flip(c.hflip_p));
    stages.push_back(TransformStage::color_jitter(c.jitter_p, c.jitter));
    stages.push_back(TransformStage::random_affine(c.affine_p, c.affine));
    stages.push_back(TransformStage::grayscale(c.grayscale_p));
    stages.push_back(TransformStage::normalize(c.normalize));
  }
  return AugmentationPipeline(std::move(stages));
}

}  // namespace cdssl
