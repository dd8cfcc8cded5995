#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cdssl/image.hpp"

namespace cdssl {

enum class StageKind {
  resize,
  horizontal_flip,
  vertical_flip,
  grayscale,
  gaussian_blur,
  color_jitter,
  random_affine,
  random_crop,
  normalize,
};

std::string to_string(StageKind kind);

struct ResizeParams {
  std::size_t height = 224;
  std::size_t width = 224;
};

/// Sigma is drawn uniformly from [sigma_min, sigma_max] on each application.
struct BlurParams {
  int kernel_h = 21;
  int kernel_w = 21;
  double sigma_min = 0.1;
  double sigma_max = 2.0;
};

struct JitterParams {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;  // fraction of the hue circle, at most 0.5
};

struct AffineParams {
  double min_degrees = -180.0;
  double max_degrees = 180.0;
  double translate_x = 0.2;  // max shift as a fraction of width
  double translate_y = 0.2;
  double min_scale = 1.0;
  double max_scale = 1.0;
};

/// Random resized crop: a region covering [scale_min, scale_max] of the area
/// with aspect ratio in [ratio_min, ratio_max], resampled to height x width.
struct CropParams {
  std::size_t height = 224;
  std::size_t width = 224;
  double scale_min = 0.8;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
};

struct NormalizeParams {
  std::array<double, 3> mean{0.425, 0.297, 0.212};
  std::array<double, 3> stddev{0.276, 0.202, 0.168};
};

using StageParams = std::variant<std::monostate, ResizeParams, BlurParams, JitterParams,
                                 AffineParams, CropParams, NormalizeParams>;

struct TransformStage {
  StageKind kind = StageKind::resize;
  double probability = 1.0;
  StageParams params;

  void validate() const;

  static TransformStage resize(std::size_t height, std::size_t width);
  static TransformStage horizontal_flip(double p);
  static TransformStage vertical_flip(double p);
  static TransformStage grayscale(double p);
  static TransformStage gaussian_blur(double p, BlurParams params);
  static TransformStage color_jitter(double p, JitterParams params);
  static TransformStage random_affine(double p, AffineParams params);
  static TransformStage random_crop(double p, CropParams params);
  static TransformStage normalize(NormalizeParams params);
};

/// Which stages fired during one application, in stage order.
struct AugmentTrace {
  std::vector<bool> fired;
};

/// Ordered, immutable list of stages. The first stage must be a resize; its
/// size is the output size and any crop stage must target the same size.
class AugmentationPipeline {
 public:
  AugmentationPipeline() = default;
  explicit AugmentationPipeline(std::vector<TransformStage> stages);

  const std::vector<TransformStage>& stages() const { return stages_; }
  std::pair<std::size_t, std::size_t> output_size() const { return output_size_; }
  bool has_stage(StageKind kind) const;
  const TransformStage* find(StageKind kind) const;

  /// Deterministic for a fixed (image, seed). Each stage draws from its own
  /// stream derived from `seed`, so editing one stage leaves the others' draws intact.
  Image apply(const Image& image, std::uint64_t seed, AugmentTrace* trace = nullptr) const;

  /// Resize and normalize stages only (deterministic evaluation preprocessing).
  AugmentationPipeline evaluation_view() const;

  /// One stage per line with its parameters, in pipeline order.
  std::string describe() const;

 private:
  std::vector<TransformStage> stages_;
  std::pair<std::size_t, std::size_t> output_size_{0, 0};
};

/// Two independent applications of `pipeline` from distinct streams of `seed`.
std::pair<Image, Image> make_view_pair(const Image& image, const AugmentationPipeline& pipeline,
                                       std::uint64_t seed, AugmentTrace* trace_a = nullptr,
                                       AugmentTrace* trace_b = nullptr);

/// Knobs for the default pipelines. Probabilities and parameters default to
/// the published pretext/finetune settings.
struct AugmentConfig {
  std::size_t output_size = 224;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double grayscale_p = 0.2;
  double blur_p = 0.5;
  BlurParams blur;
  double jitter_p = 1.0;
  JitterParams jitter;
  double affine_p = 1.0;
  AffineParams affine;
  CropParams crop;
  NormalizeParams normalize;
  /// Rotation/translation/scaling named for the pretext task but absent from
  /// its hyperparameter table; 0 leaves the stage out.
  double pretext_affine_p = 0.0;
  bool pretext_crop = false;
};

enum class Task { binary, multiclass };

/// Resize, horizontal flip, vertical flip, grayscale, Gaussian blur.
AugmentationPipeline build_pretext_pipeline(const AugmentConfig& config);

/// Binary: resize + random crop. Multiclass adds flip, color jitter, affine,
/// grayscale and a final normalization.
AugmentationPipeline build_finetune_pipeline(const AugmentConfig& config, Task task);

// Individual image operations, exposed for tests and for the explainer.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);
Image to_grayscale(const Image& image);
Image gaussian_blur(const Image& image, int kernel_h, int kernel_w, double sigma);
Image normalize_image(const Image& image, const NormalizeParams& params);
Image denormalize_image(const Image& image, const NormalizeParams& params);

}  // namespace cdssl
