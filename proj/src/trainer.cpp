#include "cdssl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "cdssl/errors.hpp"
#include "cdssl/objective.hpp"
#include "cdssl/rng.hpp"

namespace cdssl {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5f1e;
constexpr std::uint64_t kViewStream = 0x71e75;
constexpr std::uint64_t kSubsetStream = 0x5b5e7;
constexpr std::size_t kEvalBatch = 64;

nlohmann::json lars_json(const LarsHyper& h) {
  return {{"base_lr", h.base_lr},
          {"weight_decay", h.weight_decay},
          {"momentum", h.momentum},
          {"trust_coefficient", h.trust_coefficient},
          {"epsilon", h.epsilon}};
}

nlohmann::json augment_json(const AugmentConfig& a) {
  return {{"output_size", a.output_size},
          {"hflip_p", a.hflip_p},
          {"vflip_p", a.vflip_p},
          {"grayscale_p", a.grayscale_p},
          {"blur_p", a.blur_p},
          {"blur", {a.blur.kernel_h, a.blur.kernel_w, a.blur.sigma_min, a.blur.sigma_max}},
          {"jitter_p", a.jitter_p},
          {"jitter", {a.jitter.brightness, a.jitter.contrast, a.jitter.saturation, a.jitter.hue}},
          {"affine_p", a.affine_p},
          {"affine",
           {a.affine.min_degrees, a.affine.max_degrees, a.affine.translate_x, a.affine.translate_y,
            a.affine.min_scale, a.affine.max_scale}},
          {"crop", {a.crop.scale_min, a.crop.scale_max, a.crop.ratio_min, a.crop.ratio_max}},
          {"normalize", {{"mean", a.normalize.mean}, {"std", a.normalize.stddev}}},
          {"pretext_affine_p", a.pretext_affine_p},
          {"pretext_crop", a.pretext_crop}};
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

/// Batches of a permutation; a trailing batch smaller than `min_last` is dropped.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size,
                                                   std::size_t min_last) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < min_last) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size, std::size_t min_last) {
  const std::size_t full = n / batch_size, rest = n % batch_size;
  return full + (rest >= min_last && rest > 0 ? 1 : 0);
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void check_pipeline_size(const AugmentationPipeline& pipeline, const EncoderConfig& encoder) {
  const auto [h, w] = pipeline.output_size();
  if (h != encoder.input_size || w != encoder.input_size) {
    throw ValidationError("augmentation output size " + std::to_string(h) + "x" + std::to_string(w) +
                          " does not match encoder input size " + std::to_string(encoder.input_size));
  }
}

void ensure_dir(const std::filesystem::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Per-feature standardization used by the linear probe. Training happens in
/// standardized feature space; fold() rewrites head.0 so the bundle consumes
/// raw features again.
struct FeatureStandardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static FeatureStandardizer fit(const ModelBundle& model, const SampleSource& samples,
                                 const AugmentationPipeline& pipeline) {
    const std::size_t d = model.encoder_config().feature_dim;
    FeatureStandardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    std::vector<double> sq(d, 0.0);
    const std::size_t n = samples.size();
    for (std::size_t start = 0; start < n; start += kEvalBatch) {
      std::vector<Image> images;
      for (std::size_t i = start; i < std::min(n, start + kEvalBatch); ++i) images.push_back(pipeline.apply(samples.image(i), 0));
      const Tensor f = encode_features(model, images_to_batch(images));
      for (std::size_t r = 0; r < f.dim(0); ++r) {
        for (std::size_t k = 0; k < d; ++k) {
          s.mean[k] += f.at(r, k);
          sq[k] += f.at(r, k) * f.at(r, k);
        }
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      s.mean[k] /= static_cast<double>(n);
      const double var = std::max(sq[k] / static_cast<double>(n) - s.mean[k] * s.mean[k], 0.0);
      s.inv_std[k] = 1.0 / std::sqrt(var + 1e-8);
    }
    return s;
  }

  Tensor apply(Tensor f) const {
    for (std::size_t r = 0; r < f.dim(0); ++r)
      for (std::size_t k = 0; k < mean.size(); ++k) f.at(r, k) = (f.at(r, k) - mean[k]) * inv_std[k];
    return f;
  }

  ModelBundle fold(ModelBundle model) const {
    Tensor& w = model.parameters().at("head.0.weight");
    Tensor& b = model.parameters().at("head.0.bias");
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      for (std::size_t k = 0; k < w.dim(1); ++k) {
        w.at(o, k) *= inv_std[k];
        b[o] -= w.at(o, k) * mean[k];
      }
    }
    return model;
  }
};

}  // namespace

void write_metrics_log(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write metrics log " + path.string());
  out << kMetricsLogHeader << '\n';
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.epoch,
                  r.loss, r.lr, r.trust_ratio_median);
    out << buf;
  }
  if (!out) throw IoError("failed writing metrics log " + path.string());
}

void PretextConfig::validate() const {
  if (batch_size < 2) throw ValidationError("pretext.batch_size must be at least 2, got " + std::to_string(batch_size));
  if (epochs < 1) throw ValidationError("pretext.epochs must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ValidationError("pretext.temperature must be positive");
  encoder.validate();
  optimizer.validate();
  if (augment.output_size != encoder.input_size)
    throw ValidationError("pretext.augment.output_size must equal pretext.encoder.input_size");
}

nlohmann::json PretextConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"temperature", temperature},
          {"augment", augment_json(augment)},
          {"encoder", cdssl::to_json(encoder)},
          {"projection", cdssl::to_json(projection)},
          {"optimizer", lars_json(optimizer)},
          {"cosine_schedule", cosine_schedule},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

PretrainResult pretrain(const PretextConfig& config, const SampleSource& source) {
  config.validate();
  const std::size_t n = source.size();
  if (n < 2) throw ValidationError("pretraining needs at least two images, got " + std::to_string(n));

  const AugmentationPipeline pipeline = build_pretext_pipeline(config.augment);
  check_pipeline_size(pipeline, config.encoder);
  ModelBundle model =
      build_projection_model(config.encoder, config.projection, derive_seed(config.seed, kInitStream));
  ensure_dir(config.output_dir);

  const std::size_t min_last = 2;
  const std::uint64_t total_steps = batches_per_epoch(n, config.batch_size, min_last) * config.epochs;
  const nlohmann::json run_config = config.to_json();

  PretrainResult result;
  OptimizerState state;
  ForwardMode mode{true, false};
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = seeded_permutation(n, derive_seed(derive_seed(config.seed, kShuffleStream), epoch));
    const std::uint64_t view_base = derive_seed(derive_seed(config.seed, kViewStream), epoch);
    std::vector<double> losses;
    for (const auto& batch_idx : make_batches(order, config.batch_size, min_last)) {
      std::vector<Image> views;
      views.reserve(2 * batch_idx.size());
      for (std::size_t idx : batch_idx) {
        auto [a, b] = make_view_pair(source.image(idx), pipeline, derive_seed(view_base, idx));
        views.push_back(std::move(a));
        views.push_back(std::move(b));
      }
      ForwardTape tape;
      const Tensor z = forward(model, images_to_batch(views), mode, &tape);
      Tensor dz;
      const LossValue loss = nt_xent_loss({z, config.temperature}, &dz);
      if (!std::isfinite(loss.total) || !dz.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite contrastive loss at epoch " << epoch << ", step " << state.step + 1 << " (loss "
            << loss.total << ", batch of " << batch_idx.size() << " images, first id " << source.id(batch_idx[0])
            << ")";
        throw NumericError(msg.str());
      }
      const ParameterSet grads = backward(model, tape, dz);
      LarsHyper hyper = config.optimizer;
      if (config.cosine_schedule) hyper.base_lr *= cosine_lr_scale(state.step, total_steps);
      const auto slots = parameter_slots(model, grads);
      const StepStats stats = lars_step(slots, state, hyper);
      result.log.push_back({state.step, epoch, loss.total, hyper.base_lr, stats.median_ratio()});
      losses.push_back(loss.total);
    }
    result.epoch_losses.push_back(mean(losses));

    const bool last = epoch == config.epochs;
    const bool cadence = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
    if (last || cadence) {
      nlohmann::json metrics{{"epoch_loss", result.epoch_losses.back()}, {"loss_curve", result.epoch_losses}};
      Checkpoint ckpt = make_checkpoint(model, &state, static_cast<int>(epoch), metrics);
      ckpt.metadata["run"] = {{"phase", "pretext"}, {"config", run_config},
                              {"fingerprint", config_fingerprint(run_config)}, {"seed", config.seed}};
      if (!config.output_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "pretext_epoch_%03zu.ckpt", epoch);
        save_checkpoint(ckpt, config.output_dir / name);
        if (last) save_checkpoint(ckpt, config.output_dir / "pretext_final.ckpt");
      }
      if (last) result.checkpoint = std::move(ckpt);
    }
    if (!config.output_dir.empty()) write_metrics_log(result.log, config.output_dir / "pretext_metrics.csv");
  }
  return result;
}

std::string to_string(FinetuneMode mode) {
  return mode == FinetuneMode::full_finetune ? "full_finetune" : "linear_probe";
}

FinetuneMode finetune_mode_from_string(const std::string& name) {
  if (name == "full_finetune") return FinetuneMode::full_finetune;
  if (name == "linear_probe") return FinetuneMode::linear_probe;
  throw ValidationError("unknown finetune mode '" + name + "' (expected full_finetune or linear_probe)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::lars ? "lars" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "lars") return OptimizerKind::lars;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ValidationError("unknown optimizer '" + name + "' (expected lars or sgd)");
}

void FinetuneConfig::validate() const {
  if (batch_size < 1) throw ValidationError("finetune.batch_size must be positive");
  if (epochs < 1) throw ValidationError("finetune.epochs must be at least 1");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("finetune.fraction must lie in (0, 1], got " + std::to_string(fraction));
  if (scheme.num_classes < 2) throw ValidationError("finetune needs at least two classes");
  if (classifier.num_classes != static_cast<std::size_t>(scheme.num_classes)) {
    throw ValidationError("classifier has " + std::to_string(classifier.num_classes) + " outputs but the label scheme has " +
                          std::to_string(scheme.num_classes) + " classes");
  }
  if (optimizer == OptimizerKind::lars) {
    lars.validate();
  } else {
    if (!(sgd_lr >= 0.0) || !(sgd_momentum >= 0.0 && sgd_momentum < 1.0) || !(sgd_weight_decay >= 0.0))
      throw ValidationError("finetune sgd hyperparameters out of range");
  }
}

nlohmann::json FinetuneConfig::to_json() const {
  nlohmann::json j{{"batch_size", batch_size},
                   {"epochs", epochs},
                   {"task", scheme.task_name()},
                   {"positive_threshold", scheme.positive_threshold},
                   {"num_classes", scheme.num_classes},
                   {"fraction", fraction},
                   {"augment", augment_json(augment)},
                   {"classifier", cdssl::to_json(classifier)},
                   {"optimizer", to_string(optimizer)},
                   {"seed", seed},
                   {"mode", to_string(mode)},
                   {"freeze_batch_norm", freeze_batch_norm},
                   {"patience", patience},
                   {"cosine_schedule", cosine_schedule}};
  if (optimizer == OptimizerKind::lars) {
    j["lars"] = lars_json(lars);
  } else {
    j["sgd"] = {{"lr", sgd_lr}, {"momentum", sgd_momentum}, {"weight_decay", sgd_weight_decay}};
  }
  return j;
}

std::vector<int> predict(const ModelBundle& model, const SampleSource& samples, const AugmentationPipeline& pipeline) {
  if (model.head_kind() != HeadKind::classifier) throw ValidationError("prediction needs a classifier head");
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
    const std::size_t end = std::min(samples.size(), start + kEvalBatch);
    std::vector<Image> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(pipeline.apply(samples.image(i), 0));
    const Tensor logits = forward_classify(model, images_to_batch(images));
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < logits.dim(0); ++r) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (logits.at(r, k) > logits.at(r, best)) best = k;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

MetricsReport evaluate(const ModelBundle& model, const SampleSource& samples, const AugmentationPipeline& pipeline,
                       const LabelScheme& scheme, const std::string& dataset, double fraction) {
  if (samples.size() == 0) throw ValidationError("evaluation split is empty");
  if (model.num_outputs() != static_cast<std::size_t>(scheme.num_classes)) {
    throw ValidationError("model has " + std::to_string(model.num_outputs()) + " outputs but the label scheme has " +
                          std::to_string(scheme.num_classes) + " classes");
  }
  const std::vector<int> predicted = predict(model, samples, pipeline);
  std::vector<int> truth(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) truth[i] = samples.label(i);
  return make_report(confusion_from_predictions(truth, predicted, static_cast<std::size_t>(scheme.num_classes)),
                     scheme.kind, dataset, fraction);
}

MetricsReport evaluate(const ModelBundle& model, const SplitSpec& split, const DatasetManifest& manifest,
                       const LabelScheme& scheme, const AugmentConfig& augment) {
  scheme.validate(manifest.num_grades);
  const DatasetManifest labeled = apply_label_scheme(manifest, scheme);
  if (split.test_ids.empty()) throw ValidationError("test split is empty");
  const ManifestSource test(labeled, split.test_ids);
  const Task task = scheme.kind == LabelScheme::Kind::binary ? Task::binary : Task::multiclass;
  return evaluate(model, test, build_finetune_pipeline(augment, task).evaluation_view(), scheme, manifest.name,
                  split.fraction);
}

FinetuneResult finetune_model(const FinetuneConfig& config, ModelBundle initial, const SampleSource& train,
                              const SampleSource& test, const SampleSource* val) {
  config.validate();
  if (initial.head_kind() != HeadKind::classifier) throw ValidationError("finetuning needs a classifier bundle");
  if (initial.num_outputs() != static_cast<std::size_t>(config.scheme.num_classes))
    throw ValidationError("classifier outputs do not match the label scheme");
  if (train.size() == 0) throw ValidationError("finetuning split is empty");

  const AugmentationPipeline pipeline = build_finetune_pipeline(config.augment, config.task());
  check_pipeline_size(pipeline, initial.encoder_config());
  const AugmentationPipeline eval_pipeline = pipeline.evaluation_view();
  ensure_dir(config.output_dir);

  const bool probe = config.mode == FinetuneMode::linear_probe;
  // A frozen encoder keeps its batch statistics; the head has none.
  const ForwardMode mode{!probe, config.freeze_batch_norm};
  const auto trainable = [probe](const std::string& name) { return !probe || is_head_parameter(name); };

  FinetuneResult result;
  result.model = std::move(initial);
  ModelBundle& model = result.model;
  OptimizerState state;

  std::optional<FeatureStandardizer> standardizer;
  if (probe) standardizer = FeatureStandardizer::fit(model, train, eval_pipeline);
  const auto current = [&]() { return standardizer ? standardizer->fold(model) : model; };

  const std::size_t n = train.size();
  const std::size_t min_last = std::min<std::size_t>(2, n);
  double best_val = -1.0;
  std::size_t stale = 0;
  ModelBundle best_model;
  const std::uint64_t total_steps = config.epochs * make_batches(seeded_permutation(n, 0), config.batch_size, min_last).size();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = seeded_permutation(n, derive_seed(derive_seed(config.seed, kShuffleStream), epoch));
    const std::uint64_t view_base = derive_seed(derive_seed(config.seed, kViewStream), epoch);
    std::vector<double> losses;
    for (const auto& batch_idx : make_batches(order, config.batch_size, min_last)) {
      std::vector<Image> images;
      std::vector<int> targets;
      for (std::size_t idx : batch_idx) {
        images.push_back(pipeline.apply(train.image(idx), derive_seed(view_base, idx)));
        targets.push_back(train.label(idx));
      }
      ForwardTape tape;
      Tensor logits;
      if (standardizer) {
        tape.mode = ForwardMode{};
        tape.features = standardizer->apply(encode_features(model, images_to_batch(images)));
        logits = model.network().head().forward(model.parameters(), tape.features, tape.head, tape.mode, nullptr);
      } else {
        logits = forward(model, images_to_batch(images), mode, &tape);
      }
      Tensor dlogits;
      const double loss = softmax_cross_entropy(logits, targets, &dlogits);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite cross-entropy at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(state.step + 1));
      }
      ParameterSet grads = model.parameters().zeros_like();
      if (standardizer) {
        model.network().head().backward(model.parameters(), dlogits, tape.head, tape.mode, grads);
      } else {
        grads = backward(model, tape, dlogits, {probe});
      }
      const auto slots = parameter_slots(model, grads, trainable);
      StepStats stats;
      const double scale = config.cosine_schedule ? cosine_lr_scale(state.step, total_steps) : 1.0;
      double lr = 0.0;
      if (config.optimizer == OptimizerKind::lars) {
        LarsHyper hyper = config.lars;
        hyper.base_lr *= scale;
        lr = hyper.base_lr;
        stats = lars_step(slots, state, hyper);
      } else {
        lr = config.sgd_lr * scale;
        stats = sgd_step(slots, state, lr, config.sgd_momentum, config.sgd_weight_decay);
      }
      result.log.push_back({state.step, epoch, loss, lr, stats.median_ratio()});
      losses.push_back(loss);
    }
    result.epoch_losses.push_back(mean(losses));

    if (config.patience > 0 && val && val->size() > 0) {
      const double acc = evaluate(current(), *val, eval_pipeline, config.scheme).metrics.accuracy.value();
      if (acc > best_val) {
        best_val = acc;
        best_model = model;
        stale = 0;
      } else if (++stale >= config.patience) {
        model = best_model;
        break;
      }
    }
  }

  if (standardizer) model = standardizer->fold(std::move(model));
  result.report = evaluate(model, test, eval_pipeline, config.scheme, config.dataset_name, config.fraction);
  if (!config.output_dir.empty()) {
    write_metrics_log(result.log, config.output_dir / "finetune_metrics.csv");
    Checkpoint ckpt = make_checkpoint(model, &state, static_cast<int>(result.epoch_losses.size()),
                                      result.report.to_json());
    const nlohmann::json run_config = config.to_json();
    ckpt.metadata["run"] = {{"phase", "finetune"}, {"config", run_config},
                            {"fingerprint", config_fingerprint(run_config)}, {"seed", config.seed}};
    save_checkpoint(ckpt, config.output_dir / "finetune_final.ckpt");
  }
  return result;
}

FinetuneResult finetune(const FinetuneConfig& config, const Checkpoint& checkpoint, const SplitSpec& split,
                        const DatasetManifest& manifest) {
  config.validate();
  config.scheme.validate(manifest.num_grades);
  const DatasetManifest labeled = apply_label_scheme(manifest, config.scheme);
  const SplitSpec subset = subset_by_fraction(split, labeled, config.fraction, derive_seed(config.seed, kSubsetStream));
  ModelBundle initial = transfer_encoder(checkpoint, config.classifier, derive_seed(config.seed, kInitStream));
  const ManifestSource train(labeled, subset.train_ids);
  const ManifestSource test(labeled, split.test_ids);
  if (test.size() == 0) throw ValidationError("test split is empty");
  if (config.patience > 0 && !split.val_ids.empty()) {
    const ManifestSource val(labeled, split.val_ids);
    return finetune_model(config, std::move(initial), train, test, &val);
  }
  return finetune_model(config, std::move(initial), train, test);
}

}  // namespace cdssl
