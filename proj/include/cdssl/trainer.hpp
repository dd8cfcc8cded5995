#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdssl/augment.hpp"
#include "cdssl/checkpoint.hpp"
#include "cdssl/datasets.hpp"
#include "cdssl/metrics.hpp"
#include "cdssl/model.hpp"
#include "cdssl/optim.hpp"

namespace cdssl {

/// One row of the append-only metrics log.
struct LogRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double trust_ratio_median = 0.0;
};

inline constexpr const char* kMetricsLogHeader = "step,epoch,loss,lr,trust_ratio_median";

void write_metrics_log(const std::vector<LogRow>& rows, const std::filesystem::path& path);

struct PretextConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  double temperature = 0.5;
  AugmentConfig augment;
  EncoderConfig encoder;
  ProjectionHeadConfig projection;
  LarsHyper optimizer = LarsHyper::binary_defaults();
  bool cosine_schedule = false;
  std::uint64_t seed = 0;
  /// Save a checkpoint every this many epochs (0: final only).
  std::size_t checkpoint_every = 0;
  /// Where checkpoints and the metrics log go; empty keeps everything in memory.
  std::filesystem::path output_dir;

  void validate() const;
  nlohmann::json to_json() const;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;  // mean loss per epoch
  std::vector<LogRow> log;
};

/// Contrastive pretraining. Only `size`, `id` and `image` of the source are
/// used; labels are never read.
PretrainResult pretrain(const PretextConfig& config, const SampleSource& source);

enum class FinetuneMode { full_finetune, linear_probe };
enum class OptimizerKind { lars, sgd };

std::string to_string(FinetuneMode mode);
FinetuneMode finetune_mode_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct FinetuneConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 20;
  LabelScheme scheme = LabelScheme::binary(1);
  double fraction = 1.0;
  AugmentConfig augment;
  ClassifierHeadConfig classifier;
  OptimizerKind optimizer = OptimizerKind::lars;
  LarsHyper lars = LarsHyper::binary_defaults();
  double sgd_lr = 0.01;
  double sgd_momentum = 0.9;
  double sgd_weight_decay = 0.0;
  std::uint64_t seed = 0;
  FinetuneMode mode = FinetuneMode::full_finetune;
  bool freeze_batch_norm = false;
  /// Stop after this many epochs without validation-accuracy gain (0: never).
  std::size_t patience = 0;
  bool cosine_schedule = false;
  std::string dataset_name;
  std::filesystem::path output_dir;

  Task task() const { return scheme.kind == LabelScheme::Kind::binary ? Task::binary : Task::multiclass; }
  void validate() const;
  nlohmann::json to_json() const;
};

struct FinetuneResult {
  ModelBundle model;
  MetricsReport report;
  std::vector<double> epoch_losses;
  std::vector<LogRow> log;
};

/// Trains `initial` (a classifier bundle) on `train` and evaluates on `test`.
/// `val` is only consulted when patience > 0.
FinetuneResult finetune_model(const FinetuneConfig& config, ModelBundle initial, const SampleSource& train,
                              const SampleSource& test, const SampleSource* val = nullptr);

/// Transfers the checkpoint's encoder, applies the label scheme, subsets the
/// training split by the configured fraction and trains; the whole test
/// split is evaluated regardless of fraction.
FinetuneResult finetune(const FinetuneConfig& config, const Checkpoint& checkpoint, const SplitSpec& split,
                        const DatasetManifest& manifest);

/// Deterministic pass over `samples` with `pipeline` (resize/normalize only).
MetricsReport evaluate(const ModelBundle& model, const SampleSource& samples, const AugmentationPipeline& pipeline,
                       const LabelScheme& scheme, const std::string& dataset = {}, double fraction = 1.0);

/// Evaluates the test split of `manifest` (labels from `scheme`).
MetricsReport evaluate(const ModelBundle& model, const SplitSpec& split, const DatasetManifest& manifest,
                       const LabelScheme& scheme, const AugmentConfig& augment = {});

std::vector<int> predict(const ModelBundle& model, const SampleSource& samples, const AugmentationPipeline& pipeline);

}  // namespace cdssl
