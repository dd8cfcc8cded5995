#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdssl/datasets.hpp"
#include "cdssl/metrics.hpp"
#include "cdssl/trainer.hpp"

namespace cdssl {

/// Overrides the root that relative output directories resolve against.
inline constexpr const char* kOutputRootEnv = "CDSSL_OUTPUT_ROOT";

struct TargetConfig {
  std::string name;
  std::filesystem::path manifest;
  int num_grades = 0;
  std::vector<Task> tasks{Task::binary};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;

  std::string source_name = "source";
  std::filesystem::path source_manifest;
  int source_num_grades = 0;
  std::optional<std::filesystem::path> pretext_checkpoint;
  PretextConfig pretext;

  /// Template for every sweep cell; scheme, fraction and dataset are filled per cell.
  FinetuneConfig finetune;
  LarsHyper finetune_lars_binary;
  LarsHyper finetune_lars_multiclass;
  int positive_threshold = 1;
  SplitRatios split;
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.5, 1.0};
  std::vector<TargetConfig> targets;

  /// Parsed document; its canonical dump is what the fingerprint hashes.
  nlohmann::json document;

  std::string fingerprint() const;
  /// Finetune settings for one sweep cell.
  FinetuneConfig cell_config(const TargetConfig& target, Task task, double fraction, int num_grades) const;
};

/// Validates the whole document before anything runs. Relative paths are
/// resolved against `base_dir`; missing files are errors when `check_paths`.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                         bool check_paths = true);
ExperimentConfig load_experiment_config(const std::filesystem::path& path, bool check_paths = true);

std::string task_name(Task task);
Task task_from_string(const std::string& name);

/// Exclusive claim on an output directory for one training command.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct SweepRow {
  std::string dataset;
  std::string task;
  double fraction = 0.0;
  MetricsReport report;
};

struct SweepFailure {
  std::string dataset;
  std::string task;
  double fraction = 0.0;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepFailure> failures;
  std::string config_fingerprint;
  std::string checkpoint_fingerprint;
  std::uint64_t seed = 0;
  std::size_t resumed_cells = 0;
  std::filesystem::path results_csv;
};

struct SweepOptions {
  /// Pretrain when no checkpoint is configured or cached.
  bool pretrain = false;
  std::ostream* log = nullptr;
};

/// Pretext checkpoint for the experiment: the configured file, a cached
/// run in the output directory with matching fingerprint, or (when allowed) a
/// fresh pretraining run.
Checkpoint obtain_pretext_checkpoint(const ExperimentConfig& config, bool allow_pretrain, std::ostream* log);

/// Runs every target x task x fraction cell, resuming cells recorded as done
/// in the output directory's cell ledger. Failed cells are recorded and the
/// sweep continues.
SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options = {});

/// Loads a manifest the way the experiment does (registered or configured grade count).
DatasetManifest load_target_manifest(const TargetConfig& target);
/// The split used for a target/task cell; stratified on that task's labels.
SplitSpec experiment_split(const ExperimentConfig& config, const DatasetManifest& labeled, const std::string& dataset,
                           Task task);

}  // namespace cdssl
