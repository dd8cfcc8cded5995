#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdssl/image.hpp"

namespace cdssl {

enum class SplitPart { unassigned, train, val, test };

struct Sample {
  std::string id;
  std::string image_path;  // relative to the manifest root
  int grade = 0;           // ordinal severity as recorded in the manifest
  int label = 0;           // class index under the active label scheme
  SplitPart split = SplitPart::unassigned;
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path root;  // directory the image paths are relative to
  std::vector<Sample> samples;
  int num_grades = 0;
  int num_classes = 0;  // equals num_grades until a label scheme is applied

  const Sample& find(std::string_view id) const;
  std::vector<std::string> ids() const;
};

/// Number of grades for the registered public datasets (EyePACS subset,
/// APTOS 2019, Messidor-I, Fundus Images); empty for unknown names.
std::optional<int> registered_num_grades(std::string_view dataset_name);

/// Parses a manifest CSV with header `id,image_path,grade`.
///
/// The grade count comes from the registry for known dataset names; otherwise
/// `num_grades` must be given, or 0 to infer it as max(grade) + 1. Errors name
/// the 1-based line of the offending row.
DatasetManifest load_manifest(const std::filesystem::path& path, std::string_view dataset_name,
                              int num_grades = 0);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Checks the manifest invariants (unique ids, grade range).
void validate_manifest(const DatasetManifest& manifest);

struct LabelScheme {
  enum class Kind { binary, multiclass };
  Kind kind = Kind::multiclass;
  int positive_threshold = 1;  // binary only: grade >= threshold is positive
  int num_classes = 0;         // 2 for binary, num_grades for multiclass

  static LabelScheme binary(int threshold = 1) { return {Kind::binary, threshold, 2}; }
  static LabelScheme multiclass(int num_grades) { return {Kind::multiclass, 0, num_grades}; }

  void validate(int num_grades) const;
  int map(int grade) const { return kind == Kind::binary ? (grade >= positive_threshold ? 1 : 0) : grade; }
  std::string task_name() const { return kind == Kind::binary ? "binary" : "multiclass"; }
};

/// Returns a copy whose sample labels follow `scheme`; original grades are kept.
DatasetManifest apply_label_scheme(const DatasetManifest& manifest, const LabelScheme& scheme);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitSpec {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Per-class split by largest remainder, so each part holds each class within
/// one sample of its proportional share. Stratifies on `Sample::label`.
SplitSpec stratified_split(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed);

/// Keeps round(fraction * |train|) training ids. The kept ids are a prefix of
/// a seeded, class-interleaved ordering, so subsets for growing fractions are
/// nested and every prefix stays within one sample of each class's share.
SplitSpec subset_by_fraction(const SplitSpec& split, const DatasetManifest& manifest,
                             double fraction, std::uint64_t seed);

/// Writes the split membership into the manifest's samples.
void assign_splits(DatasetManifest& manifest, const SplitSpec& split);

nlohmann::json split_to_json(const SplitSpec& split);
SplitSpec split_from_json(const nlohmann::json& doc);
void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

/// Loads the sample's image (resolved under the manifest root) as H x W x 3 in [0, 1].
Image load_image(const DatasetManifest& manifest, const Sample& sample);

/// Read-only view of a sample collection. Training code receives this rather
/// than a manifest so label access is explicit (and observable in tests).
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::string id(std::size_t index) const = 0;
  virtual Image image(std::size_t index) const = 0;
  virtual int label(std::size_t index) const = 0;
};

/// Samples of a manifest, optionally restricted to an id list, with images
/// decoded once up front.
class ManifestSource : public SampleSource {
 public:
  explicit ManifestSource(const DatasetManifest& manifest);
  ManifestSource(const DatasetManifest& manifest, const std::vector<std::string>& ids);

  std::size_t size() const override { return samples_.size(); }
  std::string id(std::size_t index) const override { return samples_.at(index).id; }
  Image image(std::size_t index) const override { return images_.at(index); }
  int label(std::size_t index) const override { return samples_.at(index).label; }

 private:
  std::vector<Sample> samples_;
  std::vector<Image> images_;
};

}  // namespace cdssl
