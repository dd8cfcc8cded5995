#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cdssl/datasets.hpp"
#include "cdssl/errors.hpp"
#include "cdssl/synthetic.hpp"
#include "support.hpp"

using namespace cdssl;
using cdssl::testing::read_text;
using cdssl::testing::TempDir;
using cdssl::testing::write_text;

namespace {

DatasetManifest make_manifest(const std::vector<int>& grades, int num_grades) {
  DatasetManifest m;
  m.name = "toy";
  m.num_grades = m.num_classes = num_grades;
  for (std::size_t i = 0; i < grades.size(); ++i)
    m.samples.push_back({"s" + std::to_string(i), "img/" + std::to_string(i) + ".png", grades[i], grades[i],
                         SplitPart::unassigned});
  return m;
}

std::map<int, std::size_t> class_counts(const DatasetManifest& m, const std::vector<std::string>& ids) {
  std::map<int, std::size_t> out;
  for (const auto& id : ids) ++out[m.find(id).label];
  return out;
}

std::size_t bright_pixels(const Image& img) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      if (luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)) > kLesionLumaFloor) ++n;
  return n;
}

}  // namespace

TEST(Manifest, ParsesFourRows) {
  TempDir dir;
  write_text(dir / "m.csv", "id,image_path,grade\na,a.png,0\nb,b.png,1\nc,c.png,2\nd,d.png,3\n");
  const DatasetManifest m = load_manifest(dir / "m.csv", "custom", 4);
  ASSERT_EQ(m.samples.size(), 4u);
  EXPECT_EQ(m.num_grades, 4);
  EXPECT_EQ(m.samples[3].id, "d");
  EXPECT_EQ(m.samples[2].grade, 2);
  EXPECT_EQ(m.root, dir.path());
}

TEST(Manifest, RegisteredGradeCounts) {
  EXPECT_EQ(registered_num_grades("messidor"), 4);
  EXPECT_EQ(registered_num_grades("APTOS 2019"), 5);
  EXPECT_EQ(registered_num_grades("eyepacs"), 5);
  EXPECT_FALSE(registered_num_grades("nonsense").has_value());
}

TEST(Manifest, MessidorSizedManifest) {
  TempDir dir;
  std::string text = "id,image_path,grade\n";
  for (int i = 0; i < 1200; ++i) text += "m" + std::to_string(i) + ",x.png," + std::to_string(i % 4) + "\n";
  write_text(dir / "m.csv", text);
  const DatasetManifest m = load_manifest(dir / "m.csv", "messidor");
  EXPECT_EQ(m.samples.size(), 1200u);
  EXPECT_EQ(m.num_grades, 4);
}

TEST(Manifest, GradeOutOfRangeNamesTheRow) {
  TempDir dir;
  write_text(dir / "m.csv", "id,image_path,grade\na,a.png,0\nb,b.png,7\n");
  try {
    load_manifest(dir / "m.csv", "custom", 5);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MalformedInput) {
  TempDir dir;
  write_text(dir / "bad_header.csv", "name,path,label\na,a.png,0\n");
  EXPECT_THROW(load_manifest(dir / "bad_header.csv", "custom", 2), FormatError);
  write_text(dir / "bad_grade.csv", "id,image_path,grade\na,a.png,x\n");
  EXPECT_THROW(load_manifest(dir / "bad_grade.csv", "custom", 2), FormatError);
  write_text(dir / "fields.csv", "id,image_path,grade\na,a.png\n");
  EXPECT_THROW(load_manifest(dir / "fields.csv", "custom", 2), FormatError);
  EXPECT_THROW(load_manifest(dir / "missing.csv", "custom", 2), IoError);
}

TEST(Manifest, DuplicateIdsRejected) {
  DatasetManifest m = make_manifest({0, 1}, 2);
  m.samples[1].id = m.samples[0].id;
  EXPECT_THROW(validate_manifest(m), ValidationError);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  TempDir dir;
  const DatasetManifest m = make_manifest({0, 2, 1, 1}, 3);
  write_manifest(m, dir / "out.csv");
  const DatasetManifest back = load_manifest(dir / "out.csv", "toy", 3);
  ASSERT_EQ(back.samples.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.samples[i].id, m.samples[i].id);
    EXPECT_EQ(back.samples[i].grade, m.samples[i].grade);
  }
}

TEST(LabelSchemeTest, BinaryMapping) {
  const LabelScheme s = LabelScheme::binary(1);
  EXPECT_EQ(s.map(0), 0);
  EXPECT_EQ(s.map(4), 1);
  const DatasetManifest m = apply_label_scheme(make_manifest({0, 0, 1, 3}, 4), LabelScheme::binary(2));
  std::vector<int> labels;
  for (const auto& x : m.samples) labels.push_back(x.label);
  EXPECT_EQ(labels, (std::vector<int>{0, 0, 0, 1}));
  EXPECT_EQ(m.samples[3].grade, 3);
  EXPECT_EQ(m.num_classes, 2);
}

TEST(LabelSchemeTest, IdempotentOnMappedLabels) {
  const DatasetManifest once = apply_label_scheme(make_manifest({0, 1, 2, 3, 4, 2}, 5), LabelScheme::binary(2));
  const DatasetManifest twice = apply_label_scheme(once, LabelScheme::binary(2));
  for (std::size_t i = 0; i < once.samples.size(); ++i) EXPECT_EQ(once.samples[i].label, twice.samples[i].label);
}

TEST(LabelSchemeTest, ThresholdOutsideGradeRange) {
  EXPECT_THROW(LabelScheme::binary(0).validate(5), ValidationError);
  EXPECT_THROW(LabelScheme::binary(5).validate(5), ValidationError);
  EXPECT_THROW(LabelScheme::multiclass(4).validate(5), ValidationError);
}

TEST(Split, BalancedHundred) {
  std::vector<int> grades(100);
  for (int i = 0; i < 100; ++i) grades[static_cast<std::size_t>(i)] = i % 2;
  const DatasetManifest m = make_manifest(grades, 2);
  const SplitSpec s = stratified_split(m, {0.8, 0.1, 0.1}, 7);
  const auto counts = class_counts(m, s.train_ids);
  EXPECT_NEAR(static_cast<double>(counts.at(0)), 40.0, 1.0);
  EXPECT_NEAR(static_cast<double>(counts.at(1)), 40.0, 1.0);
  const SplitSpec again = stratified_split(m, {0.8, 0.1, 0.1}, 7);
  EXPECT_EQ(s.train_ids, again.train_ids);
  EXPECT_EQ(s.test_ids, again.test_ids);
}

TEST(Split, ZeroPartRejected) {
  const DatasetManifest m = make_manifest({0, 1, 0, 1, 0, 1}, 2);
  EXPECT_THROW(stratified_split(m, {1.0, 0.0, 0.0}, 1), ValidationError);
  EXPECT_THROW(stratified_split(m, {0.5, 0.2, 0.2}, 1), ValidationError);
}

TEST(Split, TinyClassReported) {
  const DatasetManifest m = make_manifest({0, 0, 0, 0, 1, 1}, 2);
  EXPECT_THROW(stratified_split(m, {0.8, 0.1, 0.1}, 1), ValidationError);
}

TEST(Split, RandomManifestProperties) {
  Rng rng(99);
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.5, 0.75, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 2 + static_cast<int>(rng.below(4));
    std::vector<int> grades;
    for (int c = 0; c < classes; ++c) {
      const int count = 20 + static_cast<int>(rng.below(60));
      for (int k = 0; k < count; ++k) grades.push_back(c);
    }
    Rng order(rng.next());
    order.shuffle(std::span<int>(grades));
    const DatasetManifest m = make_manifest(grades, classes);
    const SplitRatios ratios{0.7, 0.1, 0.2};
    const SplitSpec s = stratified_split(m, ratios, rng.next());

    std::set<std::string> seen;
    for (const auto* part : {&s.train_ids, &s.val_ids, &s.test_ids})
      for (const auto& id : *part) EXPECT_TRUE(seen.insert(id).second) << "duplicate " << id;
    EXPECT_EQ(seen.size(), m.samples.size());

    const auto totals = class_counts(m, m.ids());
    const double parts[3] = {ratios.train, ratios.val, ratios.test};
    const std::vector<std::string>* lists[3] = {&s.train_ids, &s.val_ids, &s.test_ids};
    for (int p = 0; p < 3; ++p) {
      const auto counts = class_counts(m, *lists[p]);
      for (const auto& [label, total] : totals) {
        const double got = counts.count(label) ? static_cast<double>(counts.at(label)) : 0.0;
        EXPECT_LE(std::abs(got - parts[p] * static_cast<double>(total)), 1.0) << "class " << label << " part " << p;
      }
    }

    const std::uint64_t subset_seed = rng.next();
    std::vector<std::string> previous;
    const auto train_totals = class_counts(m, s.train_ids);
    for (double f : grid) {
      const SplitSpec sub = subset_by_fraction(s, m, f, subset_seed);
      EXPECT_EQ(sub.train_ids.size(), static_cast<std::size_t>(std::llround(f * static_cast<double>(s.train_ids.size()))));
      EXPECT_EQ(sub.val_ids, s.val_ids);
      EXPECT_EQ(sub.test_ids, s.test_ids);
      const std::set<std::string> current(sub.train_ids.begin(), sub.train_ids.end());
      for (const auto& id : previous) EXPECT_TRUE(current.count(id)) << "fraction " << f << " lost " << id;
      const auto counts = class_counts(m, sub.train_ids);
      for (const auto& [label, total] : train_totals) {
        const double got = counts.count(label) ? static_cast<double>(counts.at(label)) : 0.0;
        EXPECT_LE(std::abs(got - f * static_cast<double>(total)), 1.0) << "fraction " << f << " class " << label;
      }
      previous = sub.train_ids;
    }
  }
}

TEST(Split, MessidorFractionArithmetic) {
  std::vector<int> grades(1200);
  for (int i = 0; i < 1200; ++i) grades[static_cast<std::size_t>(i)] = i % 4;
  const DatasetManifest m = make_manifest(grades, 4);
  const SplitSpec s = stratified_split(m, {0.8, 0.1, 0.1}, 3);
  ASSERT_EQ(s.train_ids.size(), 960u);
  EXPECT_EQ(subset_by_fraction(s, m, 0.1, 5).train_ids.size(), 96u);
  EXPECT_EQ(subset_by_fraction(s, m, 1.0, 5).train_ids, s.train_ids);
}

TEST(Split, FractionValidation) {
  const DatasetManifest m = make_manifest({0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2);
  const SplitSpec s = stratified_split(m, {0.6, 0.2, 0.2}, 1);
  EXPECT_THROW(subset_by_fraction(s, m, 0.0, 1), ValidationError);
  EXPECT_THROW(subset_by_fraction(s, m, 1.5, 1), ValidationError);
  EXPECT_THROW(subset_by_fraction(s, m, 0.1, 1), ValidationError);
}

TEST(Split, JsonRoundTrip) {
  TempDir dir;
  const DatasetManifest m = make_manifest({0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2);
  SplitSpec s = subset_by_fraction(stratified_split(m, {0.6, 0.2, 0.2}, 4), m, 0.5, 2);
  save_split(s, dir / "split.json");
  const SplitSpec back = load_split(dir / "split.json");
  EXPECT_EQ(back.train_ids, s.train_ids);
  EXPECT_EQ(back.test_ids, s.test_ids);
  EXPECT_DOUBLE_EQ(back.fraction, 0.5);
  EXPECT_EQ(back.seed, s.seed);
  const auto doc = nlohmann::json::parse(read_text(dir / "split.json"));
  for (const char* key : {"seed", "fraction", "train_ids", "val_ids", "test_ids"}) EXPECT_TRUE(doc.contains(key));
}

TEST(Images, BlackAndWhitePngs) {
  TempDir dir;
  write_png(Image(8, 6, 0.0), dir / "black.png");
  write_png(Image(8, 6, 1.0), dir / "white.png");
  DatasetManifest m = make_manifest({0, 1}, 2);
  m.root = dir.path();
  m.samples[0].image_path = "black.png";
  m.samples[1].image_path = "white.png";
  const Image black = load_image(m, m.samples[0]);
  EXPECT_EQ(black.height(), 8u);
  EXPECT_EQ(black.width(), 6u);
  for (double v : black.pixels()) EXPECT_EQ(v, 0.0);
  const Image white = load_image(m, m.samples[1]);
  for (double v : white.pixels()) EXPECT_EQ(v, 1.0);
  m.samples[1].image_path = "absent.png";
  EXPECT_THROW(load_image(m, m.samples[1]), IoError);
}

TEST(Synthetic, CountsAndDeterminism) {
  TempDir a, b;
  SyntheticSpec spec;
  spec.images_per_class = 50;
  spec.seed = 21;
  const SyntheticCorpus ca = generate_synthetic_corpus(spec, a.path());
  generate_synthetic_corpus(spec, b.path());
  EXPECT_EQ(ca.manifest.samples.size(), 100u);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(a / "images")) {
    ++files;
    EXPECT_EQ(read_text(entry.path()), read_text(b / ("images/" + entry.path().filename().string())));
  }
  EXPECT_EQ(files, 100u);
  EXPECT_EQ(read_text(a / "manifest.csv"), read_text(b / "manifest.csv"));
  const DatasetManifest loaded = load_manifest(a / "manifest.csv", "synthetic", 2);
  EXPECT_EQ(loaded.samples.size(), 100u);
  const Image first = load_image(loaded, loaded.samples[0]);
  EXPECT_EQ(first.height(), 64u);
  EXPECT_EQ(first.width(), 64u);
}

TEST(Synthetic, BlobCountsAndAnnotations) {
  TempDir dir;
  SyntheticSpec spec;
  spec.images_per_class = 20;
  spec.num_classes = 3;
  const SyntheticCorpus c = generate_synthetic_corpus(spec, dir.path());
  const auto annotations = load_blob_annotations(dir / "blobs.csv");
  for (const auto& s : c.manifest.samples) {
    const auto it = c.blobs.find(s.id);
    const std::size_t n = it == c.blobs.end() ? 0 : it->second.size();
    if (s.grade == 0) {
      EXPECT_EQ(n, 0u);
    } else {
      EXPECT_GE(n, static_cast<std::size_t>(3 * s.grade));
      EXPECT_LE(n, static_cast<std::size_t>(3 * s.grade + 2));
      EXPECT_EQ(annotations.at(s.id).size(), n);
    }
  }
}

TEST(Synthetic, BrightPixelThresholdSeparatesClasses) {
  TempDir dir;
  SyntheticSpec spec;
  spec.images_per_class = 200;
  spec.seed = 11;
  const SyntheticCorpus c = generate_synthetic_corpus(spec, dir.path());
  std::size_t max_negative = 0, min_positive = SIZE_MAX;
  for (const auto& s : c.manifest.samples) {
    const std::size_t n = bright_pixels(load_image(c.manifest, s));
    if (s.grade == 0) max_negative = std::max(max_negative, n);
    else min_positive = std::min(min_positive, n);
  }
  const std::size_t threshold = min_positive / 2;
  EXPECT_LT(max_negative, threshold) << "negatives reach " << max_negative << " bright pixels";
  std::size_t correct = 0;
  for (const auto& s : c.manifest.samples)
    correct += (bright_pixels(load_image(c.manifest, s)) > threshold) == (s.grade > 0);
  EXPECT_EQ(correct, c.manifest.samples.size());
}

TEST(Synthetic, InvalidSpecRejected) {
  TempDir dir;
  SyntheticSpec spec;
  spec.image_size = 16;
  EXPECT_THROW(generate_synthetic_corpus(spec, dir.path()), ValidationError);
  spec.image_size = 64;
  spec.num_classes = 1;
  EXPECT_THROW(generate_synthetic_corpus(spec, dir.path()), ValidationError);
}
