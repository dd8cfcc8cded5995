#include "cdssl/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cdssl/errors.hpp"
#include "cdssl/rng.hpp"

namespace cdssl {

namespace {

std::string normalize_name(std::string_view name) {
  std::string out;
  for (char ch : name)
    if (std::isalnum(static_cast<unsigned char>(ch)))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  fields.push_back(trim(current));
  return fields;
}

std::uint64_t label_stream(int label) { return 0x51a7u + static_cast<std::uint64_t>(label); }

}  // namespace

const Sample& DatasetManifest::find(std::string_view id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw ValidationError("unknown sample id '" + std::string(id) + "' in dataset " + name);
}

std::vector<std::string> DatasetManifest::ids() const {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

std::optional<int> registered_num_grades(std::string_view dataset_name) {
  static const std::map<std::string, int> registry = {
      {"eyepacs", 5},  {"eyepacssubset", 5}, {"subsetofeyepacs", 5}, {"aptos", 5},
      {"aptos2019", 5}, {"messidor", 4},     {"messidor1", 4},        {"messidori", 4},
      {"fundus", 7},   {"fundusimages", 7},
  };
  const auto it = registry.find(normalize_name(dataset_name));
  if (it == registry.end()) return std::nullopt;
  return it->second;
}

DatasetManifest load_manifest(const std::filesystem::path& path, std::string_view dataset_name,
                              int num_grades) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest not found or unreadable: " + path.string());

  const auto registered = registered_num_grades(dataset_name);
  if (registered && num_grades != 0 && num_grades != *registered) {
    throw ValidationError("dataset " + std::string(dataset_name) + " has " +
                          std::to_string(*registered) + " grades, config declares " +
                          std::to_string(num_grades));
  }
  const int declared = registered ? *registered : num_grades;

  DatasetManifest manifest;
  manifest.name = std::string(dataset_name);
  manifest.root = path.parent_path();

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (!header_seen) {
      if (fields != std::vector<std::string>{"id", "image_path", "grade"}) {
        throw FormatError(where + "expected header 'id,image_path,grade'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 3) {
      throw FormatError(where + "expected 3 fields, found " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw FormatError(where + "empty id or image_path");
    int grade = 0;
    const auto& g = fields[2];
    const auto [ptr, ec] = std::from_chars(g.data(), g.data() + g.size(), grade);
    if (ec != std::errc() || ptr != g.data() + g.size()) {
      throw FormatError(where + "grade '" + g + "' is not an integer");
    }
    if (grade < 0 || (declared > 0 && grade >= declared)) {
      throw ValidationError(where + "grade " + std::to_string(grade) + " outside [0, " +
                            std::to_string(declared) + ")");
    }
    Sample s;
    s.id = fields[0];
    s.image_path = fields[1];
    s.grade = grade;
    s.label = grade;
    manifest.samples.push_back(std::move(s));
  }
  if (!header_seen) throw FormatError(path.string() + ": empty manifest (missing header)");

  if (declared > 0) {
    manifest.num_grades = declared;
  } else {
    int max_grade = -1;
    for (const auto& s : manifest.samples) max_grade = std::max(max_grade, s.grade);
    manifest.num_grades = max_grade + 1;
  }
  manifest.num_classes = manifest.num_grades;
  validate_manifest(manifest);
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "id,image_path,grade\n";
  for (const auto& s : manifest.samples) out << s.id << ',' << s.image_path << ',' << s.grade << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

void validate_manifest(const DatasetManifest& manifest) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& s = manifest.samples[i];
    if (!seen.insert(s.id).second) {
      throw ValidationError("duplicate sample id '" + s.id + "' (row " + std::to_string(i + 1) + ")");
    }
    if (s.grade < 0 || s.grade >= manifest.num_grades) {
      throw ValidationError("sample '" + s.id + "' grade " + std::to_string(s.grade) +
                            " outside [0, " + std::to_string(manifest.num_grades) + ")");
    }
    if (std::filesystem::path(s.image_path).is_absolute()) {
      throw ValidationError("sample '" + s.id + "' image_path must be relative");
    }
  }
}

void LabelScheme::validate(int num_grades) const {
  if (kind == Kind::binary) {
    if (num_classes != 2) throw ValidationError("binary label scheme must have 2 classes");
    if (positive_threshold < 1 || positive_threshold >= num_grades) {
      throw ValidationError("binary threshold " + std::to_string(positive_threshold) +
                            " outside [1, " + std::to_string(num_grades) + ")");
    }
  } else if (num_classes != num_grades) {
    throw ValidationError("multiclass scheme has " + std::to_string(num_classes) +
                          " classes but the manifest has " + std::to_string(num_grades) + " grades");
  }
}

DatasetManifest apply_label_scheme(const DatasetManifest& manifest, const LabelScheme& scheme) {
  scheme.validate(manifest.num_grades);
  DatasetManifest out = manifest;
  for (auto& s : out.samples) s.label = scheme.map(s.grade);
  out.num_classes = scheme.num_classes;
  return out;
}

SplitSpec stratified_split(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed) {
  const double parts[3] = {ratios.train, ratios.val, ratios.test};
  for (double r : parts)
    if (!(r > 0.0)) throw ValidationError("split ratios must all be positive");
  if (std::abs(parts[0] + parts[1] + parts[2] - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    by_label[manifest.samples[i].label].push_back(i);

  std::vector<std::size_t> members[3];
  for (auto& [label, indices] : by_label) {
    const std::size_t m = indices.size();
    if (m < 3) {
      throw ValidationError("class " + std::to_string(label) + " has " + std::to_string(m) +
                            " samples, fewer than the 3 split parts");
    }
    Rng rng(derive_seed(seed, label_stream(label)));
    rng.shuffle(std::span<std::size_t>(indices));

    // Largest remainder apportionment of m across the three parts.
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      const double quota = static_cast<double>(m) * parts[p];
      counts[p] = static_cast<std::size_t>(std::floor(quota));
      remainders[p] = quota - static_cast<double>(counts[p]);
      assigned += counts[p];
    }
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3, [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < m; ++k, ++assigned) ++counts[order[k % 3]];
    for (int p = 0; p < 3; ++p) {
      if (counts[p] == 0) {
        int largest = static_cast<int>(std::max_element(counts, counts + 3) - counts);
        --counts[largest];
        ++counts[p];
      }
    }

    std::size_t offset = 0;
    for (int p = 0; p < 3; ++p) {
      for (std::size_t k = 0; k < counts[p]; ++k) members[p].push_back(indices[offset + k]);
      offset += counts[p];
    }
  }

  SplitSpec split;
  split.seed = seed;
  split.fraction = 1.0;
  std::vector<std::string>* outs[3] = {&split.train_ids, &split.val_ids, &split.test_ids};
  for (int p = 0; p < 3; ++p) {
    std::sort(members[p].begin(), members[p].end());
    for (std::size_t idx : members[p]) outs[p]->push_back(manifest.samples[idx].id);
  }
  return split;
}

SplitSpec subset_by_fraction(const SplitSpec& split, const DatasetManifest& manifest,
                             double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("label fraction must be in (0, 1], got " + std::to_string(fraction));
  SplitSpec out = split;
  out.fraction = fraction;
  if (fraction == 1.0) return out;

  std::map<std::string_view, int> label_of;
  for (const auto& s : manifest.samples) label_of[s.id] = s.label;

  std::map<int, std::vector<std::string>> by_label;
  for (const auto& id : split.train_ids) {
    const auto it = label_of.find(id);
    if (it == label_of.end()) throw ValidationError("train id '" + id + "' not in manifest");
    by_label[it->second].push_back(id);
  }

  std::vector<int> labels;
  std::vector<std::vector<std::string>> queues;
  for (auto& [label, ids] : by_label) {
    Rng rng(derive_seed(seed, label_stream(label)));
    rng.shuffle(std::span<std::string>(ids));
    labels.push_back(label);
    queues.push_back(std::move(ids));
  }

  // Interleave classes greedily by largest deficit L*n_c - a_c*N (exact in
  // integers); every prefix then tracks each class's proportional share.
  const std::size_t total = split.train_ids.size();
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  std::vector<std::size_t> taken(queues.size(), 0);
  std::vector<std::string> order;
  order.reserve(keep);
  for (std::size_t step = 1; step <= keep; ++step) {
    std::size_t best = queues.size();
    long double best_deficit = 0;
    for (std::size_t c = 0; c < queues.size(); ++c) {
      if (taken[c] == queues[c].size()) continue;
      const long double deficit = static_cast<long double>(step) * queues[c].size() -
                                  static_cast<long double>(taken[c]) * total;
      if (best == queues.size() || deficit > best_deficit) {
        best = c;
        best_deficit = deficit;
      }
    }
    order.push_back(queues[best][taken[best]++]);
  }

  for (std::size_t c = 0; c < queues.size(); ++c) {
    if (taken[c] == 0) {
      throw ValidationError("label fraction " + std::to_string(fraction) + " leaves class " +
                            std::to_string(labels[c]) + " with no training samples");
    }
  }
  out.train_ids = std::move(order);
  return out;
}

void assign_splits(DatasetManifest& manifest, const SplitSpec& split) {
  std::map<std::string_view, SplitPart> part;
  for (const auto& id : split.train_ids) part[id] = SplitPart::train;
  for (const auto& id : split.val_ids) part[id] = SplitPart::val;
  for (const auto& id : split.test_ids) part[id] = SplitPart::test;
  for (auto& s : manifest.samples) {
    const auto it = part.find(s.id);
    s.split = it == part.end() ? SplitPart::unassigned : it->second;
  }
}

nlohmann::json split_to_json(const SplitSpec& split) {
  return nlohmann::json{{"seed", split.seed},
                        {"fraction", split.fraction},
                        {"train_ids", split.train_ids},
                        {"val_ids", split.val_ids},
                        {"test_ids", split.test_ids}};
}

SplitSpec split_from_json(const nlohmann::json& doc) {
  SplitSpec split;
  try {
    split.seed = doc.at("seed").get<std::uint64_t>();
    split.fraction = doc.at("fraction").get<double>();
    split.train_ids = doc.at("train_ids").get<std::vector<std::string>>();
    split.val_ids = doc.at("val_ids").get<std::vector<std::string>>();
    split.test_ids = doc.at("test_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed split document: ") + e.what());
  }
  std::set<std::string> seen;
  for (const auto* part : {&split.train_ids, &split.val_ids, &split.test_ids})
    for (const auto& id : *part)
      if (!seen.insert(id).second) throw FormatError("split id '" + id + "' appears twice");
  return split;
}

void save_split(const SplitSpec& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write split " + path.string());
  out << split_to_json(split).dump(2) << '\n';
}

SplitSpec load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read split " + path.string());
  try {
    return split_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Image load_image(const DatasetManifest& manifest, const Sample& sample) {
  const auto path = manifest.root / sample.image_path;
  if (!std::filesystem::exists(path)) {
    throw IoError("image for sample '" + sample.id + "' not found: " + path.string());
  }
  return read_png(path);
}

ManifestSource::ManifestSource(const DatasetManifest& manifest) : samples_(manifest.samples) {
  images_.reserve(samples_.size());
  for (const auto& s : samples_) images_.push_back(load_image(manifest, s));
}

ManifestSource::ManifestSource(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  samples_.reserve(ids.size());
  images_.reserve(ids.size());
  for (const auto& id : ids) {
    samples_.push_back(manifest.find(id));
    images_.push_back(load_image(manifest, samples_.back()));
  }
}

}  // namespace cdssl
