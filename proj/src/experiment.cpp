#include "cdssl/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "cdssl/errors.hpp"
#include "cdssl/hash.hpp"
#include "cdssl/report.hpp"
#include "cdssl/rng.hpp"
#include "cdssl/toml_lite.hpp"

namespace cdssl {

namespace fs = std::filesystem;

namespace {

/// Typed access to one config table; remembers which keys were read so
/// leftovers can be reported as unknown fields.
class Table {
 public:
  Table(const nlohmann::json* node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_->is_object()) throw ValidationError(path_ + ": expected a table");
  }

  bool present() const { return node_ != nullptr; }
  bool has(const std::string& key) const { return node_ && node_->contains(key); }

  Table sub(const std::string& key) {
    used_.insert(key);
    return Table(has(key) ? &(*node_)[key] : nullptr, field(key));
  }

  const std::string& path() const { return path_; }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* raw(const std::string& key) {
    used_.insert(key);
    return has(key) ? &(*node_)[key] : nullptr;
  }

  double number(const std::string& key, double def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_number()) throw ValidationError(field(key) + ": expected a number");
    return v->get<double>();
  }

  std::size_t count(const std::string& key, std::size_t def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_number_integer() || v->get<long long>() < 0)
      throw ValidationError(field(key) + ": expected a non-negative integer");
    return v->get<std::size_t>();
  }

  bool flag(const std::string& key, bool def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ValidationError(field(key) + ": expected true or false");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_string()) throw ValidationError(field(key) + ": expected a string");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    const auto* v = raw(key);
    if (!v) return def;
    if (!v->is_array()) throw ValidationError(field(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw ValidationError(field(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> def) {
    const auto* v = raw(key);
    if (!v) return def;
    std::vector<std::size_t> out;
    if (!v->is_array()) throw ValidationError(field(key) + ": expected an array of integers");
    for (const auto& e : *v) {
      if (!e.is_number_integer() || e.get<long long>() < 0)
        throw ValidationError(field(key) + ": expected an array of non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<std::string> texts(const std::string& key, std::vector<std::string> def) {
    const auto* v = raw(key);
    if (!v) return def;
    std::vector<std::string> out;
    if (!v->is_array()) throw ValidationError(field(key) + ": expected an array of strings");
    for (const auto& e : *v) {
      if (!e.is_string()) throw ValidationError(field(key) + ": expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!used_.count(key)) throw ValidationError(field(key) + ": unknown field");
    }
  }

 private:
  const nlohmann::json* node_;
  std::string path_;
  std::set<std::string> used_;
};

void check_range(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ValidationError(field + ": " + what);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

void require_file(const fs::path& p, const std::string& field, bool check) {
  if (check && !fs::is_regular_file(p)) throw ValidationError(field + ": file not found: " + p.string());
}

EncoderConfig read_encoder(Table t) {
  EncoderConfig c;
  const std::string arch = t.text("architecture", "small_cnn");
  try {
    c.architecture = architecture_from_string(arch);
  } catch (const ValidationError& e) {
    throw ValidationError(t.field("architecture") + ": " + e.what());
  }
  if (c.architecture == Architecture::reference_resnet50_style) c = EncoderConfig::reference();
  c.feature_dim = t.count("feature_dim", c.feature_dim);
  c.input_size = t.count("input_size", c.input_size);
  c.channels = t.counts("channels", c.channels);
  c.batch_norm = t.flag("batch_norm", c.batch_norm);
  c.stage_blocks = t.counts("stage_blocks", c.stage_blocks);
  c.base_width = t.count("base_width", c.base_width);
  t.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(t.path() + ": " + e.what());
  }
  return c;
}

LarsHyper read_lars(Table& t, LarsHyper h) {
  h.base_lr = t.number("base_lr", h.base_lr);
  h.weight_decay = t.number("weight_decay", h.weight_decay);
  h.momentum = t.number("momentum", h.momentum);
  h.trust_coefficient = t.number("trust_coefficient", h.trust_coefficient);
  h.epsilon = t.number("epsilon", h.epsilon);
  check_range(h.base_lr > 0, t.field("base_lr"), "must be positive");
  check_range(h.weight_decay >= 0, t.field("weight_decay"), "must be non-negative");
  check_range(h.momentum >= 0 && h.momentum < 1, t.field("momentum"), "must lie in [0, 1)");
  check_range(h.trust_coefficient > 0, t.field("trust_coefficient"), "must be positive");
  check_range(h.epsilon > 0, t.field("epsilon"), "must be positive");
  return h;
}

void read_probability(Table& t, const std::string& key, double& p) {
  p = t.number(key, p);
  check_range(p >= 0 && p <= 1, t.field(key), "must be a probability in [0, 1]");
}

void read_augment(Table t, AugmentConfig& a) {
  read_probability(t, "hflip_p", a.hflip_p);
  read_probability(t, "vflip_p", a.vflip_p);
  read_probability(t, "grayscale_p", a.grayscale_p);
  read_probability(t, "blur_p", a.blur_p);
  read_probability(t, "jitter_p", a.jitter_p);
  read_probability(t, "affine_p", a.affine_p);
  read_probability(t, "pretext_affine_p", a.pretext_affine_p);
  a.pretext_crop = t.flag("pretext_crop", a.pretext_crop);
  const auto kernel = t.counts("blur_kernel", {static_cast<std::size_t>(a.blur.kernel_h), static_cast<std::size_t>(a.blur.kernel_w)});
  check_range(kernel.size() == 2 && kernel[0] % 2 == 1 && kernel[1] % 2 == 1, t.field("blur_kernel"),
              "expected two odd sizes");
  a.blur.kernel_h = static_cast<int>(kernel[0]);
  a.blur.kernel_w = static_cast<int>(kernel[1]);
  const auto sigma = t.numbers("blur_sigma", {a.blur.sigma_min, a.blur.sigma_max});
  check_range(sigma.size() == 2 && sigma[0] > 0 && sigma[0] <= sigma[1], t.field("blur_sigma"),
              "expected [min, max] with 0 < min <= max");
  a.blur.sigma_min = sigma[0];
  a.blur.sigma_max = sigma[1];
  const auto jitter = t.numbers("jitter", {a.jitter.brightness, a.jitter.contrast, a.jitter.saturation, a.jitter.hue});
  check_range(jitter.size() == 4, t.field("jitter"), "expected [brightness, contrast, saturation, hue]");
  a.jitter = {jitter[0], jitter[1], jitter[2], jitter[3]};
  const auto degrees = t.numbers("affine_degrees", {a.affine.min_degrees, a.affine.max_degrees});
  check_range(degrees.size() == 2 && degrees[0] <= degrees[1], t.field("affine_degrees"), "expected [min, max]");
  a.affine.min_degrees = degrees[0];
  a.affine.max_degrees = degrees[1];
  const auto translate = t.numbers("affine_translate", {a.affine.translate_x, a.affine.translate_y});
  check_range(translate.size() == 2, t.field("affine_translate"), "expected [x, y]");
  a.affine.translate_x = translate[0];
  a.affine.translate_y = translate[1];
  const auto crop = t.numbers("crop_scale", {a.crop.scale_min, a.crop.scale_max});
  check_range(crop.size() == 2 && crop[0] > 0 && crop[0] <= crop[1] && crop[1] <= 1, t.field("crop_scale"),
              "expected [min, max] within (0, 1]");
  a.crop.scale_min = crop[0];
  a.crop.scale_max = crop[1];
  t.finish();
}

fs::path output_root_for(const fs::path& base_dir) {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return fs::path(env);
  return base_dir;
}

std::string cell_key(const std::string& dataset, const std::string& task, double fraction) {
  return dataset + "/" + task + "/" + format_fraction(fraction);
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json::object();
  }
}

void write_json_file(const nlohmann::json& doc, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void say(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << std::endl;
}

ResultRow to_result_row(const SweepRow& r) {
  return {r.dataset, r.task, r.fraction, r.report.metrics.accuracy, r.report.metrics.precision,
          r.report.metrics.recall, r.report.metrics.f1};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  ConfusionMatrix m = j.at("confusion").get<ConfusionMatrix>();
  const auto kind = j.at("task").get<std::string>() == "binary" ? LabelScheme::Kind::binary : LabelScheme::Kind::multiclass;
  return make_report(m, kind, j.at("dataset").get<std::string>(), j.at("fraction").get<double>());
}

}  // namespace

std::string task_name(Task task) { return task == Task::binary ? "binary" : "multiclass"; }

Task task_from_string(const std::string& name) {
  if (name == "binary") return Task::binary;
  if (name == "multiclass") return Task::multiclass;
  throw ValidationError("unknown task '" + name + "' (expected binary or multiclass)");
}

std::string ExperimentConfig::fingerprint() const { return config_fingerprint(document); }

FinetuneConfig ExperimentConfig::cell_config(const TargetConfig& target, Task task, double fraction,
                                             int num_grades) const {
  FinetuneConfig c = finetune;
  c.scheme = task == Task::binary ? LabelScheme::binary(positive_threshold) : LabelScheme::multiclass(num_grades);
  c.classifier.num_classes = static_cast<std::size_t>(c.scheme.num_classes);
  c.lars = task == Task::binary ? finetune_lars_binary : finetune_lars_multiclass;
  c.fraction = fraction;
  c.dataset_name = target.name;
  return c;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const fs::path& base_dir, bool check_paths) {
  ExperimentConfig cfg;
  cfg.document = doc;
  Table root(&doc, "");
  const auto seed = root.raw("seed");
  if (seed) {
    if (!seed->is_number_integer() || seed->get<long long>() < 0)
      throw ValidationError("seed: expected a non-negative integer");
    cfg.seed = seed->get<std::uint64_t>();
  }
  const std::string out = root.text("output_dir", "runs/default");
  cfg.output_dir = resolve(output_root_for(base_dir), out);
  cfg.fractions = root.numbers("fractions", cfg.fractions);
  check_range(!cfg.fractions.empty(), "fractions", "must not be empty");
  for (double f : cfg.fractions) check_range(f > 0 && f <= 1, "fractions", "every fraction must lie in (0, 1]");
  std::sort(cfg.fractions.begin(), cfg.fractions.end());
  check_range(std::adjacent_find(cfg.fractions.begin(), cfg.fractions.end()) == cfg.fractions.end(), "fractions",
              "contains duplicates");

  Table pretext = root.sub("pretext");
  if (!pretext.present()) throw ValidationError("pretext: missing section");
  cfg.source_name = pretext.text("dataset", "source");
  const std::string manifest = pretext.text("manifest", "");
  if (manifest.empty()) throw ValidationError("pretext.manifest: missing field");
  cfg.source_manifest = resolve(base_dir, manifest);
  require_file(cfg.source_manifest, "pretext.manifest", check_paths);
  cfg.source_num_grades = static_cast<int>(pretext.count("num_grades", 0));
  if (pretext.has("checkpoint")) {
    cfg.pretext_checkpoint = resolve(base_dir, pretext.text("checkpoint", ""));
    require_file(*cfg.pretext_checkpoint, "pretext.checkpoint", check_paths);
  }
  PretextConfig& p = cfg.pretext;
  p.batch_size = pretext.count("batch_size", p.batch_size);
  check_range(p.batch_size >= 2, "pretext.batch_size", "must be at least 2");
  p.epochs = pretext.count("epochs", p.epochs);
  check_range(p.epochs >= 1, "pretext.epochs", "must be at least 1");
  p.temperature = pretext.number("temperature", p.temperature);
  check_range(p.temperature > 0, "pretext.temperature", "must be positive");
  p.cosine_schedule = pretext.flag("cosine_schedule", p.cosine_schedule);
  p.checkpoint_every = pretext.count("checkpoint_every", p.checkpoint_every);
  p.encoder = read_encoder(pretext.sub("encoder"));
  {
    Table proj = pretext.sub("projection");
    p.projection.layer_dims = proj.counts("layer_dims", p.projection.layer_dims);
    check_range(!p.projection.layer_dims.empty(), "pretext.projection.layer_dims", "must not be empty");
    proj.finish();
  }
  {
    Table opt = pretext.sub("optimizer");
    p.optimizer = read_lars(opt, LarsHyper::binary_defaults());
    opt.finish();
  }
  p.augment.output_size = p.encoder.input_size;
  p.augment.crop.height = p.augment.crop.width = p.encoder.input_size;
  read_augment(pretext.sub("augment"), p.augment);
  pretext.finish();
  p.seed = cfg.seed;

  Table fine = root.sub("finetune");
  FinetuneConfig& f = cfg.finetune;
  f.batch_size = fine.count("batch_size", f.batch_size);
  check_range(f.batch_size >= 1, "finetune.batch_size", "must be positive");
  f.epochs = fine.count("epochs", f.epochs);
  check_range(f.epochs >= 1, "finetune.epochs", "must be at least 1");
  try {
    f.mode = finetune_mode_from_string(fine.text("mode", to_string(f.mode)));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("finetune: ") + e.what());
  }
  f.freeze_batch_norm = fine.flag("freeze_batch_norm", f.freeze_batch_norm);
  f.patience = fine.count("patience", f.patience);
  f.cosine_schedule = fine.flag("cosine_schedule", f.cosine_schedule);
  f.classifier.hidden_dim = fine.count("hidden_dim", f.classifier.hidden_dim);
  cfg.positive_threshold = static_cast<int>(fine.count("positive_threshold", 1));
  check_range(cfg.positive_threshold >= 1, "finetune.positive_threshold", "must be at least 1");
  const auto ratios = fine.numbers("split", {cfg.split.train, cfg.split.val, cfg.split.test});
  check_range(ratios.size() == 3 && std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) < 1e-9 && ratios[0] > 0 &&
                  ratios[2] > 0 && ratios[1] >= 0,
              "finetune.split", "expected [train, val, test] summing to 1");
  cfg.split = {ratios[0], ratios[1], ratios[2]};
  {
    Table opt = fine.sub("optimizer");
    try {
      f.optimizer = optimizer_kind_from_string(opt.text("kind", to_string(f.optimizer)));
    } catch (const ValidationError& e) {
      throw ValidationError(opt.field("kind") + ": " + e.what());
    }
    cfg.finetune_lars_binary = read_lars(opt, LarsHyper::binary_defaults());
    cfg.finetune_lars_multiclass = cfg.finetune_lars_binary;
    if (!opt.has("base_lr")) cfg.finetune_lars_multiclass.base_lr = LarsHyper::multiclass_defaults().base_lr;
    if (!opt.has("weight_decay"))
      cfg.finetune_lars_multiclass.weight_decay = LarsHyper::multiclass_defaults().weight_decay;
    f.sgd_lr = opt.number("lr", f.sgd_lr);
    f.sgd_momentum = opt.number("sgd_momentum", f.sgd_momentum);
    f.sgd_weight_decay = opt.number("sgd_weight_decay", f.sgd_weight_decay);
    check_range(f.sgd_lr >= 0, "finetune.optimizer.lr", "must be non-negative");
    check_range(f.sgd_momentum >= 0 && f.sgd_momentum < 1, "finetune.optimizer.sgd_momentum", "must lie in [0, 1)");
    opt.finish();
  }
  f.augment = p.augment;
  f.augment.output_size = p.encoder.input_size;
  read_augment(fine.sub("augment"), f.augment);
  fine.finish();
  f.seed = derive_seed(cfg.seed, 2);
  f.lars = cfg.finetune_lars_binary;

  Table targets = root.sub("target");
  if (!targets.present() || doc["target"].empty()) throw ValidationError("target: at least one [target.<name>] section is required");
  for (const auto& [name, node] : doc["target"].items()) {
    Table t = targets.sub(name);
    TargetConfig tc;
    tc.name = name;
    const std::string m = t.text("manifest", "");
    if (m.empty()) throw ValidationError(t.field("manifest") + ": missing field");
    tc.manifest = resolve(base_dir, m);
    require_file(tc.manifest, t.field("manifest"), check_paths);
    tc.num_grades = static_cast<int>(t.count("num_grades", 0));
    tc.tasks.clear();
    for (const auto& task : t.texts("tasks", {"binary"})) {
      try {
        tc.tasks.push_back(task_from_string(task));
      } catch (const ValidationError& e) {
        throw ValidationError(t.field("tasks") + ": " + e.what());
      }
    }
    check_range(!tc.tasks.empty(), t.field("tasks"), "must not be empty");
    t.finish();
    cfg.targets.push_back(std::move(tc));
  }
  targets.finish();
  root.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path, bool check_paths) {
  return parse_experiment_config(load_toml(path), path.parent_path().empty() ? fs::path(".") : path.parent_path(),
                                 check_paths);
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".lock") {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw LockError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

DatasetManifest load_target_manifest(const TargetConfig& target) {
  return load_manifest(target.manifest, target.name, target.num_grades);
}

SplitSpec experiment_split(const ExperimentConfig& config, const DatasetManifest& labeled, const std::string& dataset,
                           Task task) {
  return stratified_split(labeled, config.split, derive_seed(derive_seed(config.seed, fnv1a64(dataset)), static_cast<std::uint64_t>(task)));
}

Checkpoint obtain_pretext_checkpoint(const ExperimentConfig& config, bool allow_pretrain, std::ostream* log) {
  if (config.pretext_checkpoint) {
    say(log, "using pretext checkpoint " + config.pretext_checkpoint->string());
    return load_checkpoint(*config.pretext_checkpoint);
  }
  const fs::path dir = config.output_dir / "pretext";
  const fs::path cached = dir / "pretext_final.ckpt";
  const std::string run_fp = config_fingerprint(config.pretext.to_json());
  if (fs::exists(cached)) {
    Checkpoint ckpt = load_checkpoint(cached);
    if (ckpt.metadata.contains("run") && ckpt.metadata["run"].value("fingerprint", "") == run_fp) {
      say(log, "reusing pretext checkpoint " + cached.string());
      return ckpt;
    }
  }
  if (!allow_pretrain) {
    throw ValidationError("pretext.checkpoint: no pretext checkpoint configured or cached; pass --pretrain to train one");
  }
  const DatasetManifest source = load_manifest(config.source_manifest, config.source_name, config.source_num_grades);
  PretextConfig p = config.pretext;
  p.output_dir = dir;
  say(log, "pretraining on " + config.source_name + " (" + std::to_string(source.samples.size()) + " images)");
  PretrainResult result = pretrain(p, ManifestSource(source));
  say(log, "pretext final loss " + std::to_string(result.epoch_losses.back()));
  return std::move(result.checkpoint);
}

SweepResult run_sweep(const ExperimentConfig& config, const SweepOptions& options) {
  OutputLock lock(config.output_dir);
  SweepResult result;
  result.config_fingerprint = config.fingerprint();
  result.seed = config.seed;
  const Checkpoint checkpoint = obtain_pretext_checkpoint(config, options.pretrain, options.log);
  result.checkpoint_fingerprint = checkpoint.fingerprint();

  const fs::path ledger_path = config.output_dir / "sweep_cells.json";
  nlohmann::json ledger = read_json_file(ledger_path);
  if (ledger.value("config_fingerprint", "") != result.config_fingerprint ||
      ledger.value("checkpoint_fingerprint", "") != result.checkpoint_fingerprint) {
    ledger = {{"config_fingerprint", result.config_fingerprint},
              {"checkpoint_fingerprint", result.checkpoint_fingerprint},
              {"cells", nlohmann::json::object()}};
  }
  fs::create_directories(config.output_dir / "splits");

  for (const auto& target : config.targets) {
    DatasetManifest manifest;
    try {
      manifest = load_target_manifest(target);
    } catch (const Error& e) {
      for (Task task : target.tasks)
        for (double f : config.fractions) result.failures.push_back({target.name, task_name(task), f, e.what()});
      say(options.log, "target " + target.name + " failed: " + e.what());
      continue;
    }
    for (Task task : target.tasks) {
      const std::string tname = task_name(task);
      SplitSpec split;
      try {
        const FinetuneConfig probe = config.cell_config(target, task, 1.0, manifest.num_grades);
        probe.scheme.validate(manifest.num_grades);
        split = experiment_split(config, apply_label_scheme(manifest, probe.scheme), target.name, task);
        save_split(split, config.output_dir / "splits" / (target.name + "_" + tname + ".json"));
      } catch (const Error& e) {
        for (double f : config.fractions) result.failures.push_back({target.name, tname, f, e.what()});
        say(options.log, "split for " + target.name + "/" + tname + " failed: " + e.what());
        continue;
      }
      for (double fraction : config.fractions) {
        const std::string key = cell_key(target.name, tname, fraction);
        auto& cell = ledger["cells"][key];
        if (cell.is_object() && cell.value("status", "") == "done") {
          result.rows.push_back({target.name, tname, fraction, report_from_json(cell["report"])});
          ++result.resumed_cells;
          say(options.log, "cell " + key + ": resumed");
          continue;
        }
        try {
          FinetuneConfig fc = config.cell_config(target, task, fraction, manifest.num_grades);
          fc.output_dir = config.output_dir / "cells" / (target.name + "_" + tname + "_" + format_fraction(fraction));
          FinetuneResult r = finetune(fc, checkpoint, split, manifest);
          cell = {{"status", "done"}, {"report", r.report.to_json()}};
          result.rows.push_back({target.name, tname, fraction, r.report});
          say(options.log, "cell " + key + ": accuracy " + r.report.metrics.accuracy.str());
        } catch (const Error& e) {
          cell = {{"status", "failed"}, {"error", e.what()}};
          result.failures.push_back({target.name, tname, fraction, e.what()});
          say(options.log, "cell " + key + " failed: " + e.what());
        }
        write_json_file(ledger, ledger_path);
      }
    }
  }
  write_json_file(ledger, ledger_path);

  std::vector<ResultRow> rows;
  for (const auto& r : result.rows) rows.push_back(to_result_row(r));
  result.results_csv = config.output_dir / "results.csv";
  write_results_csv(rows, result.results_csv);
  write_json_file({{"config_fingerprint", result.config_fingerprint},
                   {"checkpoint_fingerprint", result.checkpoint_fingerprint},
                   {"seed", result.seed},
                   {"rows", rows.size()},
                   {"failed_cells", result.failures.size()}},
                  config.output_dir / "results.csv.meta.json");
  const fs::path failures_path = config.output_dir / "failures.csv";
  if (result.failures.empty()) {
    fs::remove(failures_path);
  } else {
    std::ofstream out(failures_path, std::ios::binary | std::ios::trunc);
    out << "dataset,task,fraction,error\n";
    for (const auto& f : result.failures) {
      std::string err = f.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      out << f.dataset << ',' << f.task << ',' << format_fraction(f.fraction) << ',' << err << '\n';
    }
  }
  return result;
}

}  // namespace cdssl
