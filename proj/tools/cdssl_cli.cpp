#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cdssl/checkpoint.hpp"
#include "cdssl/errors.hpp"
#include "cdssl/experiment.hpp"
#include "cdssl/explain.hpp"
#include "cdssl/report.hpp"
#include "cdssl/synthetic.hpp"
#include "cdssl/trainer.hpp"

namespace fs = std::filesystem;
using namespace cdssl;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailed = 2;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

nlohmann::json describe(const ExperimentConfig& c) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : c.targets) {
    std::vector<std::string> tasks;
    for (Task task : t.tasks) tasks.push_back(task_name(task));
    targets.push_back({{"name", t.name}, {"manifest", t.manifest.string()}, {"num_grades", t.num_grades}, {"tasks", tasks}});
  }
  return {{"fingerprint", c.fingerprint()},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"fractions", c.fractions},
          {"pretext",
           {{"dataset", c.source_name},
            {"manifest", c.source_manifest.string()},
            {"checkpoint", c.pretext_checkpoint ? c.pretext_checkpoint->string() : ""},
            {"config", c.pretext.to_json()}}},
          {"finetune", c.finetune.to_json()},
          {"targets", targets}};
}

/// Provenance line from the sidecar written next to a results CSV.
std::string provenance_for(const fs::path& csv) {
  const fs::path meta = csv.string() + ".meta.json";
  if (!fs::exists(meta)) return {};
  const auto doc = nlohmann::json::parse(read_text(meta), nullptr, false);
  if (doc.is_discarded()) return {};
  return "Config fingerprint " + doc.value("config_fingerprint", std::string("?")) + ", seed " +
         std::to_string(doc.value("seed", 0ull)) + ".";
}

const TargetConfig& find_target(const ExperimentConfig& c, const std::string& name) {
  for (const auto& t : c.targets)
    if (t.name == name) return t;
  throw ValidationError("--target: no [target." + name + "] section in the config");
}

struct Options {
  std::string config;
  bool dry_run = false;
  bool pretrain = false;
  std::string target;
  std::string task = "binary";
  double fraction = 1.0;
  std::string checkpoint;
  std::string manifest;
  std::string dataset;
  int num_grades = 0;
  int threshold = 1;
  std::string split;
  std::string csv;
  std::string out;
  std::vector<std::string> ids;
  int cam_class = -1;
  double alpha = 0.5;
  std::size_t layer = 0;
  bool has_layer = false;
  int classes = 2;
  int per_class = 200;
  int size = 64;
  std::uint64_t seed = 0;
  std::string name = "synthetic";
};

int cmd_pretrain(const Options& o) {
  const ExperimentConfig c = load_experiment_config(o.config);
  if (o.dry_run) {
    std::cout << describe(c).dump(2) << '\n';
    return kOk;
  }
  OutputLock lock(c.output_dir);
  const DatasetManifest source = load_manifest(c.source_manifest, c.source_name, c.source_num_grades);
  PretextConfig p = c.pretext;
  p.output_dir = c.output_dir / "pretext";
  const PretrainResult r = pretrain(p, ManifestSource(source));
  std::cout << "checkpoint " << (p.output_dir / "pretext_final.ckpt").string() << '\n';
  std::printf("final loss %.6f\n", r.epoch_losses.back());
  return kOk;
}

int cmd_finetune(const Options& o) {
  const ExperimentConfig c = load_experiment_config(o.config);
  const TargetConfig& target = find_target(c, o.target);
  const Task task = task_from_string(o.task);
  if (!(o.fraction > 0 && o.fraction <= 1)) throw ValidationError("--fraction: must lie in (0, 1]");
  if (o.dry_run) {
    std::cout << describe(c).dump(2) << '\n';
    return kOk;
  }
  OutputLock lock(c.output_dir);
  const Checkpoint ckpt = o.checkpoint.empty() ? obtain_pretext_checkpoint(c, false, &std::cerr) : load_checkpoint(o.checkpoint);
  const DatasetManifest manifest = load_target_manifest(target);
  FinetuneConfig fc = c.cell_config(target, task, o.fraction, manifest.num_grades);
  fc.scheme.validate(manifest.num_grades);
  const SplitSpec split = experiment_split(c, apply_label_scheme(manifest, fc.scheme), target.name, task);
  fc.output_dir = c.output_dir / "finetune" / (target.name + "_" + task_name(task) + "_" + format_fraction(o.fraction));
  fs::create_directories(fc.output_dir.parent_path());
  save_split(split, fc.output_dir.parent_path() / (target.name + "_" + task_name(task) + "_split.json"));
  const FinetuneResult r = finetune(fc, ckpt, split, manifest);
  std::cout << "checkpoint " << (fc.output_dir / "finetune_final.ckpt").string() << '\n';
  std::cout << r.report.to_json().dump(2) << '\n';
  return kOk;
}

int cmd_evaluate(const Options& o) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const ModelBundle model = model_from_checkpoint(ckpt);
  const DatasetManifest manifest = load_manifest(o.manifest, o.dataset.empty() ? "dataset" : o.dataset, o.num_grades);
  const Task task = task_from_string(o.task);
  const LabelScheme scheme =
      task == Task::binary ? LabelScheme::binary(o.threshold) : LabelScheme::multiclass(manifest.num_grades);
  SplitSpec split;
  if (!o.split.empty()) {
    split = load_split(o.split);
  } else {
    split.test_ids = manifest.ids();
  }
  AugmentConfig augment;
  augment.output_size = model.encoder_config().input_size;
  const MetricsReport report = evaluate(model, split, manifest, scheme, augment);
  std::cout << report.to_json().dump(2) << '\n';
  return kOk;
}

int cmd_sweep(const Options& o) {
  const ExperimentConfig c = load_experiment_config(o.config);
  if (o.dry_run) {
    std::cout << describe(c).dump(2) << '\n';
    return kOk;
  }
  SweepOptions so;
  so.pretrain = o.pretrain;
  so.log = &std::cerr;
  const SweepResult r = run_sweep(c, so);
  std::cout << "results " << r.results_csv.string() << '\n';
  std::cout << r.rows.size() << " cells done (" << r.resumed_cells << " resumed), " << r.failures.size() << " failed\n";
  for (const auto& f : r.failures)
    std::cout << "failed " << f.dataset << "/" << f.task << "/" << format_fraction(f.fraction) << ": " << f.error << '\n';
  return r.failures.empty() ? kOk : kFailed;
}

int cmd_report(const Options& o) {
  const auto rows = read_results_csv(o.csv);
  const std::string md = render_report(rows, provenance_for(o.csv));
  if (o.out.empty()) {
    std::cout << md;
  } else {
    write_text(o.out, md);
    std::cout << "report " << o.out << '\n';
  }
  return kOk;
}

int cmd_plot(const Options& o) {
  const auto rows = read_results_csv(o.csv);
  const fs::path dir = o.out.empty() ? fs::path(o.csv).parent_path() : fs::path(o.out);
  const auto plots = render_plots(rows, provenance_for(o.csv));
  if (plots.empty()) {
    std::cout << "no results to plot\n";
    return kOk;
  }
  for (const auto& p : plots) {
    for (const auto& w : p.warnings) std::cerr << "warning: " << w << '\n';
    const fs::path path = dir / ("label_efficiency_" + p.task + ".svg");
    write_text(path, p.svg);
    std::cout << "chart " << path.string() << '\n';
  }
  return kOk;
}

int cmd_cam(const Options& o) {
  if (!(o.alpha >= 0 && o.alpha <= 1)) throw ValidationError("--alpha: must lie in [0, 1]");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const ModelBundle model = model_from_checkpoint(ckpt);
  if (model.head_kind() != HeadKind::classifier) throw ValidationError("--checkpoint: not a classifier checkpoint");
  const DatasetManifest manifest = load_manifest(o.manifest, o.dataset.empty() ? "dataset" : o.dataset, o.num_grades);
  std::vector<const Sample*> samples;
  for (const auto& id : o.ids) {
    const auto it = std::find_if(manifest.samples.begin(), manifest.samples.end(), [&](const Sample& s) { return s.id == id; });
    if (it == manifest.samples.end()) throw ValidationError("--ids: unknown sample id '" + id + "'");
    samples.push_back(&*it);
  }
  const fs::path dir = o.out.empty() ? fs::path("cam") : fs::path(o.out);
  fs::create_directories(dir);

  // Match evaluation preprocessing: multiclass models saw normalized inputs.
  AugmentConfig augment;
  augment.output_size = model.encoder_config().input_size;
  const Task task = model.num_outputs() == 2 ? Task::binary : Task::multiclass;
  const AugmentationPipeline pre = build_finetune_pipeline(augment, task).evaluation_view();
  GradCamOptions opts;
  opts.preprocess = &pre;
  if (o.has_layer) opts.layer = o.layer;

  nlohmann::json meta{{"checkpoint_fingerprint", ckpt.fingerprint()}, {"alpha", o.alpha}, {"files", nlohmann::json::array()}};
  for (const Sample* s : samples) {
    const Image image = load_image(manifest, *s);
    int cls = o.cam_class;
    if (cls < 0) {
      const Image x = pre.apply(image, 0);
      const Tensor logits = forward_classify(model, images_to_batch(std::span<const Image>(&x, 1)));
      cls = 0;
      for (std::size_t k = 1; k < logits.dim(1); ++k)
        if (logits.at(0, k) > logits.at(0, static_cast<std::size_t>(cls))) cls = static_cast<int>(k);
    }
    const Heatmap heat = grad_cam(model, image, cls, opts);
    const fs::path path = dir / (s->id + "_cam_" + std::to_string(cls) + ".png");
    write_overlay(heat, image, o.alpha, path);
    meta["files"].push_back({{"id", s->id}, {"class", cls}, {"file", path.filename().string()}, {"layer", heat.layer}});
    std::cout << "cam " << path.string() << '\n';
  }
  write_text(dir / "cam.meta.json", meta.dump(2) + "\n");
  return kOk;
}

int cmd_synth(const Options& o) {
  SyntheticSpec spec;
  spec.name = o.name;
  spec.num_classes = o.classes;
  spec.images_per_class = o.per_class;
  spec.image_size = o.size;
  spec.seed = o.seed;
  spec.validate();
  if (o.out.empty()) throw ValidationError("--out: required");
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, o.out);
  std::cout << "manifest " << (fs::path(o.out) / "manifest.csv").string() << " (" << corpus.manifest.samples.size()
            << " images)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive self-supervised pretraining and label-efficient transfer for fundus images"};
  app.require_subcommand(1);
  Options o;

  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining on the source manifest");
  pre->add_option("config", o.config, "experiment config (TOML)")->required();
  pre->add_flag("--dry-run", o.dry_run, "validate and print the resolved config");

  auto* fine = app.add_subcommand("finetune", "fine-tune one target/task/fraction cell");
  fine->add_option("config", o.config, "experiment config (TOML)")->required();
  fine->add_option("--target", o.target, "target dataset section name")->required();
  fine->add_option("--task", o.task, "binary or multiclass");
  fine->add_option("--fraction", o.fraction, "label fraction in (0, 1]");
  fine->add_option("--checkpoint", o.checkpoint, "pretext checkpoint (default: configured or cached)");
  fine->add_flag("--dry-run", o.dry_run, "validate and print the resolved config");

  auto* eval = app.add_subcommand("evaluate", "evaluate a classifier checkpoint");
  eval->add_option("--checkpoint", o.checkpoint)->required();
  eval->add_option("--manifest", o.manifest)->required();
  eval->add_option("--dataset", o.dataset, "dataset name (selects the registered grade count)");
  eval->add_option("--num-grades", o.num_grades);
  eval->add_option("--task", o.task);
  eval->add_option("--threshold", o.threshold, "binary: grade >= threshold is positive");
  eval->add_option("--split", o.split, "split JSON; its test ids are evaluated (default: all samples)");

  auto* sweep = app.add_subcommand("sweep", "label-efficiency sweep over targets, tasks and fractions");
  sweep->add_option("config", o.config, "experiment config (TOML)")->required();
  sweep->add_flag("--pretrain", o.pretrain, "pretrain when no checkpoint is configured or cached");
  sweep->add_flag("--dry-run", o.dry_run, "validate and print the resolved config");

  auto* report = app.add_subcommand("report", "markdown tables from a results CSV");
  report->add_option("csv", o.csv)->required();
  report->add_option("-o,--output", o.out, "write to a file instead of stdout");

  auto* plot = app.add_subcommand("plot", "label-efficiency charts from a results CSV");
  plot->add_option("csv", o.csv)->required();
  plot->add_option("-o,--out-dir", o.out, "directory for the SVG files (default: next to the CSV)");

  auto* cam = app.add_subcommand("cam", "Grad-CAM overlays for selected samples");
  cam->add_option("--checkpoint", o.checkpoint)->required();
  cam->add_option("--manifest", o.manifest)->required();
  cam->add_option("--dataset", o.dataset);
  cam->add_option("--num-grades", o.num_grades);
  cam->add_option("--ids", o.ids, "sample ids")->required()->delimiter(',');
  cam->add_option("--class", o.cam_class, "target class (default: predicted)");
  cam->add_option("--alpha", o.alpha, "heatmap opacity");
  cam->add_option("--layer", o.layer, "encoder block (default: last)")->each([&](const std::string&) { o.has_layer = true; });
  cam->add_option("-o,--out-dir", o.out);

  auto* synth = app.add_subcommand("synth", "generate the synthetic fundus-like corpus");
  synth->add_option("-o,--out", o.out)->required();
  synth->add_option("--classes", o.classes);
  synth->add_option("--per-class", o.per_class);
  synth->add_option("--size", o.size);
  synth->add_option("--seed", o.seed);
  synth->add_option("--name", o.name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(o);
    if (fine->parsed()) return cmd_finetune(o);
    if (eval->parsed()) return cmd_evaluate(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (report->parsed()) return cmd_report(o);
    if (plot->parsed()) return cmd_plot(o);
    if (cam->parsed()) return cmd_cam(o);
    if (synth->parsed()) return cmd_synth(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const FingerprintError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kInvalid;
}
