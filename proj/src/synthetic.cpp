#include "cdssl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cdssl/errors.hpp"
#include "cdssl/rng.hpp"

namespace cdssl {

namespace {

constexpr int kDistractorMax = 10;

struct Vessel {
  double x0, y0, dx, dy, length;
};

double segment_distance(const Vessel& v, double x, double y) {
  const double t = std::clamp((x - v.x0) * v.dx + (y - v.y0) * v.dy, 0.0, v.length);
  const double px = v.x0 + t * v.dx, py = v.y0 + t * v.dy;
  return std::hypot(x - px, y - py);
}

std::string sample_id(int class_index, int image_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%d_%04d", class_index, image_index);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ValidationError("synthetic corpus needs at least 2 classes");
  if (images_per_class < 1) throw ValidationError("synthetic corpus needs images_per_class >= 1");
  if (image_size < 32) throw ValidationError("synthetic image size must be >= 32");
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

SyntheticImage render_synthetic_image(const SyntheticSpec& spec, int class_index, int image_index) {
  spec.validate();
  const double size = spec.image_size;
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(class_index) * 1000003ULL +
                                     static_cast<std::uint64_t>(image_index)));

  const double cx = size / 2 + rng.uniform(-0.04, 0.04) * size;
  const double cy = size / 2 + rng.uniform(-0.04, 0.04) * size;
  const double radius = rng.uniform(0.40, 0.46) * size;
  const double brightness = rng.uniform(0.45, 1.0);
  const double base[3] = {0.60 * brightness * rng.uniform(0.9, 1.1),
                          0.28 * brightness * rng.uniform(0.9, 1.1),
                          0.14 * brightness * rng.uniform(0.9, 1.1)};

  const double od_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double od_x = cx + 0.55 * radius * std::cos(od_angle);
  const double od_y = cy + 0.55 * radius * std::sin(od_angle);
  const double od_radius = rng.uniform(0.16, 0.20) * radius;

  std::vector<Vessel> vessels;
  const int vessel_count = 3 + static_cast<int>(rng.below(3));
  for (int v = 0; v < vessel_count; ++v) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    vessels.push_back({od_x, od_y, std::cos(a), std::sin(a), rng.uniform(0.6, 1.1) * radius});
  }

  struct Blob {
    double x, y, r;
  };
  std::vector<Blob> blobs;
  if (class_index > 0) {
    const int count = 3 * class_index + static_cast<int>(rng.below(3));
    int attempts = 0;
    while (static_cast<int>(blobs.size()) < count && attempts < 10000) {
      ++attempts;
      const double r = rng.uniform(0.025, 0.045) * size;
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = 0.8 * radius * std::sqrt(rng.uniform());
      const Blob b{cx + dist * std::cos(ang), cy + dist * std::sin(ang), r};
      const bool overlaps = std::any_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        return std::hypot(o.x - b.x, o.y - b.y) < o.r + b.r + 1.0;
      });
      if (!overlaps) blobs.push_back(b);
    }
  }

  // Dimmer spots of lesion size in every class; their luma stays below the lesion floor.
  std::vector<Blob> distractors;
  const int distractor_count = static_cast<int>(rng.below(kDistractorMax + 1));
  for (int d = 0; d < distractor_count; ++d) {
    const double r = rng.uniform(0.03, 0.055) * size;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dist = 0.8 * radius * std::sqrt(rng.uniform());
    distractors.push_back({cx + dist * std::cos(ang), cy + dist * std::sin(ang), r});
  }
  const double distractor_gain = rng.uniform(0.85, 1.0);

  SyntheticImage out;
  out.image = Image(spec.image_size, spec.image_size);
  for (int y = 0; y < spec.image_size; ++y) {
    for (int x = 0; x < spec.image_size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double r = std::hypot(px - cx, py - cy);
      const double inside = std::clamp(radius - r + 0.5, 0.0, 1.0);
      double rgb[3] = {0.0, 0.0, 0.0};
      if (inside > 0.0) {
        const double vignette = 1.0 - 0.45 * (r / radius) * (r / radius);
        for (int c = 0; c < 3; ++c) rgb[c] = base[c] * vignette;

        double vessel_shade = 1.0;
        for (const auto& v : vessels) {
          const double d = segment_distance(v, px, py);
          if (d < 1.2) vessel_shade = std::min(vessel_shade, 0.65 + 0.35 * d / 1.2);
        }
        for (double& ch : rgb) ch *= vessel_shade;

        const double od = std::hypot(px - od_x, py - od_y) / od_radius;
        if (od < 1.0) {
          const double w = 1.0 - od * od;
          const double add[3] = {0.30, 0.25, 0.15};
          for (int c = 0; c < 3; ++c) rgb[c] += add[c] * w;
        }

        for (const auto& b : distractors) {
          const double alpha = std::clamp((b.r - std::hypot(px - b.x, py - b.y)) / 0.75 + 0.5, 0.0, 1.0);
          if (alpha > 0.0) {
            const double spot[3] = {0.88 * distractor_gain, 0.70 * distractor_gain, 0.45 * distractor_gain};
            for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - alpha) * rgb[c] + alpha * spot[c];
          }
        }
        for (const auto& b : blobs) {
          const double alpha = std::clamp((b.r - std::hypot(px - b.x, py - b.y)) / 0.75 + 0.5, 0.0, 1.0);
          if (alpha > 0.0) {
            const double lesion[3] = {0.95, 0.86, 0.6};
            for (int c = 0; c < 3; ++c) rgb[c] = (1.0 - alpha) * rgb[c] + alpha * lesion[c];
          }
        }
        for (double& ch : rgb) ch *= inside;
      }
      for (int c = 0; c < 3; ++c) {
        out.image.at(y, x, c) = std::clamp(rgb[c] + 0.015 * rng.normal(), 0.0, 1.0);
      }
    }
  }

  for (const auto& b : blobs) {
    BlobBox box;
    box.x0 = std::max(0, static_cast<int>(std::floor(b.x - b.r - 1.0)));
    box.y0 = std::max(0, static_cast<int>(std::floor(b.y - b.r - 1.0)));
    box.x1 = std::min(spec.image_size - 1, static_cast<int>(std::ceil(b.x + b.r + 1.0)));
    box.y1 = std::min(spec.image_size - 1, static_cast<int>(std::ceil(b.y + b.r + 1.0)));
    out.blobs.push_back(box);
  }
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec,
                                          const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  SyntheticCorpus corpus;
  corpus.manifest.name = spec.name;
  corpus.manifest.root = out_dir;
  corpus.manifest.num_grades = spec.num_classes;
  corpus.manifest.num_classes = spec.num_classes;

  std::ofstream blob_csv(out_dir / "blobs.csv", std::ios::binary);
  if (!blob_csv) throw IoError("cannot write " + (out_dir / "blobs.csv").string());
  blob_csv << "id,x0,y0,x1,y1\n";

  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.images_per_class; ++i) {
      const std::string id = sample_id(c, i);
      SyntheticImage rendered = render_synthetic_image(spec, c, i);
      const std::string rel = "images/" + id + ".png";
      write_png(rendered.image, out_dir / rel);
      for (const auto& b : rendered.blobs)
        blob_csv << id << ',' << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1 << '\n';
      corpus.manifest.samples.push_back({id, rel, c, c, SplitPart::unassigned});
      corpus.blobs[id] = std::move(rendered.blobs);
    }
  }
  write_manifest(corpus.manifest, out_dir / "manifest.csv");
  return corpus;
}

std::map<std::string, std::vector<BlobBox>> load_blob_annotations(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read blob annotations " + path.string());
  std::map<std::string, std::vector<BlobBox>> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string id;
    BlobBox b;
    if (!(fields >> id >> b.x0 >> b.y0 >> b.x1 >> b.y1)) {
      throw FormatError("malformed blob annotation line: " + line);
    }
    out[id].push_back(b);
  }
  return out;
}

}  // namespace cdssl
