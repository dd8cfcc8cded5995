#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cdssl/datasets.hpp"
#include "cdssl/image.hpp"

namespace cdssl {

/// Desk-scale stand-in for a fundus corpus: a textured orange disc on black
/// with an optic-disc highlight and vessels; class k > 0 adds 3k..3k+2 small
/// bright lesion blobs, class 0 has none.
struct SyntheticSpec {
  std::string name = "synthetic";
  int num_classes = 2;
  int images_per_class = 50;
  int image_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Inclusive pixel bounds of one lesion blob.
struct BlobBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// Every lesion blob core has luma above this; nothing else in the image reaches it.
inline constexpr double kLesionLumaFloor = 0.8;

double luma(double r, double g, double b);

struct SyntheticImage {
  Image image;
  std::vector<BlobBox> blobs;
};

SyntheticImage render_synthetic_image(const SyntheticSpec& spec, int class_index, int image_index);

struct SyntheticCorpus {
  DatasetManifest manifest;
  std::map<std::string, std::vector<BlobBox>> blobs;  // by sample id
};

/// Writes images/<id>.png, manifest.csv and blobs.csv under `out_dir`.
/// Grades are the class indices; ids are c<class>_<index>.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec,
                                          const std::filesystem::path& out_dir);

std::map<std::string, std::vector<BlobBox>> load_blob_annotations(
    const std::filesystem::path& path);

}  // namespace cdssl
