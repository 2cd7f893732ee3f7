#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "orchard/image.hpp"
#include "orchard/rng.hpp"

namespace orchard {

struct LabeledPatch {
  ImageU8 pixels;  // 227x227
  int count_label = 0;
  std::string source_image;
  Box box;
};

struct AugmentationPolicy {
  bool horizontal_flip = true;
  double rotation_range_deg = 5.0;     // sampled in [-range, +range]
  double jitter_scale_lo = 0.8;        // per-channel multiplicative jitter
  double jitter_scale_hi = 1.2;

  void validate() const;  // rotation within +-10, jitter scales within [0.7, 1.3]
};

// One concrete draw from the policy. Applying the same spec twice gives
// identical pixels.
struct AugmentSpec {
  bool flip = false;
  double rotation_deg = 0.0;
  std::array<double, 3> channel_scale{1.0, 1.0, 1.0};
};

AugmentSpec sample_augment(const AugmentationPolicy& policy, Rng& rng);
ImageU8 apply_augment(const ImageU8& patch, const AugmentSpec& spec);

// Crop a box out of an RGB image and stretch it (bilinear, aspect ratio not
// preserved) to 227x227.
ImageU8 crop_and_resize(const ImageU8& image, const Box& box);

// n augmented variants; labels are never touched by construction.
std::vector<LabeledPatch> augment(const LabeledPatch& patch, const AugmentationPolicy& policy,
                                  int n, std::uint64_t seed);

// --- manifests -----------------------------------------------------------

struct ManifestRow {
  std::string path;
  int count = 0;
  std::string split;  // train | val | test
  std::string source_image;
  Box box;

  bool operator==(const ManifestRow&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  std::vector<const ManifestRow*> split(const std::string& name) const;
  std::array<int, 7> class_histogram(const std::string& split) const;
  void validate() const;  // unique paths, labels 0..6, known split names
};

void save_manifest_csv(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest_csv(const std::string& path);

// Raw annotation: a labeled box on a source image.
struct Annotation {
  std::string source_image;
  Box box;
  int count = 0;
};

std::vector<Annotation> load_annotations_csv(const std::string& path);
void save_annotations_csv(const std::string& path, const std::vector<Annotation>& annotations);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// A planned dataset: manifest rows plus the augmentation needed to
// materialize each row (empty for pass-through crops).
struct BuiltDataset {
  DatasetManifest manifest;
  std::vector<std::optional<AugmentSpec>> augments;  // parallel to manifest.rows
};

// Splits by source image (never by patch), then oversamples minority classes
// in the training split with augmentation until every class holds
// target_per_class patches (+-1 via the explicit per-class targets overload).
// Classes listed in absent_classes may be empty; any other empty class is an
// error. Deterministic given seed.
BuiltDataset build_balanced_dataset(const std::vector<Annotation>& annotations,
                                    const AugmentationPolicy& policy, int target_per_class,
                                    std::uint64_t seed, const SplitRatios& ratios = {},
                                    const std::vector<int>& absent_classes = {});

BuiltDataset build_balanced_dataset(const std::vector<Annotation>& annotations,
                                    const AugmentationPolicy& policy,
                                    const std::array<int, 7>& per_class_targets,
                                    std::uint64_t seed, const SplitRatios& ratios = {},
                                    const std::vector<int>& absent_classes = {});

// Spread a total over the classes present so the histogram is uniform
// within +-1 and sums exactly to target_total.
std::array<int, 7> per_class_targets(int target_total, const std::vector<int>& absent_classes = {});

// Writes every planned patch PNG under out_dir. `load_image` maps a source
// image path to pixels (caching is the caller's business).
void materialize_dataset(const BuiltDataset& built, const std::string& out_dir,
                         const std::function<const ImageU8&(const std::string&)>& load_image);

}  // namespace orchard
