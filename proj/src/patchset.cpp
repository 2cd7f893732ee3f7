#include "orchard/patchset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "orchard/errors.hpp"

namespace fs = std::filesystem;

namespace orchard {

void AugmentationPolicy::validate() const {
  if (rotation_range_deg < 0 || rotation_range_deg > 10)
    throw InvalidInput("augmentation rotation range must lie within [-10, +10] degrees");
  if (jitter_scale_lo < 0.7 || jitter_scale_hi > 1.3 || jitter_scale_lo > jitter_scale_hi)
    throw InvalidInput("augmentation jitter scales must lie within [0.7, 1.3]");
}

AugmentSpec sample_augment(const AugmentationPolicy& policy, Rng& rng) {
  AugmentSpec spec;
  spec.flip = policy.horizontal_flip && rng.bernoulli(0.5);
  spec.rotation_deg = policy.rotation_range_deg > 0
                          ? rng.uniform(-policy.rotation_range_deg, policy.rotation_range_deg)
                          : 0.0;
  for (auto& s : spec.channel_scale) s = rng.uniform(policy.jitter_scale_lo, policy.jitter_scale_hi);
  return spec;
}

ImageU8 apply_augment(const ImageU8& patch, const AugmentSpec& spec) {
  ImageU8 out = spec.flip ? flip_horizontal(patch) : patch;
  if (spec.rotation_deg != 0.0) out = rotate_degrees(out, spec.rotation_deg);
  if (spec.channel_scale != std::array<double, 3>{1.0, 1.0, 1.0}) {
    for (std::size_t i = 0; i < out.data.size(); i += 3)
      for (int c = 0; c < 3; ++c) {
        double v = out.data[i + c] * spec.channel_scale[c];
        out.data[i + c] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
  }
  return out;
}

ImageU8 crop_and_resize(const ImageU8& image, const Box& box) {
  if (box.width <= 0 || box.height <= 0) throw InvalidInput("crop_and_resize: zero-area box");
  return resize_bilinear(crop(image, box), 227, 227);
}

std::vector<LabeledPatch> augment(const LabeledPatch& patch, const AugmentationPolicy& policy,
                                  int n, std::uint64_t seed) {
  policy.validate();
  Rng rng(seed);
  std::vector<LabeledPatch> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    AugmentSpec spec = sample_augment(policy, rng);
    LabeledPatch p;
    p.pixels = apply_augment(patch.pixels, spec);
    p.count_label = patch.count_label;
    p.source_image = patch.source_image;
    p.box = patch.box;
    out.push_back(std::move(p));
  }
  return out;
}

// --- manifest ------------------------------------------------------------

std::vector<const ManifestRow*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows)
    if (r.split == name) out.push_back(&r);
  return out;
}

std::array<int, 7> DatasetManifest::class_histogram(const std::string& split_name) const {
  std::array<int, 7> h{};
  for (const auto& r : rows)
    if (r.split == split_name) ++h[r.count];
  return h;
}

void DatasetManifest::validate() const {
  std::set<std::string> paths;
  for (const auto& r : rows) {
    if (r.count < 0 || r.count > 6)
      throw InvalidInput("manifest: count label out of range 0..6: " + std::to_string(r.count));
    if (r.split != "train" && r.split != "val" && r.split != "test")
      throw InvalidInput("manifest: unknown split '" + r.split + "'");
    if (!paths.insert(r.path).second)
      throw InvalidInput("manifest: duplicate patch path " + r.path);
  }
}

void save_manifest_csv(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "path,count,split,source_image,x,y,w,h\n";
  for (const auto& r : manifest.rows)
    f << r.path << ',' << r.count << ',' << r.split << ',' << r.source_image << ',' << r.box.x
      << ',' << r.box.y << ',' << r.box.width << ',' << r.box.height << '\n';
  if (!f) throw IoError("failed writing " + path);
}

DatasetManifest load_manifest_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "path,count,split,source_image,x,y,w,h")
    throw IoError("manifest " + path + ": bad header");
  DatasetManifest m;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestRow r;
    std::string field;
    std::getline(ss, r.path, ',');
    std::getline(ss, field, ',');
    r.count = std::stoi(field);
    std::getline(ss, r.split, ',');
    std::getline(ss, r.source_image, ',');
    std::getline(ss, field, ',');
    r.box.x = std::stoi(field);
    std::getline(ss, field, ',');
    r.box.y = std::stoi(field);
    std::getline(ss, field, ',');
    r.box.width = std::stoi(field);
    std::getline(ss, field, ',');
    r.box.height = std::stoi(field);
    m.rows.push_back(std::move(r));
  }
  m.validate();
  return m;
}

std::vector<Annotation> load_annotations_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "source_image,x,y,w,h,count")
    throw IoError("annotations " + path + ": bad header");
  std::vector<Annotation> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    Annotation a;
    std::string field;
    std::getline(ss, a.source_image, ',');
    std::getline(ss, field, ',');
    a.box.x = std::stoi(field);
    std::getline(ss, field, ',');
    a.box.y = std::stoi(field);
    std::getline(ss, field, ',');
    a.box.width = std::stoi(field);
    std::getline(ss, field, ',');
    a.box.height = std::stoi(field);
    std::getline(ss, field, ',');
    a.count = std::stoi(field);
    out.push_back(std::move(a));
  }
  return out;
}

void save_annotations_csv(const std::string& path, const std::vector<Annotation>& annotations) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "source_image,x,y,w,h,count\n";
  for (const auto& a : annotations)
    f << a.source_image << ',' << a.box.x << ',' << a.box.y << ',' << a.box.width << ','
      << a.box.height << ',' << a.count << '\n';
}

// --- balancing -----------------------------------------------------------

namespace {

std::string patch_stem(const Annotation& a) {
  std::string stem = fs::path(a.source_image).stem().string();
  return stem + "_x" + std::to_string(a.box.x) + "y" + std::to_string(a.box.y) + "w" +
         std::to_string(a.box.width) + "h" + std::to_string(a.box.height);
}

std::string row_path(const std::string& split, int label, const std::string& stem,
                     int aug_index) {
  std::string p = split + "/c" + std::to_string(label) + "/" + stem;
  if (aug_index >= 0) p += "_aug" + std::to_string(aug_index);
  return p + ".png";
}

}  // namespace

std::array<int, 7> per_class_targets(int target_total, const std::vector<int>& absent_classes) {
  std::array<bool, 7> absent{};
  for (int c : absent_classes) absent[c] = true;
  int present = 0;
  for (int c = 0; c < 7; ++c)
    if (!absent[c]) ++present;
  if (present == 0) throw InvalidInput("per_class_targets: all classes marked absent");
  std::array<int, 7> t{};
  int base = target_total / present, rem = target_total % present;
  for (int c = 0; c < 7; ++c) {
    if (absent[c]) continue;
    t[c] = base + (rem > 0 ? 1 : 0);
    if (rem > 0) --rem;
  }
  return t;
}

BuiltDataset build_balanced_dataset(const std::vector<Annotation>& annotations,
                                    const AugmentationPolicy& policy, int target_per_class,
                                    std::uint64_t seed, const SplitRatios& ratios,
                                    const std::vector<int>& absent_classes) {
  std::array<int, 7> targets{};
  std::array<bool, 7> absent{};
  for (int c : absent_classes) absent[c] = true;
  for (int c = 0; c < 7; ++c) targets[c] = absent[c] ? 0 : target_per_class;
  return build_balanced_dataset(annotations, policy, targets, seed, ratios, absent_classes);
}

BuiltDataset build_balanced_dataset(const std::vector<Annotation>& annotations,
                                    const AugmentationPolicy& policy,
                                    const std::array<int, 7>& targets, std::uint64_t seed,
                                    const SplitRatios& ratios,
                                    const std::vector<int>& absent_classes) {
  policy.validate();
  for (const auto& a : annotations)
    if (a.count < 0 || a.count > 6)
      throw InvalidInput("annotation count " + std::to_string(a.count) +
                         " outside 0..6 (counts above 6 are rejected, not clamped)");
  std::array<bool, 7> absent{};
  for (int c : absent_classes) absent[c] = true;

  // split by source image so augmented patches cannot leak across splits
  std::vector<std::string> sources;
  {
    std::set<std::string> seen;
    for (const auto& a : annotations)
      if (seen.insert(a.source_image).second) sources.push_back(a.source_image);
  }
  Rng rng(seed);
  rng.shuffle(sources.data(), sources.size());
  std::map<std::string, std::string> split_of;
  const std::size_t n_src = sources.size();
  const std::size_t n_train = static_cast<std::size_t>(std::llround(ratios.train * n_src));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(ratios.val * n_src));
  for (std::size_t i = 0; i < n_src; ++i)
    split_of[sources[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");

  BuiltDataset out;
  std::array<std::vector<const Annotation*>, 7> train_by_class;
  std::vector<std::pair<const Annotation*, std::string>> passthrough;
  for (const auto& a : annotations) {
    const std::string& split = split_of[a.source_image];
    if (split == "train")
      train_by_class[a.count].push_back(&a);
    else
      passthrough.emplace_back(&a, split);
  }

  auto push_row = [&](const Annotation& a, const std::string& split, int aug_index,
                      std::optional<AugmentSpec> spec) {
    ManifestRow r;
    r.count = a.count;
    r.split = split;
    r.source_image = a.source_image;
    r.box = a.box;
    r.path = row_path(split, a.count, patch_stem(a), aug_index);
    out.manifest.rows.push_back(std::move(r));
    out.augments.push_back(std::move(spec));
  };

  Rng aug_rng = rng.fork(1);
  for (int c = 0; c < 7; ++c) {
    auto& base = train_by_class[c];
    if (absent[c]) {
      if (!base.empty())
        throw InvalidInput("class " + std::to_string(c) +
                           " marked absent but has training examples");
      continue;
    }
    if (base.empty() && targets[c] > 0)
      throw UnbalanceableClass("count class " + std::to_string(c) +
                                   " has no training examples and is not marked absent",
                               c);
    const int target = targets[c];
    if (static_cast<int>(base.size()) >= target) {
      Rng pick = rng.fork(100 + c);
      std::vector<const Annotation*> chosen = base;
      pick.shuffle(chosen.data(), chosen.size());
      chosen.resize(target);
      for (const auto* a : chosen) push_row(*a, "train", -1, std::nullopt);
    } else {
      for (const auto* a : base) push_row(*a, "train", -1, std::nullopt);
      int need = target - static_cast<int>(base.size());
      int aug_index = 0;
      for (int i = 0; i < need; ++i) {
        const Annotation* a = base[i % base.size()];
        push_row(*a, "train", aug_index++, sample_augment(policy, aug_rng));
      }
    }
  }
  for (auto& [a, split] : passthrough) push_row(*a, split, -1, std::nullopt);
  out.manifest.validate();
  return out;
}

void materialize_dataset(const BuiltDataset& built, const std::string& out_dir,
                         const std::function<const ImageU8&(const std::string&)>& load_image) {
  for (std::size_t i = 0; i < built.manifest.rows.size(); ++i) {
    const ManifestRow& r = built.manifest.rows[i];
    const ImageU8& src = load_image(r.source_image);
    ImageU8 patch = crop_and_resize(src, r.box);
    if (built.augments[i]) patch = apply_augment(patch, *built.augments[i]);
    fs::path dst = fs::path(out_dir) / r.path;
    fs::create_directories(dst.parent_path());
    write_png(dst.string(), patch);
  }
}

}  // namespace orchard
