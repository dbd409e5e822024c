#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mkd/core_types.hpp"
#include "mkd/rng.hpp"

namespace mkd {

struct SegItem {
  std::string id;
  ImageBatch image;              // 1 x H x W x 3
  std::optional<LabelMap> label; // 1 x H x W
};

struct ManifestEntry {
  std::string id;
  bool labeled = false;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Items plus the labeled / unlabeled split used for training.
struct SegDataset {
  int num_classes = 0;
  std::vector<SegItem> items;
  std::vector<ManifestEntry> manifest;

  /// Item indices in manifest order. Without a manifest every item with a
  /// label counts as labeled.
  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;
  std::size_t find(const std::string& id) const;  // npos when absent
};

/// Throws unless ids are unique, labels match image sizes and are in range.
void validate_dataset(const SegDataset& ds);

/// Seeded shuffle; the first ceil(N / n) ids are labeled, the rest unlabeled.
SegDataset make_partition(const SegDataset& dataset, int denominator, std::uint64_t seed);

/// "id<TAB>labeled|unlabeled" per line.
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& manifest);
std::vector<ManifestEntry> read_manifest(const std::string& path);
/// Attaches a manifest after checking every id exists exactly once.
SegDataset apply_manifest(const SegDataset& dataset, std::vector<ManifestEntry> manifest);

enum class ShapeKind { kRectangle, kEllipse, kTriangle };

struct ClassAppearance {
  std::array<double, 3> color_mean{0.5, 0.5, 0.5};
  double color_std = 0.05;  // per-shape colour jitter
  ShapeKind shape = ShapeKind::kRectangle;
  friend bool operator==(const ClassAppearance&, const ClassAppearance&) = default;
};

struct SyntheticSceneConfig {
  int height = 64;
  int width = 64;
  int num_classes = 4;
  int min_shapes = 1;
  int max_shapes = 4;
  int min_size = 10;  // bounding-box side range in pixels
  int max_size = 28;
  std::array<double, 3> background_mean{0.45, 0.45, 0.45};
  double background_std = 0.08;   // per-image background jitter
  double texture_amplitude = 0.1; // low-frequency background texture
  double noise_std = 0.08;        // per-pixel noise
  /// Appearance of classes 1..C-1; class 0 is background.
  std::vector<ClassAppearance> classes;
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticSceneConfig&, const SyntheticSceneConfig&) = default;
};

/// A config with evenly spread default class appearances for num_classes.
SyntheticSceneConfig default_scene_config(int num_classes, std::uint64_t seed);
void validate_scene_config(const SyntheticSceneConfig& cfg);

struct SceneShape {
  int class_id = 1;
  ShapeKind kind = ShapeKind::kRectangle;
  int top = 0, left = 0, height = 0, width = 0;  // bounding box
  std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct SceneSpec {
  std::array<double, 3> background{0.5, 0.5, 0.5};
  std::array<double, 4> texture_phase{0, 0, 0, 0};
  std::vector<SceneShape> shapes;  // painted in order; later shapes occlude earlier ones
};

/// True when the pixel centre (y + 0.5, x + 0.5) lies inside the shape.
bool shape_contains(const SceneShape& s, int y, int x);

SceneSpec sample_scene(const SyntheticSceneConfig& cfg, Rng& rng);
/// Image (quantised to 8-bit levels) and exact label map of a scene.
SegItem render_scene(const SceneSpec& spec, const SyntheticSceneConfig& cfg, Rng& noise_rng,
                     const std::string& id);

/// count scenes, each fully determined by (cfg.seed, index).
SegDataset generate_synthetic(const SyntheticSceneConfig& cfg, int count);

/// Pairs images_dir/<stem>.png with labels_dir/<stem>.png; unpaired images
/// become unlabeled items. labels_dir may be empty or missing.
SegDataset load_folder_dataset(const std::string& images_dir, const std::string& labels_dir,
                               int num_classes);
/// Writes <dir>/images/<id>.png and <dir>/labels/<id>.png.
void write_folder_dataset(const SegDataset& ds, const std::string& dir);

/// Indices into a pool of `pool_size` for one step: consecutive slices of
/// seeded per-epoch permutations, cycling with replacement across epochs.
std::vector<std::size_t> sample_batch_indices(std::size_t pool_size, int batch, int step,
                                              std::uint64_t seed, std::uint64_t slot);

}  // namespace mkd
