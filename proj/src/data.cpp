#include "mkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "mkd/image_io.hpp"

namespace fs = std::filesystem;

namespace mkd {

namespace {

std::vector<std::size_t> seeded_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }
double quantize(double v) { return std::round(clip01(v) * 255.0) / 255.0; }

}  // namespace

std::vector<std::size_t> SegDataset::labeled_indices() const {
  std::vector<std::size_t> out;
  if (manifest.empty()) {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].label) out.push_back(i);
    return out;
  }
  for (const auto& e : manifest)
    if (e.labeled) out.push_back(find(e.id));
  return out;
}

std::vector<std::size_t> SegDataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  if (manifest.empty()) {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!items[i].label) out.push_back(i);
    return out;
  }
  for (const auto& e : manifest)
    if (!e.labeled) out.push_back(find(e.id));
  return out;
}

std::size_t SegDataset::find(const std::string& id) const {
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].id == id) return i;
  return std::numeric_limits<std::size_t>::max();
}

void validate_dataset(const SegDataset& ds) {
  std::set<std::string> ids;
  for (const auto& it : ds.items) {
    if (!ids.insert(it.id).second) throw ValidationError("dataset: duplicate id '" + it.id + "'");
    if (it.label) {
      if (it.label->height() != it.image.height() || it.label->width() != it.image.width()) {
        throw ValidationError("dataset: label size differs from image for '" + it.id + "'");
      }
      validate_labels(*it.label, ds.num_classes);
    }
  }
  std::set<std::string> seen;
  for (const auto& e : ds.manifest) {
    if (!seen.insert(e.id).second) throw ValidationError("manifest: duplicate id '" + e.id + "'");
    const auto i = ds.find(e.id);
    if (i == std::numeric_limits<std::size_t>::max()) {
      throw ValidationError("manifest: unknown id '" + e.id + "'");
    }
    if (e.labeled && !ds.items[i].label) {
      throw ValidationError("manifest: '" + e.id + "' is marked labeled but has no label");
    }
  }
}

SegDataset make_partition(const SegDataset& dataset, int denominator, std::uint64_t seed) {
  const std::size_t n = dataset.items.size();
  if (denominator < 1) throw ValidationError("make_partition: denominator must be >= 1");
  if (static_cast<std::size_t>(denominator) > n) {
    throw ValidationError("make_partition: denominator " + std::to_string(denominator) +
                          " exceeds dataset size " + std::to_string(n));
  }
  Rng rng = make_rng(seed, "partition");
  const auto order = seeded_permutation(n, rng);
  const std::size_t n_labeled = (n + denominator - 1) / denominator;
  SegDataset out = dataset;
  out.manifest.clear();
  for (std::size_t k = 0; k < n; ++k) {
    out.manifest.push_back({dataset.items[order[k]].id, k < n_labeled});
  }
  validate_dataset(out);
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& manifest) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest '" + path + "'");
  for (const auto& e : manifest) os << e.id << '\t' << (e.labeled ? "labeled" : "unlabeled") << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest '" + path + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string tag = tab == std::string::npos ? "" : line.substr(tab + 1);
    if (tab == std::string::npos || (tag != "labeled" && tag != "unlabeled")) {
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 'id<TAB>labeled|unlabeled'");
    }
    out.push_back({line.substr(0, tab), tag == "labeled"});
  }
  return out;
}

SegDataset apply_manifest(const SegDataset& dataset, std::vector<ManifestEntry> manifest) {
  SegDataset out = dataset;
  out.manifest = std::move(manifest);
  if (out.manifest.size() != out.items.size()) {
    throw ValidationError("manifest lists " + std::to_string(out.manifest.size()) +
                          " ids but the dataset has " + std::to_string(out.items.size()));
  }
  validate_dataset(out);
  return out;
}

SyntheticSceneConfig default_scene_config(int num_classes, std::uint64_t seed) {
  SyntheticSceneConfig cfg;
  cfg.num_classes = num_classes;
  cfg.seed = seed;
  const ShapeKind kinds[3] = {ShapeKind::kRectangle, ShapeKind::kEllipse, ShapeKind::kTriangle};
  for (int c = 1; c < num_classes; ++c) {
    ClassAppearance a;
    const double hue = static_cast<double>(c - 1) / std::max(1, num_classes - 1);
    for (int k = 0; k < 3; ++k) {
      a.color_mean[k] = 0.5 + 0.18 * std::cos(2.0 * std::numbers::pi * (hue - k / 3.0));
    }
    a.color_std = 0.1;
    a.shape = kinds[(c - 1) % 3];
    cfg.classes.push_back(a);
  }
  return cfg;
}

void validate_scene_config(const SyntheticSceneConfig& cfg) {
  if (cfg.num_classes < 2) throw ValidationError("synthetic: num_classes must be >= 2");
  if (static_cast<int>(cfg.classes.size()) != cfg.num_classes - 1) {
    throw ValidationError("synthetic: need one appearance per object class (num_classes - 1)");
  }
  if (cfg.height < 1 || cfg.width < 1) throw ValidationError("synthetic: empty canvas");
  if (cfg.min_shapes < 0 || cfg.max_shapes < cfg.min_shapes) {
    throw ValidationError("synthetic: shape count range invalid");
  }
  if (cfg.min_size < 1 || cfg.max_size < cfg.min_size ||
      cfg.max_size > std::min(cfg.height, cfg.width)) {
    throw ValidationError("synthetic: shape size range invalid");
  }
  if (cfg.noise_std < 0 || cfg.background_std < 0 || cfg.texture_amplitude < 0) {
    throw ValidationError("synthetic: negative noise parameter");
  }
}

bool shape_contains(const SceneShape& s, int y, int x) {
  const double py = y + 0.5, px = x + 0.5;
  switch (s.kind) {
    case ShapeKind::kRectangle:
      return py >= s.top && py < s.top + s.height && px >= s.left && px < s.left + s.width;
    case ShapeKind::kEllipse: {
      const double cy = s.top + s.height / 2.0, cx = s.left + s.width / 2.0;
      const double dy = (py - cy) / (s.height / 2.0), dx = (px - cx) / (s.width / 2.0);
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::kTriangle: {
      // Apex at the top centre, base along the bottom edge.
      const double ay = s.top, ax = s.left + s.width / 2.0;
      const double by = s.top + s.height, bx = s.left;
      const double cy = s.top + s.height, cx = s.left + s.width;
      auto edge = [&](double y0, double x0, double y1, double x1) {
        return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
      };
      const double e0 = edge(ay, ax, by, bx), e1 = edge(by, bx, cy, cx), e2 = edge(cy, cx, ay, ax);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

SceneSpec sample_scene(const SyntheticSceneConfig& cfg, Rng& rng) {
  SceneSpec spec;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < 3; ++k) {
    spec.background[k] = cfg.background_mean[k] + cfg.background_std * normal(rng);
  }
  for (double& p : spec.texture_phase) p = uniform(rng, 0.0, 1.0);
  const int n = uniform_int(rng, cfg.min_shapes, cfg.max_shapes);
  for (int i = 0; i < n; ++i) {
    SceneShape s;
    s.class_id = uniform_int(rng, 1, cfg.num_classes - 1);
    const ClassAppearance& a = cfg.classes[s.class_id - 1];
    s.kind = a.shape;
    s.height = uniform_int(rng, cfg.min_size, cfg.max_size);
    s.width = uniform_int(rng, cfg.min_size, cfg.max_size);
    s.top = uniform_int(rng, 0, cfg.height - s.height);
    s.left = uniform_int(rng, 0, cfg.width - s.width);
    for (int k = 0; k < 3; ++k) s.color[k] = a.color_mean[k] + a.color_std * normal(rng);
    spec.shapes.push_back(s);
  }
  return spec;
}

SegItem render_scene(const SceneSpec& spec, const SyntheticSceneConfig& cfg, Rng& noise_rng,
                     const std::string& id) {
  SegItem item;
  item.id = id;
  item.image = ImageBatch(1, cfg.height, cfg.width, 3);
  item.label = LabelMap(1, cfg.height, cfg.width, 0);
  const double two_pi = 2.0 * std::numbers::pi;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const double u = static_cast<double>(x) / cfg.width, v = static_cast<double>(y) / cfg.height;
      const double tex = cfg.texture_amplitude *
                         std::sin(two_pi * (2.0 * u + spec.texture_phase[0])) *
                         std::sin(two_pi * (1.5 * v + spec.texture_phase[1]));
      std::array<double, 3> rgb{};
      for (int k = 0; k < 3; ++k) rgb[k] = spec.background[k] + tex;
      for (const auto& s : spec.shapes) {
        if (!shape_contains(s, y, x)) continue;
        rgb = s.color;
        (*item.label)(0, y, x) = static_cast<std::uint8_t>(s.class_id);
      }
      for (int k = 0; k < 3; ++k) {
        item.image(0, y, x, k) = quantize(rgb[k] + cfg.noise_std * normal(noise_rng));
      }
    }
  return item;
}

SegDataset generate_synthetic(const SyntheticSceneConfig& cfg, int count) {
  validate_scene_config(cfg);
  SegDataset ds;
  ds.num_classes = cfg.num_classes;
  ds.items.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng scene_rng = make_rng(cfg.seed, "synthetic-scene", static_cast<std::uint64_t>(i));
    Rng noise_rng = make_rng(cfg.seed, "synthetic-noise", static_cast<std::uint64_t>(i));
    std::ostringstream id;
    id << "synth_" << std::setw(5) << std::setfill('0') << i;
    ds.items.push_back(render_scene(sample_scene(cfg, scene_rng), cfg, noise_rng, id.str()));
  }
  return ds;
}

SegDataset load_folder_dataset(const std::string& images_dir, const std::string& labels_dir,
                               int num_classes) {
  if (!fs::is_directory(images_dir)) throw IoError("not a directory: '" + images_dir + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  SegDataset ds;
  ds.num_classes = num_classes;
  const bool have_labels = !labels_dir.empty() && fs::is_directory(labels_dir);
  for (const auto& f : files) {
    SegItem item;
    item.id = f.stem().string();
    item.image = read_png_rgb(f.string());
    const fs::path lp = fs::path(labels_dir) / (item.id + ".png");
    if (have_labels && fs::exists(lp)) {
      LabelMap lab = read_png_labels(lp.string());
      if (lab.height() != item.image.height() || lab.width() != item.image.width()) {
        throw IoError("label '" + lp.string() + "' size differs from its image");
      }
      for (auto v : lab.values())
        if (v != kIgnore && v >= num_classes) {
          throw IoError("label '" + lp.string() + "' contains class " + std::to_string(v) +
                        " >= " + std::to_string(num_classes));
        }
      item.label = std::move(lab);
    }
    ds.items.push_back(std::move(item));
  }
  return ds;
}

void write_folder_dataset(const SegDataset& ds, const std::string& dir) {
  const fs::path img = fs::path(dir) / "images", lab = fs::path(dir) / "labels";
  fs::create_directories(img);
  fs::create_directories(lab);
  for (const auto& it : ds.items) {
    write_png_rgb((img / (it.id + ".png")).string(), it.image);
    if (it.label) write_png_labels((lab / (it.id + ".png")).string(), *it.label);
  }
}

std::vector<std::size_t> sample_batch_indices(std::size_t pool_size, int batch, int step,
                                              std::uint64_t seed, std::uint64_t slot) {
  if (pool_size == 0) throw ValidationError("sample_batch_indices: empty pool");
  std::vector<std::size_t> out;
  out.reserve(batch);
  std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::size_t> perm;
  for (int i = 0; i < batch; ++i) {
    const std::uint64_t k = static_cast<std::uint64_t>(step) * batch + i;
    const std::uint64_t epoch = k / pool_size;
    if (epoch != cached_epoch) {
      Rng rng = make_rng(seed, streams::kSampler, slot, epoch);
      perm = seeded_permutation(pool_size, rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[k % pool_size]);
  }
  return out;
}

}  // namespace mkd
