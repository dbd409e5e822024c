#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mkd/augmentation.hpp"
#include "mkd/core_types.hpp"
#include "mkd/data.hpp"
#include "mkd/feature_augmentation.hpp"
#include "mkd/model.hpp"

namespace mkd {

struct DataPaths {
  std::string train_images;
  std::string train_labels;
  std::string manifest;     // optional; overrides denominator when set
  int denominator = 0;      // 1/n labeled split drawn at start-up when > 0
  std::uint64_t split_seed = 0;
  std::string val_images;   // optional held-out set
  std::string val_labels;

  friend bool operator==(const DataPaths&, const DataPaths&) = default;
};

/// Everything a training run needs, as stored in its JSON config file.
/// Crop size and class count live in `train` and are copied into `augment`
/// and `arch` on load.
struct RunConfig {
  TrainConfig train;
  ArchConfig arch;
  AugmentConfig augment;
  CovarianceKind covariance = CovarianceKind::kDiagonal;
  DataPaths data;
  int checkpoint_interval = 0;  // 0 disables periodic checkpoints
  int eval_interval = 0;        // 0 evaluates only at the end
  std::string output_dir = "run";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Copies crop size and class count from `train` and validates every section.
RunConfig finalize_run_config(RunConfig cfg);

std::string run_config_to_json(const RunConfig& cfg);
/// Throws ValidationError on unknown keys, wrong types or out-of-range values.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

/// Hash of the fields that determine the training trajectory.
std::uint64_t trajectory_hash(const RunConfig& cfg);

std::string scene_config_to_json(const SyntheticSceneConfig& cfg);
SyntheticSceneConfig scene_config_from_json(const std::string& text);
SyntheticSceneConfig load_scene_config(const std::string& path);

}  // namespace mkd
