#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mkd/tensor.hpp"

namespace mkd {

/// Every scalar the training recipe fixes or ablates.
struct TrainConfig {
  double gamma = 0.4;   // EMA rate of the teachers
  double alpha = 1.5;   // weight of the teacher->student consistency term
  double beta = 1.0;    // weight of the student<->student consistency term
  double lambda0 = 1.0; // feature-augmentation strength at the end of training
  std::optional<double> tau;  // pseudo-label confidence threshold; disabled when empty
  bool tau_on_ss = false;     // also gate the student<->student term by tau
  double lr0 = 0.01;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iters_max = 1000;
  int crop_height = 64;
  int crop_width = 64;
  int batch_labeled = 4;
  int batch_unlabeled = 4;
  int num_classes = 4;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Returns cfg unchanged or throws ValidationError naming the offending field.
const TrainConfig& validate_config(const TrainConfig& cfg);

/// Throws unless every value is finite and in [0, 1] and all dimensions are positive.
void validate_images(const ImageBatch& x);
/// Throws unless every value is < num_classes or kIgnore.
void validate_labels(const LabelMap& y, int num_classes);
void validate_finite(const Tensor4& t, const char* what);

/// B x H x W x C indicator tensor; kIgnore pixels map to the zero vector.
Tensor4 one_hot(const LabelMap& labels, int num_classes);

/// Per-pixel argmax over channels, lowest index on ties.
LabelMap argmax_channels(const Tensor4& scores);

}  // namespace mkd
