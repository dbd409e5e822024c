#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkd/core_types.hpp"

namespace mkd {

/// counts[t * C + p]: pixels of true class t predicted as p.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c)
      : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::int64_t at(int truth, int pred) const { return counts[truth * num_classes + pred]; }
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Adds one count per pixel whose truth is not kIgnore. Predictions must be
/// class indices; out-of-range values of either map throw.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth);

struct IouReport {
  double mean = 0.0;
  /// IoU per class; NaN where the class has zero union and is left out of the mean.
  std::vector<double> per_class;
  std::vector<bool> present;
};

/// Throws ValidationError when every class has zero union.
IouReport miou(const ConfusionMatrix& cm);

/// Per-class IoU table followed by the mean, one "key value" pair per line.
std::string format_report(const IouReport& r, const std::string& title);

}  // namespace mkd
