#pragma once

#include <optional>

#include "mkd/core_types.hpp"

namespace mkd {

/// A scalar loss with its gradient w.r.t. the scores it was computed from.
struct LossResult {
  double value = 0.0;
  bool empty = false;  // no valid pixel; value is 0 and grad is all zero
  Tensor4 grad;
};

/// Mean over valid pixels of -log softmax(scores)[target]. Pixels whose target
/// is kIgnore, or whose mask entry is 0, are skipped. Scores and targets must
/// share B x h x w.
LossResult masked_cross_entropy(const Tensor4& scores, const LabelMap& target,
                                const BinaryMask* valid = nullptr);

/// Numerically stable log(sum(exp(v))).
double log_sum_exp(const double* v, int n);

/// Per-pixel argmax labels plus a confidence mask.
struct PseudoLabelResult {
  LabelMap labels;
  BinaryMask valid;
  /// Fraction of pixels marked valid.
  double valid_fraction() const;
};

/// labels = argmax (lowest index on ties); valid = max softmax >= tau when tau
/// is set, otherwise every pixel. Carries no gradient dependence on p.
PseudoLabelResult pseudo_label(const LogitsMap& p, std::optional<double> tau);

}  // namespace mkd
