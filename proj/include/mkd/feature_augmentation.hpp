#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mkd/core_types.hpp"
#include "mkd/losses.hpp"
#include "mkd/rng.hpp"

namespace mkd {

enum class CovarianceKind { kDiagonal, kFull };

/// Largest feature dimension for which full covariance tracking is allowed.
inline constexpr int kMaxFullCovarianceDim = 16;

/// Running per-class feature mean and population covariance.
/// Diagonal: cov holds C x D variances. Full: cov holds C x D x D matrices.
struct ClassFeatureStatistics {
  int num_classes = 0;
  int dim = 0;
  CovarianceKind kind = CovarianceKind::kDiagonal;
  std::vector<std::int64_t> count;
  std::vector<double> mean;
  std::vector<double> cov;

  static ClassFeatureStatistics empty(int num_classes, int dim,
                                      CovarianceKind kind = CovarianceKind::kDiagonal);

  std::span<const double> class_mean(int c) const {
    return {mean.data() + static_cast<std::size_t>(c) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<const double> class_cov(int c) const {
    const std::size_t n = kind == CovarianceKind::kFull ? static_cast<std::size_t>(dim) * dim : dim;
    return {cov.data() + c * n, n};
  }
  /// Sigma_c as a dense D x D matrix (diagonal kind expanded).
  std::vector<double> covariance_matrix(int c) const;

  friend bool operator==(const ClassFeatureStatistics&, const ClassFeatureStatistics&) = default;
};

/// Merges every non-ignored (and, when given, mask-valid) pixel of f into the
/// per-class statistics with the exact count-weighted update. Labels must be
/// at the feature resolution.
ClassFeatureStatistics update_statistics(ClassFeatureStatistics stats, const FeatureMap& f,
                                         const LabelMap& labels, const BinaryMask* valid = nullptr);
void update_statistics_inplace(ClassFeatureStatistics& stats, const FeatureMap& f,
                               const LabelMap& labels, const BinaryMask* valid = nullptr);

/// Classifier head (w is C x D row-major, b has C entries).
struct ClassifierView {
  std::span<const double> weight;
  std::span<const double> bias;
  int num_classes = 0;
  int dim = 0;
};

struct AugmentedLogits {
  LogitsMap data;
  double lambda_used = 0.0;
  BinaryMask valid;  // 0 where the target is kIgnore
};

/// Channel j at a pixel with target y: w_j.f + b_j + (lambda/2) (w_j - w_y)^T Sigma_y (w_j - w_y).
/// Channel y is the plain logit. Ignored pixels carry plain logits and valid = 0.
AugmentedLogits augment_logits(const FeatureMap& f, const ClassifierView& head,
                               const LabelMap& target, const ClassFeatureStatistics& stats,
                               double lambda);

struct AugmentGrads {
  FeatureMap grad_features;
  std::vector<double> grad_weight;  // C x D
  std::vector<double> grad_bias;    // C
};

/// Chain rule through augment_logits, including the dependence of the
/// quadratic term on the classifier weights.
AugmentGrads augment_logits_backward(const FeatureMap& f, const ClassifierView& head,
                                     const LabelMap& target, const ClassFeatureStatistics& stats,
                                     double lambda, const Tensor4& grad_augmented);

/// Mean over valid pixels of the cross-entropy of the augmented logits; this is
/// the closed-form upper bound on the expected CE under Gaussian feature noise.
LossResult isda_loss(const AugmentedLogits& aug, const LabelMap& target,
                     const BinaryMask* valid_mask = nullptr);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of E[CE(w f~ + b, y)] with f~ ~ N(f, lambda Sigma_y).
/// Test oracle only.
McEstimate mc_isda_loss(std::span<const double> f, const ClassifierView& head, int y,
                        const ClassFeatureStatistics& stats, double lambda, std::int64_t samples,
                        Rng& rng);

/// lambda0 * step / iters_max.
double lambda_schedule(double lambda0, int step, int iters_max);

}  // namespace mkd
