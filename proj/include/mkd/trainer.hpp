#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

#include "mkd/augmentation.hpp"
#include "mkd/feature_augmentation.hpp"
#include "mkd/losses.hpp"
#include "mkd/model.hpp"

namespace mkd {

/// One student, its mean teacher, and the student's SGD momentum buffers.
struct BranchState {
  SegModelParams student;
  SegModelParams teacher;
  ModelGrads momentum;

  friend bool operator==(const BranchState& a, const BranchState& b) {
    return a.student == b.student && a.teacher == b.teacher &&
           a.momentum.values == b.momentum.values;
  }
};

/// Student drawn from rng; teacher is an exact copy.
BranchState make_branch(const ArchConfig& arch, Rng& rng);

/// teacher <- gamma * teacher + (1 - gamma) * student for every learnable
/// tensor and every running statistic.
void ema_update(BranchState& branch, double gamma);
SegModelParams ema_blend(const SegModelParams& teacher, const SegModelParams& student,
                         double gamma);

/// lr0 * (1 - step / iters_max)^lr_power, clamped to 0 past iters_max.
double poly_lr(int step, const TrainConfig& cfg);

/// Momentum SGD; weight decay applies to conv and classifier weights only.
void sgd_step(SegModelParams& params, const ModelGrads& grads, ModelGrads& momentum, double lr,
              const TrainConfig& cfg);

/// Value and per-branch gradients of a two-branch loss.
struct PairLoss {
  double value = 0.0;
  std::array<bool, 2> empty{false, false};
  std::array<Tensor4, 2> grad;  // dL/d(scores of branch i)
};

/// CE(p1, y) + CE(p2, y), each a mean over non-ignored pixels. Logits must
/// already be at label resolution.
PairLoss supervised_loss(const LogitsMap& p1, const LogitsMap& p2, const LabelMap& y);

/// CE(a1, y_t2) + CE(a2, y_t1), each masked by its teacher's valid mask.
/// a1 must be augmented against t2's labels and a2 against t1's.
PairLoss consistency_st_loss(const AugmentedLogits& a1, const AugmentedLogits& a2,
                             const PseudoLabelResult& t1, const PseudoLabelResult& t2);

/// CE(a1, y_s2) + CE(a2, y_s1) where y_si are student i's detached pseudo-labels.
PairLoss consistency_ss_loss(const AugmentedLogits& a1, const AugmentedLogits& a2,
                             const PseudoLabelResult& s1, const PseudoLabelResult& s2);
/// Variant on plain logits: each student is supervised by the other's argmax.
PairLoss consistency_ss_loss(const LogitsMap& p1, const LogitsMap& p2);

/// Pseudo-labels of logits mixed with the same CutMix mask as the student input:
/// pixel (b, y, x) comes from item b where m = 0 and item (b + 1) mod B where m = 1.
PseudoLabelResult mixed_pseudo_labels(const LogitsMap& p, const CutMixMask& m,
                                      std::optional<double> tau);

/// Raw (un-augmented) batches for one step. All items share one spatial size.
struct StepBatches {
  ImageBatch labeled_images;
  LabelMap labels;
  ImageBatch unlabeled_images;
};

/// Every augmented input of a step.
struct StepViews {
  ImageBatch labeled_weak;
  LabelMap labeled_targets;
  ImageBatch unlabeled_weak;
  ImageBatch unlabeled_strong;  // photometric only, before CutMix
  CutMixMask mask;
  ImageBatch unlabeled_mixed;   // CutMix of unlabeled_strong with its rolled partner
};

/// Draws the views of `step` from streams keyed by (seed, step).
StepViews prepare_views(const StepBatches& batches, const AugmentConfig& aug, std::uint64_t seed,
                        int step);

struct StepLosses {
  double sup = 0.0, st = 0.0, ss = 0.0, total = 0.0;
  friend bool operator==(const StepLosses&, const StepLosses&) = default;
};

struct StepReport {
  int step = 0;
  StepLosses losses;
  double lr = 0.0;
  double lambda = 0.0;
  std::array<double, 2> valid_fraction{1.0, 1.0};

  friend bool operator==(const StepReport&, const StepReport&) = default;
};

/// Full mutable training state.
struct MkdState {
  std::array<BranchState, 2> branches;
  ClassFeatureStatistics stats;
  int step = 0;

  friend bool operator==(const MkdState&, const MkdState&) = default;
};

MkdState make_mkd_state(const ArchConfig& arch, const TrainConfig& cfg,
                        CovarianceKind kind = CovarianceKind::kDiagonal);

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, StepLosses losses)
      : std::runtime_error(what), losses_(losses) {}
  const StepLosses& losses() const { return losses_; }

 private:
  StepLosses losses_;
};

/// Pseudo-label targets of the unlabeled batch for one step.
struct StepTargets {
  std::array<PseudoLabelResult, 2> teacher;  // from teacher i, mixed
  std::array<PseudoLabelResult, 2> student;  // from student i on the un-mixed strong view, mixed
};

/// Teacher forwards on the weak view and detached student forwards on the
/// un-mixed strong view, each mixed with the step's CutMix mask.
StepTargets compute_targets(const std::array<SegModelParams, 2>& teachers,
                            const std::array<SegModelParams, 2>& students, const StepViews& views,
                            const TrainConfig& cfg);

struct StepGradients {
  StepLosses losses;
  std::array<ModelGrads, 2> grads;
  std::array<ForwardCache, 2> labeled_cache;
  std::array<FeatureMap, 2> labeled_features;
  std::array<FeatureMap, 2> unlabeled_features;
};

/// Student forwards, feature augmentation, the three loss terms and their
/// gradients w.r.t. both students. Targets are constants here.
StepGradients compute_student_gradients(const std::array<SegModelParams, 2>& students,
                                        const StepViews& views, const StepTargets& targets,
                                        const ClassFeatureStatistics& stats, double lambda,
                                        const TrainConfig& cfg);

/// One training step in the fixed order: EMA, views, forwards, feature
/// augmentation, loss, SGD, statistics. The state is untouched when the loss is
/// non-finite (NonFiniteLossError).
StepReport train_step(MkdState& state, const StepBatches& batches, const TrainConfig& cfg,
                      const AugmentConfig& aug);
StepReport train_step_on_views(MkdState& state, const StepViews& views, const TrainConfig& cfg);

/// Supervised-only baseline: one student trained on the labeled views alone.
struct SupervisedState {
  BranchState branch;
  int step = 0;
};

SupervisedState make_supervised_state(const ArchConfig& arch, const TrainConfig& cfg,
                                      int branch_index = 0);
/// Returns the step's supervised loss. Uses the same labeled views as train_step.
double supervised_step(SupervisedState& state, const StepBatches& batches, const TrainConfig& cfg,
                       const AugmentConfig& aug);

}  // namespace mkd
