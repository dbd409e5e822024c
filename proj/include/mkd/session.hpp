#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mkd/checkpoint.hpp"
#include "mkd/data.hpp"
#include "mkd/metrics.hpp"
#include "mkd/run_config.hpp"
#include "mkd/trainer.hpp"

namespace mkd {

/// Labeled and unlabeled pools of a partitioned dataset.
struct TrainPools {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

TrainPools make_pools(const SegDataset& ds);

/// Batches for `step`: labeled items from sampler slot 0, unlabeled from slot 1.
/// With an empty unlabeled pool the labeled images stand in.
StepBatches sample_step_batches(const SegDataset& ds, const TrainPools& pools,
                                const TrainConfig& cfg, int step);

/// Confusion matrix of one network over every labeled item, evaluated one
/// image at a time: zero-padded bottom/right to a multiple of 8, logits
/// bilinearly upsampled and cropped back.
ConfusionMatrix evaluate(const SegModelParams& net, const SegDataset& ds, Mode mode = Mode::kEval);

/// Per-pixel predicted classes of a 1 x H x W x 3 image of any size.
LabelMap predict(const SegModelParams& net, const ImageBatch& image, Mode mode = Mode::kEval);

enum class Branch { kStudent1, kStudent2, kTeacher1, kTeacher2 };
std::optional<Branch> parse_branch(const std::string& s);
std::string branch_name(Branch b);
const SegModelParams& select_network(const MkdState& s, Branch b);

/// One JSON line per step report and per evaluation.
std::string step_record(const StepReport& r);
std::string eval_record(int step, Branch branch, const IouReport& r);

struct RunHooks {
  std::function<void(const StepReport&)> on_step;
  /// Called with the state after `stop_after` steps have run, then training stops
  /// (simulates an interruption). Negative disables.
  int stop_after = -1;
};

struct RunOutcome {
  enum class Status { kCompleted, kStopped, kNonFinite } status = Status::kCompleted;
  MkdState state;
  std::vector<StepReport> reports;
  std::optional<IouReport> final_eval;  // student 1 on the validation set
  std::string message;
};

/// Runs steps state.step .. iters_max - 1. When cfg.output_dir is non-empty,
/// appends records to <output_dir>/train_log.jsonl, writes checkpoints every
/// checkpoint_interval steps plus checkpoint_last.bin, and on a non-finite
/// loss saves checkpoint_failed.bin holding the pre-step state.
RunOutcome run_training(const RunConfig& cfg, const SegDataset& train, const SegDataset* val,
                        MkdState state, const RunHooks& hooks = {});

/// Supervised-only baseline on the labeled pool; returns the trained student.
SupervisedState run_supervised(const RunConfig& cfg, const SegDataset& train,
                               int branch_index = 0);

/// Loads the configured training set (with its split) and optional validation set.
SegDataset load_training_set(const RunConfig& cfg);
std::optional<SegDataset> load_validation_set(const RunConfig& cfg);

/// Drops log records a run resumed at `step` will write again.
void truncate_log(const std::string& path, int step);

}  // namespace mkd
