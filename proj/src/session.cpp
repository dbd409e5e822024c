#include "mkd/session.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mkd/image_io.hpp"

namespace fs = std::filesystem;

namespace mkd {

using nlohmann::json;

TrainPools make_pools(const SegDataset& ds) {
  TrainPools p{ds.labeled_indices(), ds.unlabeled_indices()};
  if (p.labeled.empty()) throw ValidationError("training set has no labeled items");
  return p;
}

StepBatches sample_step_batches(const SegDataset& ds, const TrainPools& pools,
                                const TrainConfig& cfg, int step) {
  StepBatches b;
  std::vector<ImageBatch> imgs;
  std::vector<LabelMap> labs;
  for (auto k : sample_batch_indices(pools.labeled.size(), cfg.batch_labeled, step, cfg.seed, 0)) {
    const SegItem& it = ds.items[pools.labeled[k]];
    imgs.push_back(it.image);
    labs.push_back(*it.label);
  }
  b.labeled_images = stack_batch(imgs);
  b.labels = stack_batch(labs);
  const auto& upool = pools.unlabeled.empty() ? pools.labeled : pools.unlabeled;
  imgs.clear();
  for (auto k : sample_batch_indices(upool.size(), cfg.batch_unlabeled, step, cfg.seed, 1)) {
    imgs.push_back(ds.items[upool[k]].image);
  }
  b.unlabeled_images = stack_batch(imgs);
  return b;
}

LabelMap predict(const SegModelParams& net, const ImageBatch& image, Mode mode) {
  const int h = image.height(), w = image.width();
  const int ph = (h + kInputGranularity - 1) / kInputGranularity * kInputGranularity;
  const int pw = (w + kInputGranularity - 1) / kInputGranularity * kInputGranularity;
  ImageBatch padded(image.batch(), ph, pw, image.channels(), 0.0);
  for (int b = 0; b < image.batch(); ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < image.channels(); ++c) padded(b, y, x, c) = image(b, y, x, c);
  const auto out = forward(net, padded, mode);
  const LogitsMap up = upsample_logits(out.logits, ph, pw);
  const LabelMap full = argmax_channels(up.tensor());
  LabelMap pred(image.batch(), h, w);
  for (int b = 0; b < image.batch(); ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) pred(b, y, x) = full(b, y, x);
  return pred;
}

ConfusionMatrix evaluate(const SegModelParams& net, const SegDataset& ds, Mode mode) {
  ConfusionMatrix cm(net.arch.num_classes);
  for (const auto& it : ds.items) {
    if (!it.label) continue;
    accumulate(cm, predict(net, it.image, mode), *it.label);
  }
  return cm;
}

std::optional<Branch> parse_branch(const std::string& s) {
  if (s == "student1") return Branch::kStudent1;
  if (s == "student2") return Branch::kStudent2;
  if (s == "teacher1") return Branch::kTeacher1;
  if (s == "teacher2") return Branch::kTeacher2;
  return std::nullopt;
}

std::string branch_name(Branch b) {
  switch (b) {
    case Branch::kStudent1: return "student1";
    case Branch::kStudent2: return "student2";
    case Branch::kTeacher1: return "teacher1";
    case Branch::kTeacher2: return "teacher2";
  }
  return "student1";
}

const SegModelParams& select_network(const MkdState& s, Branch b) {
  switch (b) {
    case Branch::kStudent1: return s.branches[0].student;
    case Branch::kStudent2: return s.branches[1].student;
    case Branch::kTeacher1: return s.branches[0].teacher;
    case Branch::kTeacher2: return s.branches[1].teacher;
  }
  return s.branches[0].student;
}

std::string step_record(const StepReport& r) {
  const json j = {{"type", "step"},
                  {"step", r.step},
                  {"sup", r.losses.sup},
                  {"st", r.losses.st},
                  {"ss", r.losses.ss},
                  {"total", r.losses.total},
                  {"lr", r.lr},
                  {"lambda", r.lambda},
                  {"valid_fraction", r.valid_fraction}};
  return j.dump();
}

std::string eval_record(int step, Branch branch, const IouReport& r) {
  json per = json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    per.push_back(r.present[k] ? json(r.per_class[k]) : json(nullptr));
  }
  const json j = {{"type", "eval"},
                  {"step", step},
                  {"branch", branch_name(branch)},
                  {"miou", r.mean},
                  {"per_class", per}};
  return j.dump();
}

void truncate_log(const std::string& path, int step) {
  std::ifstream is(path);
  if (!is) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step") || !j["step"].is_number_integer()) continue;
    // An eval record at step k describes the state a step-k checkpoint resumes from.
    const bool is_eval = j.value("type", "") == "eval";
    const int s = j["step"].get<int>();
    if (s < step || (is_eval && s == step)) keep.push_back(line);
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : keep) os << l << '\n';
}

RunOutcome run_training(const RunConfig& cfg, const SegDataset& train, const SegDataset* val,
                        MkdState state, const RunHooks& hooks) {
  const TrainConfig& tc = cfg.train;
  const TrainPools pools = make_pools(train);
  const bool write = !cfg.output_dir.empty();
  std::ofstream log;
  if (write) {
    fs::create_directories(cfg.output_dir);
    const std::string log_path = cfg.output_dir + "/train_log.jsonl";
    truncate_log(log_path, state.step);
    log.open(log_path, std::ios::app);
    if (!log) throw IoError("cannot open log '" + log_path + "'");
  }
  auto checkpoint = [&](const std::string& name, const MkdState& s) {
    if (write) save_checkpoint(cfg.output_dir + "/" + name, Checkpoint{cfg, s});
  };
  auto run_eval = [&](const MkdState& s, int step) {
    std::optional<IouReport> first;
    if (!val) return first;
    for (Branch b : {Branch::kStudent1, Branch::kStudent2, Branch::kTeacher1, Branch::kTeacher2}) {
      const IouReport r = miou(evaluate(select_network(s, b), *val));
      if (!first) first = r;
      if (write) log << eval_record(step, b, r) << '\n' << std::flush;
    }
    return first;
  };

  RunOutcome out;
  int ran = 0;
  while (state.step < tc.iters_max) {
    if (hooks.stop_after >= 0 && ran == hooks.stop_after) {
      out.status = RunOutcome::Status::kStopped;
      checkpoint("checkpoint_last.bin", state);
      out.state = std::move(state);
      return out;
    }
    const StepBatches batches = sample_step_batches(train, pools, tc, state.step);
    StepReport report;
    try {
      report = train_step(state, batches, tc, cfg.augment);
    } catch (const NonFiniteLossError& e) {
      checkpoint("checkpoint_failed.bin", state);
      out.status = RunOutcome::Status::kNonFinite;
      out.message = e.what();
      out.state = std::move(state);
      return out;
    }
    ++ran;
    if (write) log << step_record(report) << '\n' << std::flush;
    if (hooks.on_step) hooks.on_step(report);
    out.reports.push_back(report);
    if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) {
      checkpoint("checkpoint_" + std::to_string(state.step) + ".bin", state);
    }
    if (cfg.eval_interval > 0 && state.step % cfg.eval_interval == 0 &&
        state.step < tc.iters_max) {
      run_eval(state, state.step);
    }
  }
  checkpoint("checkpoint_last.bin", state);
  out.final_eval = run_eval(state, state.step);
  if (write && out.final_eval) {
    std::ofstream rep(cfg.output_dir + "/eval_report.txt");
    rep << format_report(*out.final_eval, "student1 on validation set");
  }
  out.state = std::move(state);
  return out;
}

SupervisedState run_supervised(const RunConfig& cfg, const SegDataset& train, int branch_index) {
  const TrainPools pools = make_pools(train);
  SupervisedState s = make_supervised_state(cfg.arch, cfg.train, branch_index);
  while (s.step < cfg.train.iters_max) {
    supervised_step(s, sample_step_batches(train, pools, cfg.train, s.step), cfg.train,
                    cfg.augment);
  }
  return s;
}

SegDataset load_training_set(const RunConfig& cfg) {
  SegDataset ds =
      load_folder_dataset(cfg.data.train_images, cfg.data.train_labels, cfg.train.num_classes);
  if (ds.items.empty()) throw IoError("no PNG images in '" + cfg.data.train_images + "'");
  if (!cfg.data.manifest.empty()) return apply_manifest(ds, read_manifest(cfg.data.manifest));
  if (cfg.data.denominator > 0) {
    return make_partition(ds, cfg.data.denominator, cfg.data.split_seed);
  }
  validate_dataset(ds);
  return ds;
}

std::optional<SegDataset> load_validation_set(const RunConfig& cfg) {
  if (cfg.data.val_images.empty()) return std::nullopt;
  SegDataset ds =
      load_folder_dataset(cfg.data.val_images, cfg.data.val_labels, cfg.train.num_classes);
  validate_dataset(ds);
  return ds;
}

}  // namespace mkd
