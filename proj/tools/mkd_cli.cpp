// Command-line front end: train, eval, synth, split, plot.
// Exit status: 0 success, 1 usage or config error, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mkd/checkpoint.hpp"
#include "mkd/data.hpp"
#include "mkd/image_io.hpp"
#include "mkd/plot.hpp"
#include "mkd/run_config.hpp"
#include "mkd/session.hpp"

namespace fs = std::filesystem;
using namespace mkd;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  MkdState state;
  if (!resume_path.empty()) {
    Checkpoint ck;
    try {
      ck = load_checkpoint(resume_path);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kRuntime;
    }
    if (trajectory_hash(ck.config) != trajectory_hash(cfg)) {
      std::cerr << "error: checkpoint was written by a run with a different configuration\n";
      return kUsage;
    }
    state = std::move(ck.state);
    std::cerr << "resuming at step " << state.step << "\n";
  } else {
    state = make_mkd_state(cfg.arch, cfg.train, cfg.covariance);
  }

  SegDataset train;
  std::optional<SegDataset> val;
  try {
    train = load_training_set(cfg);
    val = load_validation_set(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    save_run_config(cfg.output_dir + "/config.json", cfg);
    write_manifest(cfg.output_dir + "/manifest.tsv", train.manifest);
  }
  const auto pools = make_pools(train);
  std::cerr << "training: " << pools.labeled.size() << " labeled, " << pools.unlabeled.size()
            << " unlabeled, " << cfg.train.iters_max << " steps\n";

  RunHooks hooks;
  const int every = std::max(1, cfg.train.iters_max / 20);
  hooks.on_step = [&](const StepReport& r) {
    if (r.step % every == 0 || r.step + 1 == cfg.train.iters_max) {
      std::cerr << "step " << r.step << " total " << r.losses.total << " sup " << r.losses.sup
                << " st " << r.losses.st << " ss " << r.losses.ss << " lr " << r.lr << "\n";
    }
  };
  RunOutcome out;
  try {
    out = run_training(cfg, train, val ? &*val : nullptr, std::move(state), hooks);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  if (out.status == RunOutcome::Status::kNonFinite) {
    std::cerr << "error: " << out.message << "\n";
    if (!cfg.output_dir.empty()) {
      std::cerr << "failing state saved to " << cfg.output_dir << "/checkpoint_failed.bin\n";
    }
    return kRuntime;
  }
  if (out.final_eval) std::cout << format_report(*out.final_eval, "student1 on validation set");
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& branch_str) {
  const auto branch = parse_branch(branch_str);
  if (!branch) {
    std::cerr << "error: --branch must be student1, student2, teacher1 or teacher2\n";
    return kUsage;
  }
  try {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const SegDataset ds = load_folder_dataset((fs::path(data_dir) / "images").string(),
                                              (fs::path(data_dir) / "labels").string(),
                                              ck.config.train.num_classes);
    const IouReport r = miou(evaluate(select_network(ck.state, *branch), ds));
    std::cout << format_report(r, branch_name(*branch) + " at step " +
                                      std::to_string(ck.state.step) + " on " + data_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, int count) {
  SyntheticSceneConfig cfg;
  try {
    cfg = load_scene_config(config_path);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  if (count < 0) {
    std::cerr << "error: --count must be >= 0\n";
    return kUsage;
  }
  try {
    write_folder_dataset(generate_synthetic(cfg, count), out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  std::cerr << "wrote " << count << " images to " << out_dir << "\n";
  return kOk;
}

int cmd_split(const std::string& data_dir, int denominator, std::uint64_t seed,
              const std::string& out) {
  try {
    const SegDataset ds = load_folder_dataset((fs::path(data_dir) / "images").string(),
                                              (fs::path(data_dir) / "labels").string(), kIgnore);
    const SegDataset split = make_partition(ds, denominator, seed);
    write_manifest(out, split.manifest);
    std::cerr << "labeled " << split.labeled_indices().size() << " of " << ds.items.size()
              << "\n";
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

int cmd_plot(const std::string& log_path, const std::string& out_path) {
  try {
    const ParsedLog log = parse_log(log_path);
    if (log.skipped_lines > 0) {
      std::cerr << "warning: skipped " << log.skipped_lines << " malformed log line(s)\n";
    }
    std::ofstream os(out_path);
    if (!os) throw IoError("cannot write '" + out_path + "'");
    os << render_svg(log);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-student, two-teacher semi-supervised segmentation trainer"};
  app.require_subcommand(1);

  std::string config, resume, checkpoint, data, branch = "student1", out, log;
  int count = 0, denominator = 0;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train from a JSON run config");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate one network of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data, "Directory with images/ and labels/")->required();
  eval->add_option("--branch", branch, "student1|student2|teacher1|teacher2");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config, "Scene config (JSON)")->required();
  synth->add_option("--out", out)->required();
  synth->add_option("--count", count)->required();

  auto* split = app.add_subcommand("split", "Write a 1/n labeled split manifest");
  split->add_option("--data", data, "Directory with images/ and labels/")->required();
  split->add_option("--denominator", denominator)->required();
  split->add_option("--seed", seed);
  split->add_option("--out", out)->required();

  auto* plot = app.add_subcommand("plot", "Render loss and mIoU curves to SVG");
  plot->add_option("--log", log)->required();
  plot->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (*train) return cmd_train(config, resume);
  if (*eval) return cmd_eval(checkpoint, data, branch);
  if (*synth) return cmd_synth(config, out, count);
  if (*split) return cmd_split(data, denominator, seed, out);
  if (*plot) return cmd_plot(log, out);
  return kUsage;
}
