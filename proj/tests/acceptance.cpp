// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "mkd/checkpoint.hpp"
#include "mkd/session.hpp"
#include "oracle_step.hpp"
#include "test_util.hpp"

using namespace mkd;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

ArchConfig tiny_arch(int d = 4, int c = 3) {
  ArchConfig a;
  a.widths = {3, 4, 5};
  a.feature_dim = d;
  a.num_classes = c;
  return a;
}

TrainConfig tiny_train(int c = 3) {
  TrainConfig t;
  t.num_classes = c;
  t.crop_height = t.crop_width = 16;
  t.batch_labeled = t.batch_unlabeled = 2;
  t.iters_max = 10;
  t.lr0 = 0.05;
  t.lambda0 = 2.0;
  t.tau = 0.4;
  t.seed = 21;
  return t;
}

AugmentConfig tiny_augment() {
  AugmentConfig a;
  a.crop_height = a.crop_width = 16;
  return a;
}

StepBatches random_batches(Rng& rng, int c = 3) {
  return {testing::random_images(2, 16, 16, rng), testing::random_labels(2, 16, 16, c, rng, 0.05),
          testing::random_images(2, 16, 16, rng)};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ClassifierView head(const std::vector<double>& w, const std::vector<double>& b, int c, int d) {
  return {w, b, c, d};
}

/// Random statistics; full kind gets dense positive semi-definite blocks.
ClassFeatureStatistics random_stats(int c, int d, CovarianceKind kind, Rng& rng) {
  ClassFeatureStatistics s = ClassFeatureStatistics::empty(c, d, kind);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.05, 1.0);
  for (int k = 0; k < c; ++k) {
    s.count[k] = 10;
    for (int i = 0; i < d; ++i) s.mean[k * d + i] = u(rng);
    if (kind == CovarianceKind::kDiagonal) {
      for (int i = 0; i < d; ++i) s.cov[k * d + i] = pos(rng);
    } else {
      std::vector<double> a(static_cast<std::size_t>(d) * d);
      for (double& v : a) v = u(rng);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double v = 0;
          for (int l = 0; l < d; ++l) v += a[i * d + l] * a[j * d + l];
          s.cov[(static_cast<std::size_t>(k) * d + i) * d + j] = v / d;
        }
    }
  }
  return s;
}

// 1. Closed-form bound vs Monte-Carlo expectation.
Verdict isda_oracle_bound() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  const double lambdas[3] = {0.5, 1.0, 2.0};
  int cases = 0, violations = 0;
  double worst_zero = 0, worst_margin = -1e300;
  for (int i = 0; i < 120; ++i) {
    const int c = uniform_int(rng, 2, 4), d = uniform_int(rng, 1, 8);
    const auto kind = i % 2 ? CovarianceKind::kFull : CovarianceKind::kDiagonal;
    const ClassFeatureStatistics stats = random_stats(c, d, kind, rng);
    std::vector<double> w(static_cast<std::size_t>(c) * d), b(c), f(d);
    for (double& v : w) v = uniform(rng, -1.5, 1.5);
    for (double& v : b) v = uniform(rng, -0.5, 0.5);
    for (double& v : f) v = uniform(rng, -1.0, 1.0);
    const int y = uniform_int(rng, 0, c - 1);
    const double lambda = lambdas[i % 3];
    FeatureMap fm(1, 1, 1, d);
    for (int k = 0; k < d; ++k) fm(0, 0, 0, k) = f[k];
    const LabelMap target(1, 1, 1, static_cast<std::uint8_t>(y));
    const ClassifierView h = head(w, b, c, d);
    const double bound = isda_loss(augment_logits(fm, h, target, stats, lambda), target).value;
    Rng mc = make_rng(101, streams::kMcOracle, static_cast<std::uint64_t>(i));
    const McEstimate est = mc_isda_loss(f, h, y, stats, lambda, 200000, mc);
    worst_margin = std::max(worst_margin, est.estimate - (bound + 3 * est.std_error));
    if (est.estimate > bound + 3 * est.std_error) ++violations;
    const double plain = isda_loss(augment_logits(fm, h, target, stats, 0.0), target).value;
    const McEstimate zero = mc_isda_loss(f, h, y, stats, 0.0, 1000, mc);
    worst_zero = std::max(worst_zero, std::abs(zero.estimate - plain));
    ++cases;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = violations == 0 && worst_zero <= 1e-8 && secs < 120;
  return {pass, std::to_string(cases) + " instances, " + std::to_string(violations) +
                    " violations, worst (mc - bound - 3se) " + fmt("%.3g", worst_margin) +
                    ", lambda=0 gap " + fmt("%.3g", worst_zero) + ", " + fmt("%.1f", secs) + "s"};
}

// 2. Analytic vs central-difference gradients.
Verdict gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  auto record = [&](const std::string& name, const std::vector<double>& a,
                    const std::vector<double>& n) {
    const double e = testing::relative_error(a, n);
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
  };
  Rng rng(202);

  // Feature augmentation loss w.r.t. features and classifier.
  for (auto kind : {CovarianceKind::kDiagonal, CovarianceKind::kFull}) {
    const int c = 4, d = 5;
    const auto stats = random_stats(c, d, kind, rng);
    FeatureMap f(testing::random_tensor(2, 3, 3, d, rng));
    std::vector<double> w(c * d), b(c);
    for (double& v : w) v = uniform(rng, -1, 1);
    for (double& v : b) v = uniform(rng, -1, 1);
    const LabelMap y = testing::random_labels(2, 3, 3, c, rng, 0.2);
    auto value = [&] {
      return isda_loss(augment_logits(f, head(w, b, c, d), y, stats, 1.3), y).value;
    };
    const auto aug = augment_logits(f, head(w, b, c, d), y, stats, 1.3);
    const auto l = isda_loss(aug, y);
    const auto g = augment_logits_backward(f, head(w, b, c, d), y, stats, 1.3, l.grad);
    record("isda/f", g.grad_features.tensor().values(),
           testing::numeric_gradient(f.tensor().values(), value));
    record("isda/w", g.grad_weight, testing::numeric_gradient(w, value));
    record("isda/b", g.grad_bias, testing::numeric_gradient(b, value));
  }

  // Pair losses w.r.t. both score inputs.
  {
    LogitsMap p1(testing::random_tensor(2, 4, 4, 3, rng, -2, 2));
    LogitsMap p2(testing::random_tensor(2, 4, 4, 3, rng, -2, 2));
    const LabelMap y = testing::random_labels(2, 4, 4, 3, rng, 0.2);
    const auto t1 = pseudo_label(LogitsMap(testing::random_tensor(2, 4, 4, 3, rng, -3, 3)), 0.5);
    const auto t2 = pseudo_label(LogitsMap(testing::random_tensor(2, 4, 4, 3, rng, -3, 3)), 0.5);
    auto plain = [](const LogitsMap& p) {
      return AugmentedLogits{p, 0.0, BinaryMask(p.batch(), p.height(), p.width(), 1)};
    };
    const std::vector<std::pair<std::string, std::function<PairLoss()>>> losses = {
        {"supervised", [&] { return supervised_loss(p1, p2, y); }},
        {"st", [&] { return consistency_st_loss(plain(p1), plain(p2), t1, t2); }},
        {"ss", [&] { return consistency_ss_loss(plain(p1), plain(p2), t1, t2); }},
    };
    for (const auto& [name, fn] : losses) {
      const PairLoss l = fn();
      auto value = [&] { return fn().value; };
      record(name + "/p1", l.grad[0].values(),
             testing::numeric_gradient(p1.tensor().values(), value));
      record(name + "/p2", l.grad[1].values(),
             testing::numeric_gradient(p2.tensor().values(), value));
    }
  }

  // Every loss term through two tiny students, pseudo-labels held fixed.
  struct Weights {
    const char* name;
    double alpha, beta;
  };
  for (const Weights& wt : {Weights{"sup", 0, 0}, Weights{"sup+st", 1.5, 0},
                            Weights{"sup+ss", 0, 1}, Weights{"all", 1.5, 1}}) {
    TrainConfig cfg = tiny_train();
    cfg.alpha = wt.alpha;
    cfg.beta = wt.beta;
    MkdState s = make_mkd_state(tiny_arch(), cfg);
    Rng data(303);
    for (int i = 0; i < 2; ++i) train_step(s, random_batches(data), cfg, tiny_augment());
    const StepViews views = prepare_views(random_batches(data), tiny_augment(), cfg.seed, s.step);
    std::array<SegModelParams, 2> students{s.branches[0].student, s.branches[1].student};
    const std::array<SegModelParams, 2> teachers{s.branches[0].teacher, s.branches[1].teacher};
    const StepTargets targets = compute_targets(teachers, students, views, cfg);
    const double lambda = 0.8;
    const StepGradients sg =
        compute_student_gradients(students, views, targets, s.stats, lambda, cfg);
    for (int i = 0; i < 2; ++i)
      for (std::size_t t = 0; t < students[i].params.size(); ++t) {
        auto value = [&] {
          return compute_student_gradients(students, views, targets, s.stats, lambda, cfg)
              .losses.total;
        };
        record(std::string(wt.name) + "/student" + std::to_string(i + 1) + "/" +
                   students[i].params[t].name,
               sg.grads[i].values[t],
               testing::numeric_gradient(students[i].params[t].values, value, 1e-6));
      }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 300, "worst relative error " + fmt("%.3g", worst) + " (" +
                                          worst_name + "), " + fmt("%.1f", secs) + "s"};
}

// 3. EMA closed form.
Verdict ema_closed_form() {
  double worst = 0;
  for (double g : {0.0, 0.4, 1.0})
    for (int n : {1, 5, 20}) {
      Rng r1(1), r2(2);
      BranchState br = make_branch(tiny_arch(), r1);
      br.student = init_model(tiny_arch(), r2);
      for (auto& t : br.student.buffers)
        for (double& v : t.values) v += 0.3;
      const SegModelParams t0 = br.teacher;
      for (int k = 0; k < n; ++k) ema_update(br, g);
      const double gn = std::pow(g, n);
      for (std::size_t i = 0; i < t0.params.size(); ++i)
        for (std::size_t k = 0; k < t0.params[i].values.size(); ++k)
          worst = std::max(worst, std::abs(br.teacher.params[i].values[k] -
                                           (gn * t0.params[i].values[k] +
                                            (1 - gn) * br.student.params[i].values[k])));
      for (std::size_t i = 0; i < t0.buffers.size(); ++i)
        for (std::size_t k = 0; k < t0.buffers[i].values.size(); ++k)
          worst = std::max(worst, std::abs(br.teacher.buffers[i].values[k] -
                                           (gn * t0.buffers[i].values[k] +
                                            (1 - gn) * br.student.buffers[i].values[k])));
    }
  return {worst <= 1e-10, "max deviation " + fmt("%.3g", worst)};
}

// 4. Pseudo-labels come from the same source image as the mixed input pixel.
Verdict cutmix_source_consistency() {
  Rng rng(404);
  long long pixels = 0, violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int b = uniform_int(rng, 2, 4);
    const int h = 4 * uniform_int(rng, 1, 6), w = 4 * uniform_int(rng, 1, 6);
    const int lh = h / kOutputStride, lw = w / kOutputStride;
    // Item k has its own colour and its own winning class k.
    ImageBatch img(b, h, w, 3);
    for (int n = 0; n < b; ++n)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) img(n, y, x, c) = (n + 1) / 8.0;
    LogitsMap logits(testing::random_tensor(b, lh, lw, b, rng));
    for (int n = 0; n < b; ++n)
      for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) logits(n, y, x, n) += 10.0;
    const CutMixMask m = sample_cutmix_mask(b, h, w, rng);
    const ImageBatch mixed = apply_cutmix_images(img, roll_batch(img), m);
    const PseudoLabelResult pl = mixed_pseudo_labels(logits, m, std::nullopt);
    for (int n = 0; n < b; ++n)
      for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) {
          // Input pixel under the centre of feature (y, x).
          const double v = mixed(n, y * kOutputStride, x * kOutputStride, 0);
          const int image_source = static_cast<int>(std::lround(v * 8)) - 1;
          const int expected = m.m(n, y * kOutputStride, x * kOutputStride) ? (n + 1) % b : n;
          ++pixels;
          if (pl.labels(n, y, x) != image_source || image_source != expected) ++violations;
        }
  }
  return {violations == 0,
          std::to_string(pixels) + " pixels, " + std::to_string(violations) + " violations"};
}

// 5. Degenerate configurations.
Verdict degenerate_configs() {
  std::ostringstream os;
  bool pass = true;
  const ArchConfig arch = tiny_arch();
  const AugmentConfig aug = tiny_augment();
  {
    TrainConfig cfg = tiny_train();
    cfg.alpha = cfg.beta = 0.0;
    cfg.iters_max = 30;
    MkdState m = make_mkd_state(arch, cfg);
    SupervisedState s1 = make_supervised_state(arch, cfg, 0);
    SupervisedState s2 = make_supervised_state(arch, cfg, 1);
    Rng data(505);
    double worst = 0;
    for (int i = 0; i < cfg.iters_max; ++i) {
      const StepBatches b = random_batches(data);
      const StepReport r = train_step(m, b, cfg, aug);
      const double l = supervised_step(s1, b, cfg, aug) + supervised_step(s2, b, cfg, aug);
      worst = std::max(worst, std::abs(r.losses.total - l));
      for (int k = 0; k < 2; ++k) {
        const SegModelParams& ref = k == 0 ? s1.branch.student : s2.branch.student;
        for (std::size_t t = 0; t < ref.params.size(); ++t)
          worst = std::max(worst, testing::max_abs_diff(m.branches[k].student.params[t].values,
                                                        ref.params[t].values));
        for (std::size_t t = 0; t < ref.buffers.size(); ++t)
          worst = std::max(worst, testing::max_abs_diff(m.branches[k].student.buffers[t].values,
                                                        ref.buffers[t].values));
      }
      if (r.losses.st != 0.0 || r.losses.ss != 0.0) pass = false;
    }
    pass = pass && worst <= 1e-8;
    os << "alpha=beta=0 vs supervised: max deviation " << fmt("%.3g", worst) << "; ";
  }
  {
    TrainConfig cfg = tiny_train();
    cfg.gamma = 1.0;
    cfg.iters_max = 100;
    MkdState m = make_mkd_state(arch, cfg);
    const SegModelParams t1 = m.branches[0].teacher, t2 = m.branches[1].teacher;
    Rng data(506);
    for (int i = 0; i < 100; ++i) train_step(m, random_batches(data), cfg, aug);
    const bool frozen = m.branches[0].teacher == t1 && m.branches[1].teacher == t2 &&
                        m.branches[0].student != t1;
    pass = pass && frozen;
    os << "gamma=1 teachers " << (frozen ? "frozen" : "MOVED") << " over 100 steps; ";
  }
  {
    Rng rng(507);
    int mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const int c = 4, d = 6;
      const auto stats =
          random_stats(c, d, trial % 2 ? CovarianceKind::kFull : CovarianceKind::kDiagonal, rng);
      const FeatureMap f(testing::random_tensor(2, 3, 3, d, rng));
      std::vector<double> w(c * d), b(c);
      for (double& v : w) v = uniform(rng, -1, 1);
      for (double& v : b) v = uniform(rng, -1, 1);
      const LabelMap y = testing::random_labels(2, 3, 3, c, rng, 0.2);
      const auto a = augment_logits(f, head(w, b, c, d), y, stats, 0.0);
      for (int n = 0; n < 2; ++n)
        for (int r = 0; r < 3; ++r)
          for (int x = 0; x < 3; ++x)
            for (int k = 0; k < c; ++k) {
              double plain = b[k];
              for (int j = 0; j < d; ++j) plain += w[k * d + j] * f(n, r, x, j);
              // Same summation order as the classifier, so equality is exact.
              if (a.data(n, r, x, k) != plain) ++mismatches;
            }
    }
    pass = pass && mismatches == 0;
    os << "lambda=0 logits: " << mismatches << " mismatches";
  }
  return {pass, os.str()};
}

// 6. One step against the straight-line reference.
Verdict oracle_step_match() {
  std::ostringstream os;
  bool pass = true;
  for (auto kind : {CovarianceKind::kDiagonal, CovarianceKind::kFull}) {
    const TrainConfig cfg = tiny_train();
    MkdState s = make_mkd_state(tiny_arch(), cfg, kind);
    Rng data(606);
    for (int i = 0; i < 3; ++i) train_step(s, random_batches(data), cfg, tiny_augment());
    const StepViews views = prepare_views(random_batches(data), tiny_augment(), cfg.seed, s.step);
    const oracle::OracleStep ref = oracle::reference_step(s, views, cfg);
    MkdState got = s;
    const StepReport r = train_step_on_views(got, views, cfg);
    double loss_gap = std::max({std::abs(r.losses.total - ref.losses.total),
                                std::abs(r.losses.sup - ref.losses.sup),
                                std::abs(r.losses.st - ref.losses.st),
                                std::abs(r.losses.ss - ref.losses.ss)});
    double delta_gap = 0;
    for (int i = 0; i < 2; ++i) {
      const BranchState& a = got.branches[i];
      const BranchState& b = ref.state.branches[i];
      for (std::size_t t = 0; t < a.student.params.size(); ++t) {
        delta_gap = std::max(delta_gap, testing::max_abs_diff(a.student.params[t].values,
                                                              b.student.params[t].values));
        delta_gap = std::max(delta_gap, testing::max_abs_diff(a.teacher.params[t].values,
                                                              b.teacher.params[t].values));
        delta_gap = std::max(delta_gap,
                             testing::max_abs_diff(a.momentum.values[t], b.momentum.values[t]));
      }
      for (std::size_t t = 0; t < a.student.buffers.size(); ++t) {
        delta_gap = std::max(delta_gap, testing::max_abs_diff(a.student.buffers[t].values,
                                                              b.student.buffers[t].values));
        delta_gap = std::max(delta_gap, testing::max_abs_diff(a.teacher.buffers[t].values,
                                                              b.teacher.buffers[t].values));
      }
    }
    double stats_gap = testing::max_abs_diff(got.stats.mean, ref.state.stats.mean);
    stats_gap = std::max(stats_gap, testing::max_abs_diff(got.stats.cov, ref.state.stats.cov));
    const bool counts = got.stats.count == ref.state.stats.count;
    const bool ok = loss_gap <= 1e-8 && delta_gap <= 1e-8 && stats_gap <= 1e-8 && counts &&
                    r.losses.st > 0 && r.losses.ss > 0 && r.lambda > 0;
    pass = pass && ok;
    os << (kind == CovarianceKind::kFull ? "full" : "diagonal") << ": loss gap "
       << fmt("%.3g", loss_gap) << ", parameter gap " << fmt("%.3g", delta_gap)
       << ", statistics gap " << fmt("%.3g", stats_gap) << "; ";
  }
  return {pass, os.str()};
}

// 7. Desk-scale directional result on the synthetic scenes.
constexpr int kDeskIters = 2000;
constexpr int kDeskSeeds = 3;

struct DeskData {
  SegDataset train, val;
};

DeskData desk_data(std::uint64_t split_seed) {
  const SyntheticSceneConfig sc = default_scene_config(4, 7000);
  const SegDataset all = generate_synthetic(sc, 500);
  DeskData d;
  d.train.num_classes = d.val.num_classes = 4;
  for (int i = 0; i < 500; ++i) (i < 400 ? d.train : d.val).items.push_back(all.items[i]);
  d.train = make_partition(d.train, 8, split_seed);
  return d;
}

Verdict desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  double sum_base = 0, sum_mkd = 0, sum_co = 0;
  std::ostringstream os;
  for (int seed = 1; seed <= kDeskSeeds; ++seed) {
    const DeskData d = desk_data(static_cast<std::uint64_t>(seed));
    RunConfig cfg;
    cfg.train.iters_max = kDeskIters;
    cfg.train.seed = static_cast<std::uint64_t>(seed);
    cfg.output_dir = "";
    cfg = finalize_run_config(cfg);
    RunConfig co = cfg;
    co.train.alpha = 0.0;  // teachers off: the two students only supervise each other
    co.train.beta = 1.0;

    const SupervisedState sup = run_supervised(cfg, d.train, 0);
    const double base = miou(evaluate(sup.branch.student, d.val)).mean;
    const RunOutcome mkd = run_training(cfg, d.train, &d.val, make_mkd_state(cfg.arch, cfg.train));
    const RunOutcome cot = run_training(co, d.train, &d.val, make_mkd_state(co.arch, co.train));
    if (mkd.status != RunOutcome::Status::kCompleted ||
        cot.status != RunOutcome::Status::kCompleted) {
      return {false, "seed " + std::to_string(seed) + ": training did not complete"};
    }
    sum_base += base;
    sum_mkd += mkd.final_eval->mean;
    sum_co += cot.final_eval->mean;
    os << "seed " << seed << " base/co/mkd " << fmt("%.4f", base) << "/"
       << fmt("%.4f", cot.final_eval->mean) << "/" << fmt("%.4f", mkd.final_eval->mean) << "; ";
  }
  const double base = 100 * sum_base / kDeskSeeds, mkd = 100 * sum_mkd / kDeskSeeds,
               co = 100 * sum_co / kDeskSeeds;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  os << "mean mIoU base " << fmt("%.2f", base) << ", co-training " << fmt("%.2f", co) << ", mkd "
     << fmt("%.2f", mkd) << ", " << fmt("%.0f", secs) << "s";
  return {mkd >= base + 3.0 && co >= base && secs < 3600, os.str()};
}

// 8. mIoU on the hand instance plus invariants.
Verdict miou_correctness() {
  ConfusionMatrix hand(2);
  hand.counts = {3, 1, 1, 3};
  const double m = miou(hand).mean;
  bool pass = m == 0.6;
  Rng rng(808);
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int c = uniform_int(rng, 2, 6);
    const LabelMap p = testing::random_labels(4, 5, 5, c, rng);
    const LabelMap t = testing::random_labels(4, 5, 5, c, rng, 0.1);
    ConfusionMatrix whole(c), parts(c);
    accumulate(whole, p, t);
    for (int b = 0; b < 4; ++b) {
      ConfusionMatrix one(c);
      accumulate(one, slice_batch(p, b), slice_batch(t, b));
      parts += one;
    }
    if (!(parts == whole)) ++bad;
    std::vector<int> perm(c);
    for (int k = 0; k < c; ++k) perm[k] = k;
    std::shuffle(perm.begin(), perm.end(), rng);
    LabelMap pp = p, tp = t;
    for (auto& v : pp.values()) v = static_cast<std::uint8_t>(perm[v]);
    for (auto& v : tp.values())
      if (v != kIgnore) v = static_cast<std::uint8_t>(perm[v]);
    ConfusionMatrix permuted(c);
    accumulate(permuted, pp, tp);
    const double a = miou(whole).mean, b = miou(permuted).mean;
    if (std::abs(a - b) > 1e-12 || a < 0 || a > 1) ++bad;
  }
  pass = pass && bad == 0;
  return {pass, "hand instance " + fmt("%.17g", m) + ", " + std::to_string(bad) +
                    " property failures over 200 trials"};
}

// 9. Determinism and bitwise resume.
Verdict determinism_and_resume() {
  const fs::path root = fs::temp_directory_path() / "mkd_acceptance_resume";
  fs::remove_all(root);
  SyntheticSceneConfig sc = default_scene_config(3, 909);
  sc.height = sc.width = 16;
  sc.min_size = 4;
  sc.max_size = 8;
  const SegDataset ds = make_partition(generate_synthetic(sc, 24), 4, 1);
  const SegDataset val = generate_synthetic(sc, 4);
  RunConfig cfg;
  cfg.train = tiny_train();
  cfg.train.iters_max = 50;
  cfg.arch = tiny_arch();
  cfg.checkpoint_interval = 25;
  cfg.eval_interval = 10;
  cfg = finalize_run_config(cfg);

  auto read = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  auto run_dir = [&](const std::string& name, const RunHooks& hooks = {}) {
    RunConfig c = cfg;
    c.output_dir = (root / name).string();
    return run_training(c, ds, &val, make_mkd_state(c.arch, c.train), hooks);
  };
  const RunOutcome a = run_dir("a"), b = run_dir("b");
  const std::string log_a = read(root / "a" / "train_log.jsonl");
  const bool same_logs = !log_a.empty() && log_a == read(root / "b" / "train_log.jsonl");
  const bool same_state = a.state == b.state;

  RunHooks stop;
  stop.stop_after = 25;
  const RunOutcome first = run_dir("c", stop);
  RunConfig c = cfg;
  c.output_dir = (root / "c").string();
  const Checkpoint ck = load_checkpoint((root / "c" / "checkpoint_25.bin").string());
  const RunOutcome resumed = run_training(c, ds, &val, ck.state);
  const bool resumed_state = first.status == RunOutcome::Status::kStopped &&
                             ck.state == first.state && resumed.state == a.state;
  const bool resumed_log = read(root / "c" / "train_log.jsonl") == log_a;
  // Checkpoints embed their run config, whose output_dir differs between runs.
  const Checkpoint last = load_checkpoint((root / "c" / "checkpoint_last.bin").string());
  RunConfig config_a = last.config;
  config_a.output_dir = (root / "a").string();
  const bool resumed_ckpt =
      encode_checkpoint({config_a, last.state}) == read(root / "a" / "checkpoint_last.bin");
  const bool pass = same_logs && same_state && resumed_state && resumed_log && resumed_ckpt;
  std::ostringstream os;
  os << "logs " << (same_logs ? "identical" : "DIFFER") << ", states "
     << (same_state ? "identical" : "DIFFER") << ", resumed state "
     << (resumed_state ? "bitwise equal" : "DIFFERS") << ", resumed log "
     << (resumed_log ? "identical" : "DIFFERS") << ", final checkpoint "
     << (resumed_ckpt ? "identical" : "DIFFERS");
  fs::remove_all(root);
  return {pass, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"feature-augmentation bound vs Monte-Carlo", isda_oracle_bound},
      {"gradient checks", gradient_checks},
      {"EMA closed form", ema_closed_form},
      {"CutMix source consistency", cutmix_source_consistency},
      {"degenerate configurations", degenerate_configs},
      {"single step vs straight-line reference", oracle_step_match},
      {"desk-scale directional result", desk_scale},
      {"mIoU correctness", miou_correctness},
      {"determinism and resume", determinism_and_resume},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first,
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
