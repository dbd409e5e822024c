#include "mkd/trainer.hpp"

#include <cmath>
#include <sstream>

namespace mkd {

BranchState make_branch(const ArchConfig& arch, Rng& rng) {
  BranchState b;
  b.student = init_model(arch, rng);
  b.teacher = b.student;
  b.momentum = ModelGrads::zeros_like(b.student);
  return b;
}

SegModelParams ema_blend(const SegModelParams& teacher, const SegModelParams& student,
                         double gamma) {
  if (teacher.params.size() != student.params.size() ||
      teacher.buffers.size() != student.buffers.size()) {
    throw std::logic_error("ema_update: teacher and student layouts differ");
  }
  SegModelParams out = teacher;
  auto blend = [gamma](std::vector<double>& t, const std::vector<double>& s) {
    if (t.size() != s.size()) throw std::logic_error("ema_update: tensor shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = gamma * t[i] + (1.0 - gamma) * s[i];
  };
  for (std::size_t i = 0; i < out.params.size(); ++i)
    blend(out.params[i].values, student.params[i].values);
  for (std::size_t i = 0; i < out.buffers.size(); ++i)
    blend(out.buffers[i].values, student.buffers[i].values);
  return out;
}

void ema_update(BranchState& branch, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("ema_update: gamma outside [0, 1]");
  branch.teacher = ema_blend(branch.teacher, branch.student, gamma);
}

double poly_lr(int step, const TrainConfig& cfg) {
  if (step >= cfg.iters_max) return 0.0;
  const double frac = 1.0 - static_cast<double>(std::max(step, 0)) / cfg.iters_max;
  return cfg.lr0 * std::pow(frac, cfg.lr_power);
}

void sgd_step(SegModelParams& params, const ModelGrads& grads, ModelGrads& momentum, double lr,
              const TrainConfig& cfg) {
  for (std::size_t t = 0; t < params.params.size(); ++t) {
    auto& p = params.params[t];
    const auto& g = grads.values[t];
    auto& m = momentum.values[t];
    const double wd = p.kind == ParamKind::kWeight ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double d = g[i] + wd * p.values[i];
      m[i] = cfg.momentum * m[i] + d;
      p.values[i] -= lr * m[i];
    }
  }
}

PairLoss supervised_loss(const LogitsMap& p1, const LogitsMap& p2, const LabelMap& y) {
  PairLoss r;
  auto a = masked_cross_entropy(p1.tensor(), y);
  auto b = masked_cross_entropy(p2.tensor(), y);
  r.value = a.value + b.value;
  r.empty = {a.empty, b.empty};
  r.grad = {std::move(a.grad), std::move(b.grad)};
  return r;
}

PairLoss consistency_st_loss(const AugmentedLogits& a1, const AugmentedLogits& a2,
                             const PseudoLabelResult& t1, const PseudoLabelResult& t2) {
  PairLoss r;
  auto l1 = isda_loss(a1, t2.labels, &t2.valid);
  auto l2 = isda_loss(a2, t1.labels, &t1.valid);
  r.value = l1.value + l2.value;
  r.empty = {l1.empty, l2.empty};
  r.grad = {std::move(l1.grad), std::move(l2.grad)};
  return r;
}

PairLoss consistency_ss_loss(const AugmentedLogits& a1, const AugmentedLogits& a2,
                             const PseudoLabelResult& s1, const PseudoLabelResult& s2) {
  PairLoss r;
  auto l1 = isda_loss(a1, s2.labels, &s2.valid);
  auto l2 = isda_loss(a2, s1.labels, &s1.valid);
  r.value = l1.value + l2.value;
  r.empty = {l1.empty, l2.empty};
  r.grad = {std::move(l1.grad), std::move(l2.grad)};
  return r;
}

PairLoss consistency_ss_loss(const LogitsMap& p1, const LogitsMap& p2) {
  const auto y1 = argmax_channels(p1.tensor());
  const auto y2 = argmax_channels(p2.tensor());
  PairLoss r;
  auto l1 = masked_cross_entropy(p1.tensor(), y2);
  auto l2 = masked_cross_entropy(p2.tensor(), y1);
  r.value = l1.value + l2.value;
  r.empty = {l1.empty, l2.empty};
  r.grad = {std::move(l1.grad), std::move(l2.grad)};
  return r;
}

PseudoLabelResult mixed_pseudo_labels(const LogitsMap& p, const CutMixMask& m,
                                      std::optional<double> tau) {
  return pseudo_label(apply_cutmix_logits(p, roll_batch(p), m), tau);
}

namespace {

void labeled_views(const StepBatches& batches, const AugmentConfig& aug, std::uint64_t seed,
                   int step, StepViews& v) {
  Rng rng = make_rng(seed, streams::kAugWeak, static_cast<std::uint64_t>(step), 0);
  auto w = weak_augment(batches.labeled_images, &batches.labels, aug, rng);
  v.labeled_weak = std::move(w.images);
  v.labeled_targets = std::move(*w.labels);
}

ClassifierView head_of(const SegModelParams& p) {
  return {p.classifier_weight(), p.classifier_bias(), p.arch.num_classes, p.arch.feature_dim};
}

bool all_finite(const StepLosses& l) {
  return std::isfinite(l.sup) && std::isfinite(l.st) && std::isfinite(l.ss) &&
         std::isfinite(l.total);
}

}  // namespace

StepViews prepare_views(const StepBatches& batches, const AugmentConfig& aug, std::uint64_t seed,
                        int step) {
  StepViews v;
  labeled_views(batches, aug, seed, step, v);
  const auto s = static_cast<std::uint64_t>(step);
  Rng weak = make_rng(seed, streams::kAugWeak, s, 1);
  Rng strong = make_rng(seed, streams::kAugStrong, s);
  Rng cut = make_rng(seed, streams::kCutMix, s);
  AugmentedPair pair = make_augmented_pair(batches.unlabeled_images, aug, weak, strong);
  v.unlabeled_weak = std::move(pair.weak_view);
  v.unlabeled_strong = std::move(pair.strong_view);
  v.mask = sample_cutmix_mask(v.unlabeled_strong.batch(), v.unlabeled_strong.height(),
                              v.unlabeled_strong.width(), cut, aug.cutmix_beta_a,
                              aug.cutmix_beta_b);
  v.unlabeled_mixed =
      apply_cutmix_images(v.unlabeled_strong, roll_batch(v.unlabeled_strong), v.mask);
  return v;
}

MkdState make_mkd_state(const ArchConfig& arch, const TrainConfig& cfg, CovarianceKind kind) {
  validate_config(cfg);
  if (arch.num_classes != cfg.num_classes) {
    throw ValidationError("arch.num_classes differs from train.num_classes");
  }
  MkdState s;
  Rng r1 = make_rng(cfg.seed, streams::kInitStudent1);
  Rng r2 = make_rng(cfg.seed, streams::kInitStudent2);
  s.branches[0] = make_branch(arch, r1);
  s.branches[1] = make_branch(arch, r2);
  s.stats = ClassFeatureStatistics::empty(arch.num_classes, arch.feature_dim, kind);
  return s;
}

StepTargets compute_targets(const std::array<SegModelParams, 2>& teachers,
                            const std::array<SegModelParams, 2>& students, const StepViews& views,
                            const TrainConfig& cfg) {
  StepTargets t;
  if (cfg.alpha > 0.0) {
    for (int i = 0; i < 2; ++i) {
      const auto out = forward(teachers[i], views.unlabeled_weak, Mode::kEval);
      t.teacher[i] = mixed_pseudo_labels(out.logits, views.mask, cfg.tau);
    }
  }
  if (cfg.beta > 0.0) {
    const std::optional<double> tau = cfg.tau_on_ss ? cfg.tau : std::nullopt;
    for (int i = 0; i < 2; ++i) {
      const auto out = forward(students[i], views.unlabeled_strong, Mode::kTrain);
      t.student[i] = mixed_pseudo_labels(out.logits, views.mask, tau);
    }
  }
  return t;
}

StepGradients compute_student_gradients(const std::array<SegModelParams, 2>& students,
                                        const StepViews& views, const StepTargets& targets,
                                        const ClassFeatureStatistics& stats, double lambda,
                                        const TrainConfig& cfg) {
  StepGradients sg;
  const int h = views.labeled_targets.height(), w = views.labeled_targets.width();

  std::array<LogitsMap, 2> up;
  std::array<LogitsMap, 2> low_shape;
  for (int i = 0; i < 2; ++i) {
    auto out = forward(students[i], views.labeled_weak, Mode::kTrain, &sg.labeled_cache[i]);
    up[i] = upsample_logits(out.logits, h, w);
    low_shape[i] = std::move(out.logits);
    sg.labeled_features[i] = std::move(out.features);
  }
  const PairLoss sup = supervised_loss(up[0], up[1], views.labeled_targets);
  for (int i = 0; i < 2; ++i) {
    const LogitsMap g = upsample_logits_backward(LogitsMap(sup.grad[i]), low_shape[i].height(),
                                                 low_shape[i].width());
    sg.grads[i] = backward(students[i], sg.labeled_cache[i], nullptr, &g);
  }
  sg.losses.sup = sup.value;

  const bool use_st = cfg.alpha > 0.0, use_ss = cfg.beta > 0.0;
  if (use_st || use_ss) {
    std::array<ForwardCache, 2> cache;
    for (int i = 0; i < 2; ++i) {
      auto out = forward(students[i], views.unlabeled_mixed, Mode::kTrain, &cache[i]);
      sg.unlabeled_features[i] = std::move(out.features);
    }
    std::array<AugmentedLogits, 2> a_st, a_ss;
    PairLoss st, ss;
    for (int i = 0; i < 2; ++i) {
      const int other = 1 - i;
      const auto head = head_of(students[i]);
      if (use_st) {
        a_st[i] = augment_logits(sg.unlabeled_features[i], head, targets.teacher[other].labels,
                                 stats, lambda);
      }
      if (use_ss) {
        a_ss[i] = augment_logits(sg.unlabeled_features[i], head, targets.student[other].labels,
                                 stats, lambda);
      }
    }
    if (use_st) {
      st = consistency_st_loss(a_st[0], a_st[1], targets.teacher[0], targets.teacher[1]);
      sg.losses.st = st.value;
    }
    if (use_ss) {
      ss = consistency_ss_loss(a_ss[0], a_ss[1], targets.student[0], targets.student[1]);
      sg.losses.ss = ss.value;
    }
    for (int i = 0; i < 2; ++i) {
      const int other = 1 - i;
      const auto head = head_of(students[i]);
      const auto& f = sg.unlabeled_features[i];
      FeatureMap grad_f(f.batch(), f.height(), f.width(), f.channels(), 0.0);
      auto& gw = sg.grads[i].values[SegModelParams::kClassifierWeight];
      auto& gb = sg.grads[i].values[SegModelParams::kClassifierBias];
      auto accumulate = [&](const PairLoss& loss, double weight, const LabelMap& target) {
        Tensor4 g = loss.grad[i];
        for (double& v : g.values()) v *= weight;
        const auto ag = augment_logits_backward(f, head, target, stats, lambda, g);
        for (std::size_t k = 0; k < grad_f.tensor().size(); ++k)
          grad_f.tensor().values()[k] += ag.grad_features.tensor().values()[k];
        for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += ag.grad_weight[k];
        for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += ag.grad_bias[k];
      };
      if (use_st) accumulate(st, cfg.alpha, targets.teacher[other].labels);
      if (use_ss) accumulate(ss, cfg.beta, targets.student[other].labels);
      sg.grads[i] += backward(students[i], cache[i], &grad_f, nullptr);
    }
  }
  sg.losses.total = sg.losses.sup + cfg.alpha * sg.losses.st + cfg.beta * sg.losses.ss;
  return sg;
}

StepReport train_step_on_views(MkdState& state, const StepViews& views, const TrainConfig& cfg) {
  const std::array<SegModelParams, 2> teachers{
      ema_blend(state.branches[0].teacher, state.branches[0].student, cfg.gamma),
      ema_blend(state.branches[1].teacher, state.branches[1].student, cfg.gamma)};
  const std::array<SegModelParams, 2> students{state.branches[0].student,
                                               state.branches[1].student};

  const StepTargets targets = compute_targets(teachers, students, views, cfg);
  const double lambda = lambda_schedule(cfg.lambda0, state.step, cfg.iters_max);
  StepGradients sg =
      compute_student_gradients(students, views, targets, state.stats, lambda, cfg);

  if (!all_finite(sg.losses)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << ": sup=" << sg.losses.sup
       << " st=" << sg.losses.st << " ss=" << sg.losses.ss << " total=" << sg.losses.total;
    throw NonFiniteLossError(os.str(), sg.losses);
  }

  StepReport report;
  report.step = state.step;
  report.losses = sg.losses;
  report.lr = poly_lr(state.step, cfg);
  report.lambda = lambda;
  for (int i = 0; i < 2; ++i) {
    const int other = 1 - i;
    if (cfg.alpha > 0.0) {
      report.valid_fraction[i] = targets.teacher[other].valid_fraction();
    } else if (cfg.beta > 0.0) {
      report.valid_fraction[i] = targets.student[other].valid_fraction();
    }
  }

  for (int i = 0; i < 2; ++i) {
    BranchState& br = state.branches[i];
    br.teacher = teachers[i];
    sgd_step(br.student, sg.grads[i], br.momentum, report.lr, cfg);
    update_running_stats(br.student, sg.labeled_cache[i]);
  }

  const auto& f0 = sg.labeled_features[0];
  update_statistics_inplace(
      state.stats, f0, downsample_nearest(views.labeled_targets, f0.height(), f0.width()));
  if (cfg.alpha > 0.0 || cfg.beta > 0.0) {
    for (int i = 0; i < 2; ++i) {
      const int other = 1 - i;
      const PseudoLabelResult& t =
          cfg.alpha > 0.0 ? targets.teacher[other] : targets.student[other];
      update_statistics_inplace(state.stats, sg.unlabeled_features[i], t.labels, &t.valid);
    }
  }
  ++state.step;
  return report;
}

StepReport train_step(MkdState& state, const StepBatches& batches, const TrainConfig& cfg,
                      const AugmentConfig& aug) {
  const StepViews views = prepare_views(batches, aug, cfg.seed, state.step);
  return train_step_on_views(state, views, cfg);
}

SupervisedState make_supervised_state(const ArchConfig& arch, const TrainConfig& cfg,
                                      int branch_index) {
  validate_config(cfg);
  Rng rng = make_rng(cfg.seed,
                     branch_index == 0 ? streams::kInitStudent1 : streams::kInitStudent2);
  SupervisedState s;
  s.branch = make_branch(arch, rng);
  return s;
}

double supervised_step(SupervisedState& state, const StepBatches& batches, const TrainConfig& cfg,
                       const AugmentConfig& aug) {
  StepViews v;
  labeled_views(batches, aug, cfg.seed, state.step, v);
  SegModelParams& p = state.branch.student;
  ForwardCache cache;
  const auto out = forward(p, v.labeled_weak, Mode::kTrain, &cache);
  const auto up = upsample_logits(out.logits, v.labeled_targets.height(),
                                  v.labeled_targets.width());
  const auto loss = masked_cross_entropy(up.tensor(), v.labeled_targets);
  if (!std::isfinite(loss.value)) {
    throw NonFiniteLossError("non-finite supervised loss", StepLosses{loss.value, 0, 0, loss.value});
  }
  const LogitsMap g =
      upsample_logits_backward(LogitsMap(loss.grad), out.logits.height(), out.logits.width());
  const ModelGrads grads = backward(p, cache, nullptr, &g);
  sgd_step(p, grads, state.branch.momentum, poly_lr(state.step, cfg), cfg);
  update_running_stats(p, cache);
  ++state.step;
  return loss.value;
}

}  // namespace mkd
