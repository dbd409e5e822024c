#include "oracle_step.hpp"

#include <algorithm>
#include <cmath>

namespace mkd::oracle {

namespace {

struct Net {
  const ArchConfig* arch;
  std::vector<std::vector<double>> p;  // learnable tensors, model order
  std::vector<std::vector<double>> r;  // running mean / var per block
};

Net to_net(const SegModelParams& m) {
  Net n{&m.arch, {}, {}};
  for (const auto& t : m.params) n.p.push_back(t.values);
  for (const auto& t : m.buffers) n.r.push_back(t.values);
  return n;
}

struct BatchStats {
  std::vector<double> mean, var;
  int count = 0;
};

Tensor4 conv_bn_relu(const Tensor4& in, const Net& net, int block, int cout, int stride,
                     bool train, BatchStats* stats) {
  const int cin = in.channels();
  const int ho = (in.height() - 1) / stride + 1, wo = (in.width() - 1) / stride + 1;
  const auto& w = net.p[3 * block];
  const auto& gamma = net.p[3 * block + 1];
  const auto& beta = net.p[3 * block + 2];
  Tensor4 pre(in.batch(), ho, wo, cout, 0.0);
  for (int b = 0; b < in.batch(); ++b)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x)
        for (int co = 0; co < cout; ++co) {
          double s = 0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = y * stride + ky - 1, sx = x * stride + kx - 1;
              if (sy < 0 || sx < 0 || sy >= in.height() || sx >= in.width()) continue;
              for (int ci = 0; ci < cin; ++ci)
                s += in(b, sy, sx, ci) * w[((ky * 3 + kx) * cin + ci) * cout + co];
            }
          pre(b, y, x, co) = s;
        }
  std::vector<double> mean(cout, 0.0), var(cout, 0.0);
  const int n = in.batch() * ho * wo;
  if (train) {
    for (int co = 0; co < cout; ++co) {
      double s = 0;
      for (int b = 0; b < in.batch(); ++b)
        for (int y = 0; y < ho; ++y)
          for (int x = 0; x < wo; ++x) s += pre(b, y, x, co);
      mean[co] = s / n;
      double q = 0;
      for (int b = 0; b < in.batch(); ++b)
        for (int y = 0; y < ho; ++y)
          for (int x = 0; x < wo; ++x) q += (pre(b, y, x, co) - mean[co]) * (pre(b, y, x, co) - mean[co]);
      var[co] = q / n;
    }
  } else {
    mean = net.r[2 * block];
    var = net.r[2 * block + 1];
  }
  if (stats) *stats = {mean, var, n};
  Tensor4 out(in.batch(), ho, wo, cout);
  for (int b = 0; b < in.batch(); ++b)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x)
        for (int co = 0; co < cout; ++co) {
          const double z = (pre(b, y, x, co) - mean[co]) / std::sqrt(var[co] + net.arch->bn_eps);
          out(b, y, x, co) = std::max(0.0, gamma[co] * z + beta[co]);
        }
  return out;
}

struct Out {
  Tensor4 features, logits;
  std::array<BatchStats, 4> stats;
};

Out run(const Net& net, const ImageBatch& img, bool train) {
  const ArchConfig& a = *net.arch;
  Out o;
  const Tensor4 e1 = conv_bn_relu(img.tensor(), net, 0, a.widths[0], 2, train, &o.stats[0]);
  const Tensor4 e2 = conv_bn_relu(e1, net, 1, a.widths[1], 2, train, &o.stats[1]);
  const Tensor4 e3 = conv_bn_relu(e2, net, 2, a.widths[2], 2, train, &o.stats[2]);
  Tensor4 cat(e2.batch(), e2.height(), e2.width(), a.widths[2] + a.widths[1]);
  for (int b = 0; b < cat.batch(); ++b)
    for (int y = 0; y < cat.height(); ++y)
      for (int x = 0; x < cat.width(); ++x) {
        for (int k = 0; k < a.widths[2]; ++k) cat(b, y, x, k) = e3(b, y / 2, x / 2, k);
        for (int k = 0; k < a.widths[1]; ++k) cat(b, y, x, a.widths[2] + k) = e2(b, y, x, k);
      }
  o.features = conv_bn_relu(cat, net, 3, a.feature_dim, 1, train, &o.stats[3]);
  const auto& w = net.p[12];
  const auto& bias = net.p[13];
  const Tensor4& f = o.features;
  o.logits = Tensor4(f.batch(), f.height(), f.width(), a.num_classes);
  for (int b = 0; b < f.batch(); ++b)
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x)
        for (int k = 0; k < a.num_classes; ++k) {
          double s = bias[k];
          for (int d = 0; d < a.feature_dim; ++d) s += w[k * a.feature_dim + d] * f(b, y, x, d);
          o.logits(b, y, x, k) = s;
        }
  return o;
}

Tensor4 bilinear(const Tensor4& p, int oh, int ow) {
  auto src = [](int o, int in, int out, int& i0, int& i1, double& t) {
    double s = (o + 0.5) * in / out - 0.5;
    if (s < 0) s = 0;
    i0 = std::min(static_cast<int>(std::floor(s)), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    t = s - i0;
  };
  Tensor4 out(p.batch(), oh, ow, p.channels());
  for (int y = 0; y < oh; ++y) {
    int y0, y1;
    double ty;
    src(y, p.height(), oh, y0, y1, ty);
    for (int x = 0; x < ow; ++x) {
      int x0, x1;
      double tx;
      src(x, p.width(), ow, x0, x1, tx);
      for (int b = 0; b < p.batch(); ++b)
        for (int k = 0; k < p.channels(); ++k)
          out(b, y, x, k) = (1 - ty) * ((1 - tx) * p(b, y0, x0, k) + tx * p(b, y0, x1, k)) +
                            ty * ((1 - tx) * p(b, y1, x0, k) + tx * p(b, y1, x1, k));
    }
  }
  return out;
}

double neg_log_softmax(const std::vector<double>& s, int t) {
  double m = s[0];
  for (double v : s) m = std::max(m, v);
  double z = 0;
  for (double v : s) z += std::exp(v - m);
  return m + std::log(z) - s[t];
}

double mean_ce(const Tensor4& scores, const LabelMap& y) {
  double sum = 0;
  int n = 0;
  std::vector<double> s(scores.channels());
  for (int b = 0; b < y.batch(); ++b)
    for (int r = 0; r < y.height(); ++r)
      for (int c = 0; c < y.width(); ++c) {
        if (y(b, r, c) == kIgnore) continue;
        for (int k = 0; k < scores.channels(); ++k) s[k] = scores(b, r, c, k);
        sum += neg_log_softmax(s, y(b, r, c));
        ++n;
      }
  return n ? sum / n : 0.0;
}

std::vector<double> sigma(const ClassFeatureStatistics& st, int c) {
  const int d = st.dim;
  std::vector<double> s(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      if (st.kind == CovarianceKind::kFull) {
        s[i * d + j] = st.cov[(static_cast<std::size_t>(c) * d + i) * d + j];
      } else if (i == j) {
        s[i * d + i] = st.cov[static_cast<std::size_t>(c) * d + i];
      }
    }
  return s;
}

/// Mean over valid pixels of CE of the augmented logits.
double isda_ce(const Tensor4& f, const Net& net, const LabelMap& y, const BinaryMask& valid,
               const ClassFeatureStatistics& st, double lambda) {
  const int cn = net.arch->num_classes, d = net.arch->feature_dim;
  const auto& w = net.p[12];
  const auto& bias = net.p[13];
  double sum = 0;
  int n = 0;
  std::vector<double> s(cn);
  for (int b = 0; b < y.batch(); ++b)
    for (int r = 0; r < y.height(); ++r)
      for (int c = 0; c < y.width(); ++c) {
        if (!valid(b, r, c)) continue;
        const int t = y(b, r, c);
        const auto sg = sigma(st, t);
        for (int j = 0; j < cn; ++j) {
          double v = bias[j];
          for (int k = 0; k < d; ++k) v += w[j * d + k] * f(b, r, c, k);
          double q = 0;
          for (int k = 0; k < d; ++k)
            for (int l = 0; l < d; ++l)
              q += (w[j * d + k] - w[t * d + k]) * sg[k * d + l] * (w[j * d + l] - w[t * d + l]);
          s[j] = v + 0.5 * lambda * q;
        }
        sum += neg_log_softmax(s, t);
        ++n;
      }
  return n ? sum / n : 0.0;
}

struct Targets {
  LabelMap labels;
  BinaryMask valid;
};

/// Pseudo-labels of the CutMix-mixed logits: pixel (b, r, c) reads item b, or
/// item b + 1 inside the box, at the input pixel under the feature centre.
Targets mixed_targets(const Tensor4& logits, const CutMixMask& mask, std::optional<double> tau) {
  const int bn = logits.batch(), h = logits.height(), w = logits.width(), cn = logits.channels();
  const int H = mask.m.height(), W = mask.m.width();
  Targets t{LabelMap(bn, h, w), BinaryMask(bn, h, w)};
  for (int b = 0; b < bn; ++b)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int src = mask.m(b, r * H / h, c * W / w) ? (b + 1) % bn : b;
        int best = 0;
        for (int k = 1; k < cn; ++k)
          if (logits(src, r, c, k) > logits(src, r, c, best)) best = k;
        double z = 0;
        for (int k = 0; k < cn; ++k) z += std::exp(logits(src, r, c, k) - logits(src, r, c, best));
        t.labels(b, r, c) = static_cast<std::uint8_t>(best);
        t.valid(b, r, c) = !tau || 1.0 / z >= *tau;
      }
  return t;
}

struct Terms {
  double sup = 0, st = 0, ss = 0;
};

Terms branch_terms(const Net& net, const StepViews& v, const Targets* st_target,
                   const Targets* ss_target, const ClassFeatureStatistics& stats, double lambda) {
  Terms t;
  const Out lab = run(net, v.labeled_weak, true);
  t.sup = mean_ce(bilinear(lab.logits, v.labeled_targets.height(), v.labeled_targets.width()),
                  v.labeled_targets);
  if (st_target || ss_target) {
    const Out mix = run(net, v.unlabeled_mixed, true);
    if (st_target)
      t.st = isda_ce(mix.features, net, st_target->labels, st_target->valid, stats, lambda);
    if (ss_target)
      t.ss = isda_ce(mix.features, net, ss_target->labels, ss_target->valid, stats, lambda);
  }
  return t;
}

/// Count-weighted merge of new samples into (count, mean, population covariance).
void merge(ClassFeatureStatistics& st, const std::vector<std::vector<std::vector<double>>>& xs) {
  const int d = st.dim;
  for (int c = 0; c < st.num_classes; ++c) {
    const auto& samples = xs[c];
    if (samples.empty()) continue;
    const double n0 = static_cast<double>(st.count[c]);
    const double n = n0 + samples.size();
    const auto s0 = sigma(st, c);
    std::vector<double> sum(d, 0.0), sq(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) sum[i] = n0 * st.mean[c * d + i];
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        sq[i * d + j] = n0 * (s0[i * d + j] + st.mean[c * d + i] * st.mean[c * d + j]);
    for (const auto& x : samples)
      for (int i = 0; i < d; ++i) {
        sum[i] += x[i];
        for (int j = 0; j < d; ++j) sq[i * d + j] += x[i] * x[j];
      }
    for (int i = 0; i < d; ++i) st.mean[c * d + i] = sum[i] / n;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        const double v = sq[i * d + j] / n - st.mean[c * d + i] * st.mean[c * d + j];
        if (st.kind == CovarianceKind::kFull) {
          st.cov[(static_cast<std::size_t>(c) * d + i) * d + j] = v;
        } else if (i == j) {
          st.cov[static_cast<std::size_t>(c) * d + i] = v;
        }
      }
    st.count[c] += static_cast<std::int64_t>(samples.size());
  }
}

void collect(std::vector<std::vector<std::vector<double>>>& xs, const Tensor4& f,
             const LabelMap& y, const BinaryMask* valid) {
  for (int b = 0; b < f.batch(); ++b)
    for (int r = 0; r < f.height(); ++r)
      for (int c = 0; c < f.width(); ++c) {
        if (y(b, r, c) == kIgnore || (valid && !(*valid)(b, r, c))) continue;
        std::vector<double> x(f.channels());
        for (int k = 0; k < f.channels(); ++k) x[k] = f(b, r, c, k);
        xs[y(b, r, c)].push_back(std::move(x));
      }
}

}  // namespace

OracleStep reference_step(const MkdState& state, const StepViews& v, const TrainConfig& cfg) {
  OracleStep out;
  out.state = state;
  const double g = cfg.gamma;
  const double lambda = cfg.lambda0 * state.step / cfg.iters_max;
  const double lr =
      state.step >= cfg.iters_max
          ? 0.0
          : cfg.lr0 * std::pow(1.0 - static_cast<double>(state.step) / cfg.iters_max, cfg.lr_power);

  // Teachers: EMA of the pre-step students.
  std::array<Net, 2> students, teachers;
  for (int i = 0; i < 2; ++i) {
    students[i] = to_net(state.branches[i].student);
    teachers[i] = to_net(state.branches[i].teacher);
    for (std::size_t t = 0; t < teachers[i].p.size(); ++t)
      for (std::size_t k = 0; k < teachers[i].p[t].size(); ++k)
        teachers[i].p[t][k] = g * teachers[i].p[t][k] + (1 - g) * students[i].p[t][k];
    for (std::size_t t = 0; t < teachers[i].r.size(); ++t)
      for (std::size_t k = 0; k < teachers[i].r[t].size(); ++k)
        teachers[i].r[t][k] = g * teachers[i].r[t][k] + (1 - g) * students[i].r[t][k];
  }

  std::array<Targets, 2> tt, ts;
  for (int i = 0; i < 2; ++i) {
    if (cfg.alpha > 0)
      tt[i] = mixed_targets(run(teachers[i], v.unlabeled_weak, false).logits, v.mask, cfg.tau);
    if (cfg.beta > 0)
      ts[i] = mixed_targets(run(students[i], v.unlabeled_strong, true).logits, v.mask,
                            cfg.tau_on_ss ? cfg.tau : std::nullopt);
  }

  auto branch_loss = [&](int i, const Net& net, Terms* terms) {
    const int o = 1 - i;
    const Terms t = branch_terms(net, v, cfg.alpha > 0 ? &tt[o] : nullptr,
                                 cfg.beta > 0 ? &ts[o] : nullptr, state.stats, lambda);
    if (terms) *terms = t;
    return t.sup + cfg.alpha * t.st + cfg.beta * t.ss;
  };

  for (int i = 0; i < 2; ++i) {
    Terms t;
    branch_loss(i, students[i], &t);
    out.losses.sup += t.sup;
    out.losses.st += t.st;
    out.losses.ss += t.ss;
  }
  out.losses.total = out.losses.sup + cfg.alpha * out.losses.st + cfg.beta * out.losses.ss;

  const double h = 1e-6;
  for (int i = 0; i < 2; ++i) {
    Net net = students[i];
    BranchState& br = out.state.branches[i];
    for (std::size_t t = 0; t < net.p.size(); ++t) {
      const double wd = br.student.params[t].kind == ParamKind::kWeight ? cfg.weight_decay : 0.0;
      for (std::size_t k = 0; k < net.p[t].size(); ++k) {
        const double keep = net.p[t][k];
        net.p[t][k] = keep + h;
        const double up = branch_loss(i, net, nullptr);
        net.p[t][k] = keep - h;
        const double down = branch_loss(i, net, nullptr);
        net.p[t][k] = keep;
        const double grad = (up - down) / (2 * h);
        double& m = br.momentum.values[t][k];
        m = cfg.momentum * m + grad + wd * keep;
        br.student.params[t].values[k] = keep - lr * m;
      }
    }
    for (std::size_t t = 0; t < teachers[i].p.size(); ++t) br.teacher.params[t].values = teachers[i].p[t];
    for (std::size_t t = 0; t < teachers[i].r.size(); ++t) br.teacher.buffers[t].values = teachers[i].r[t];

    const Out lab = run(students[i], v.labeled_weak, true);
    const double mom = state.branches[i].student.arch.bn_momentum;
    for (int blk = 0; blk < 4; ++blk) {
      const BatchStats& bs = lab.stats[blk];
      auto& rm = br.student.buffers[2 * blk].values;
      auto& rv = br.student.buffers[2 * blk + 1].values;
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (1 - mom) * rm[c] + mom * bs.mean[c];
        rv[c] = (1 - mom) * rv[c] + mom * bs.var[c] * bs.count / (bs.count - 1.0);
      }
    }
  }

  // Class statistics: labeled features of student 1, then each student's
  // unlabeled features under the labels it was trained against.
  std::vector<std::vector<std::vector<double>>> xs(state.stats.num_classes);
  const Out lab = run(students[0], v.labeled_weak, true);
  const Tensor4& f = lab.features;
  LabelMap small(f.batch(), f.height(), f.width());
  const int H = v.labeled_targets.height(), W = v.labeled_targets.width();
  for (int b = 0; b < f.batch(); ++b)
    for (int r = 0; r < f.height(); ++r)
      for (int c = 0; c < f.width(); ++c)
        small(b, r, c) = v.labeled_targets(b, r * H / f.height(), c * W / f.width());
  collect(xs, f, small, nullptr);
  if (cfg.alpha > 0 || cfg.beta > 0) {
    for (int i = 0; i < 2; ++i) {
      const Targets& t = cfg.alpha > 0 ? tt[1 - i] : ts[1 - i];
      collect(xs, run(students[i], v.unlabeled_mixed, true).features, t.labels, &t.valid);
    }
  }
  merge(out.state.stats, xs);
  ++out.state.step;
  return out;
}

}  // namespace mkd::oracle
