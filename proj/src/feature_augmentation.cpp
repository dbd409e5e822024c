#include "mkd/feature_augmentation.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace mkd {

ClassFeatureStatistics ClassFeatureStatistics::empty(int num_classes, int dim,
                                                     CovarianceKind kind) {
  if (num_classes < 1 || dim < 1) throw ValidationError("ClassFeatureStatistics: empty shape");
  if (kind == CovarianceKind::kFull && dim > kMaxFullCovarianceDim) {
    throw ValidationError("ClassFeatureStatistics: full covariance limited to D <= " +
                          std::to_string(kMaxFullCovarianceDim));
  }
  ClassFeatureStatistics s;
  s.num_classes = num_classes;
  s.dim = dim;
  s.kind = kind;
  s.count.assign(num_classes, 0);
  s.mean.assign(static_cast<std::size_t>(num_classes) * dim, 0.0);
  const std::size_t per = kind == CovarianceKind::kFull ? static_cast<std::size_t>(dim) * dim : dim;
  s.cov.assign(num_classes * per, 0.0);
  return s;
}

std::vector<double> ClassFeatureStatistics::covariance_matrix(int c) const {
  std::vector<double> m(static_cast<std::size_t>(dim) * dim, 0.0);
  const auto cv = class_cov(c);
  if (kind == CovarianceKind::kFull) {
    std::copy(cv.begin(), cv.end(), m.begin());
  } else {
    for (int i = 0; i < dim; ++i) m[static_cast<std::size_t>(i) * dim + i] = cv[i];
  }
  return m;
}

void update_statistics_inplace(ClassFeatureStatistics& s, const FeatureMap& f,
                               const LabelMap& labels, const BinaryMask* valid) {
  if (f.channels() != s.dim) throw ValidationError("update_statistics: feature dim mismatch");
  if (labels.batch() != f.batch() || labels.height() != f.height() ||
      labels.width() != f.width()) {
    throw ValidationError("update_statistics: labels must be at feature resolution");
  }
  const int d = s.dim;
  const bool full = s.kind == CovarianceKind::kFull;
  const std::size_t per = full ? static_cast<std::size_t>(d) * d : d;

  std::vector<std::int64_t> n_b(s.num_classes, 0);
  std::vector<double> mean_b(s.mean.size(), 0.0);
  auto usable = [&](int b, int y, int x) {
    const auto t = labels(b, y, x);
    return t != kIgnore && (!valid || (*valid)(b, y, x));
  };
  for (int b = 0; b < f.batch(); ++b)
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) {
        if (!usable(b, y, x)) continue;
        const int c = labels(b, y, x);
        if (c >= s.num_classes) throw ValidationError("update_statistics: class out of range");
        ++n_b[c];
        const double* v = f.pixel(b, y, x);
        for (int k = 0; k < d; ++k) mean_b[c * d + k] += v[k];
      }
  for (int c = 0; c < s.num_classes; ++c)
    if (n_b[c] > 0)
      for (int k = 0; k < d; ++k) mean_b[c * d + k] /= static_cast<double>(n_b[c]);

  // Sum of squared deviations from the batch mean.
  std::vector<double> m2_b(s.cov.size(), 0.0);
  for (int b = 0; b < f.batch(); ++b)
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) {
        if (!usable(b, y, x)) continue;
        const int c = labels(b, y, x);
        const double* v = f.pixel(b, y, x);
        double* m2 = m2_b.data() + c * per;
        const double* mu = mean_b.data() + c * d;
        if (full) {
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m2[i * d + j] += (v[i] - mu[i]) * (v[j] - mu[j]);
        } else {
          for (int k = 0; k < d; ++k) m2[k] += (v[k] - mu[k]) * (v[k] - mu[k]);
        }
      }

  for (int c = 0; c < s.num_classes; ++c) {
    if (n_b[c] == 0) continue;
    const double na = static_cast<double>(s.count[c]);
    const double nb = static_cast<double>(n_b[c]);
    const double n = na + nb;
    double* mu = s.mean.data() + c * d;
    const double* mub = mean_b.data() + c * d;
    double* cov = s.cov.data() + c * per;
    const double* m2 = m2_b.data() + c * per;
    std::vector<double> delta(d);
    for (int k = 0; k < d; ++k) delta[k] = mub[k] - mu[k];
    const double cross = na * nb / n;
    if (full) {
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          const std::size_t ij = static_cast<std::size_t>(i) * d + j;
          cov[ij] = (na * cov[ij] + m2[ij] + cross * delta[i] * delta[j]) / n;
        }
    } else {
      for (int k = 0; k < d; ++k) cov[k] = (na * cov[k] + m2[k] + cross * delta[k] * delta[k]) / n;
    }
    for (int k = 0; k < d; ++k) mu[k] += delta[k] * nb / n;
    s.count[c] += n_b[c];
  }
}

ClassFeatureStatistics update_statistics(ClassFeatureStatistics stats, const FeatureMap& f,
                                         const LabelMap& labels, const BinaryMask* valid) {
  update_statistics_inplace(stats, f, labels, valid);
  return stats;
}

namespace {

void check_head(const ClassifierView& h, const ClassFeatureStatistics& s, int feature_dim) {
  if (h.dim != feature_dim || h.dim != s.dim || h.num_classes != s.num_classes ||
      h.weight.size() != static_cast<std::size_t>(h.num_classes) * h.dim ||
      h.bias.size() != static_cast<std::size_t>(h.num_classes)) {
    throw ValidationError("feature augmentation: classifier / statistics shape mismatch");
  }
}

// Sigma_y v for v = w_j - w_y.
std::vector<double> sigma_times(const ClassFeatureStatistics& s, int y, const double* v) {
  const int d = s.dim;
  std::vector<double> out(d, 0.0);
  const auto cov = s.class_cov(y);
  if (s.kind == CovarianceKind::kFull) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out[i] += cov[static_cast<std::size_t>(i) * d + j] * v[j];
  } else {
    for (int i = 0; i < d; ++i) out[i] = cov[i] * v[i];
  }
  return out;
}

// quad[y * C + j] = (lambda / 2) (w_j - w_y)^T Sigma_y (w_j - w_y); zero for unseen classes.
std::vector<double> quadratic_terms(const ClassifierView& h, const ClassFeatureStatistics& s,
                                    double lambda) {
  const int c = h.num_classes, d = h.dim;
  std::vector<double> quad(static_cast<std::size_t>(c) * c, 0.0);
  if (lambda == 0.0) return quad;
  std::vector<double> v(d);
  for (int y = 0; y < c; ++y) {
    if (s.count[y] == 0) continue;
    for (int j = 0; j < c; ++j) {
      if (j == y) continue;
      for (int k = 0; k < d; ++k) v[k] = h.weight[j * d + k] - h.weight[y * d + k];
      const auto sv = sigma_times(s, y, v.data());
      double q = 0.0;
      for (int k = 0; k < d; ++k) q += v[k] * sv[k];
      quad[y * c + j] = 0.5 * lambda * q;
    }
  }
  return quad;
}

}  // namespace

AugmentedLogits augment_logits(const FeatureMap& f, const ClassifierView& h,
                               const LabelMap& target, const ClassFeatureStatistics& s,
                               double lambda) {
  check_head(h, s, f.channels());
  if (target.batch() != f.batch() || target.height() != f.height() ||
      target.width() != f.width()) {
    throw ValidationError("augment_logits: target must be at feature resolution");
  }
  if (!(lambda >= 0.0)) throw ValidationError("augment_logits: lambda must be >= 0");
  const int c = h.num_classes, d = h.dim;
  const auto quad = quadratic_terms(h, s, lambda);
  AugmentedLogits out;
  out.lambda_used = lambda;
  out.data = LogitsMap(f.batch(), f.height(), f.width(), c);
  out.valid = BinaryMask(f.batch(), f.height(), f.width(), 1);
  for (int b = 0; b < f.batch(); ++b)
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) {
        const double* fv = f.pixel(b, y, x);
        double* o = out.data.pixel(b, y, x);
        for (int j = 0; j < c; ++j) {
          double acc = h.bias[j];
          for (int k = 0; k < d; ++k) acc += h.weight[j * d + k] * fv[k];
          o[j] = acc;
        }
        const auto t = target(b, y, x);
        if (t == kIgnore) {
          out.valid(b, y, x) = 0;
          continue;
        }
        if (t >= c) throw ValidationError("augment_logits: target class out of range");
        for (int j = 0; j < c; ++j) o[j] += quad[t * c + j];
      }
  return out;
}

AugmentGrads augment_logits_backward(const FeatureMap& f, const ClassifierView& h,
                                     const LabelMap& target, const ClassFeatureStatistics& s,
                                     double lambda, const Tensor4& g) {
  check_head(h, s, f.channels());
  const int c = h.num_classes, d = h.dim;
  if (g.batch() != f.batch() || g.height() != f.height() || g.width() != f.width() ||
      g.channels() != c) {
    throw ValidationError("augment_logits_backward: gradient shape mismatch");
  }
  AugmentGrads out;
  out.grad_features = FeatureMap(f.batch(), f.height(), f.width(), d, 0.0);
  out.grad_weight.assign(static_cast<std::size_t>(c) * d, 0.0);
  out.grad_bias.assign(c, 0.0);
  std::vector<double> dquad(static_cast<std::size_t>(c) * c, 0.0);
  for (int b = 0; b < f.batch(); ++b)
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) {
        const double* gv = g.pixel(b, y, x);
        const double* fv = f.pixel(b, y, x);
        double* df = out.grad_features.pixel(b, y, x);
        for (int j = 0; j < c; ++j) {
          const double gj = gv[j];
          if (gj == 0.0) continue;
          out.grad_bias[j] += gj;
          for (int k = 0; k < d; ++k) {
            out.grad_weight[j * d + k] += gj * fv[k];
            df[k] += gj * h.weight[j * d + k];
          }
        }
        const auto t = target(b, y, x);
        if (t == kIgnore) continue;
        for (int j = 0; j < c; ++j) dquad[t * c + j] += gv[j];
      }
  if (lambda != 0.0) {
    std::vector<double> v(d);
    for (int yc = 0; yc < c; ++yc) {
      if (s.count[yc] == 0) continue;
      for (int j = 0; j < c; ++j) {
        if (j == yc || dquad[yc * c + j] == 0.0) continue;
        for (int k = 0; k < d; ++k) v[k] = h.weight[j * d + k] - h.weight[yc * d + k];
        const auto sv = sigma_times(s, yc, v.data());
        const double scale = lambda * dquad[yc * c + j];
        for (int k = 0; k < d; ++k) {
          out.grad_weight[j * d + k] += scale * sv[k];
          out.grad_weight[yc * d + k] -= scale * sv[k];
        }
      }
    }
  }
  return out;
}

LossResult isda_loss(const AugmentedLogits& aug, const LabelMap& target,
                     const BinaryMask* valid_mask) {
  BinaryMask mask = aug.valid;
  if (valid_mask) {
    if (valid_mask->size() != mask.size()) {
      throw ValidationError("isda_loss: valid mask shape mismatch");
    }
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask.values()[i] = mask.values()[i] & valid_mask->values()[i];
  }
  return masked_cross_entropy(aug.data.tensor(), target, &mask);
}

McEstimate mc_isda_loss(std::span<const double> f, const ClassifierView& h, int y,
                        const ClassFeatureStatistics& s, double lambda, std::int64_t samples,
                        Rng& rng) {
  check_head(h, s, static_cast<int>(f.size()));
  if (samples < 1) throw ValidationError("mc_isda_loss: need at least one sample");
  const int c = h.num_classes, d = h.dim;
  // Square root of lambda * Sigma_y via its eigendecomposition (Sigma may be singular).
  Eigen::MatrixXd root = Eigen::MatrixXd::Zero(d, d);
  if (s.count[y] > 0 && lambda > 0.0) {
    const auto cm = s.covariance_matrix(y);
    Eigen::MatrixXd sigma(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) sigma(i, j) = lambda * cm[static_cast<std::size_t>(i) * d + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    root = es.eigenvectors() * ev.asDiagonal();
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd eps(d), ft(d);
  std::vector<double> logits(c);
  double mean = 0.0, m2 = 0.0;
  for (std::int64_t m = 1; m <= samples; ++m) {
    for (int k = 0; k < d; ++k) eps[k] = normal(rng);
    ft = root * eps;
    for (int k = 0; k < d; ++k) ft[k] += f[k];
    for (int j = 0; j < c; ++j) {
      double acc = h.bias[j];
      for (int k = 0; k < d; ++k) acc += h.weight[j * d + k] * ft[k];
      logits[j] = acc;
    }
    const double ce = log_sum_exp(logits.data(), c) - logits[y];
    const double delta = ce - mean;
    mean += delta / static_cast<double>(m);
    m2 += delta * (ce - mean);
  }
  McEstimate r;
  r.estimate = mean;
  if (samples > 1) {
    const double var = m2 / static_cast<double>(samples - 1);
    r.std_error = std::sqrt(var / static_cast<double>(samples));
  }
  return r;
}

double lambda_schedule(double lambda0, int step, int iters_max) {
  if (iters_max <= 0) return lambda0;
  return lambda0 * static_cast<double>(std::min(step, iters_max)) / iters_max;
}

}  // namespace mkd
