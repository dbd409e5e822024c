#include "mkd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mkd {

double log_sum_exp(const double* v, int n) {
  const double mx = *std::max_element(v, v + n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

LossResult masked_cross_entropy(const Tensor4& scores, const LabelMap& target,
                                const BinaryMask* valid) {
  if (scores.batch() != target.batch() || scores.height() != target.height() ||
      scores.width() != target.width()) {
    throw ValidationError("cross entropy: scores " + scores.shape_string() +
                          " do not match target resolution");
  }
  if (valid && (valid->batch() != target.batch() || valid->height() != target.height() ||
                valid->width() != target.width())) {
    throw ValidationError("cross entropy: mask does not match target resolution");
  }
  const int c = scores.channels();
  LossResult r;
  r.grad = Tensor4(scores.batch(), scores.height(), scores.width(), c, 0.0);
  std::size_t count = 0;
  double total = 0.0;
  for (int b = 0; b < scores.batch(); ++b)
    for (int y = 0; y < scores.height(); ++y)
      for (int x = 0; x < scores.width(); ++x) {
        const auto t = target(b, y, x);
        if (t == kIgnore || (valid && !(*valid)(b, y, x))) continue;
        if (t >= c) throw ValidationError("cross entropy: target class out of range");
        const double* s = scores.pixel(b, y, x);
        const double lse = log_sum_exp(s, c);
        total += lse - s[t];
        double* g = r.grad.pixel(b, y, x);
        for (int k = 0; k < c; ++k) g[k] = std::exp(s[k] - lse);
        g[t] -= 1.0;
        ++count;
      }
  if (count == 0) {
    r.empty = true;
    return r;
  }
  const double inv = 1.0 / static_cast<double>(count);
  r.value = total * inv;
  for (double& g : r.grad.values()) g *= inv;
  return r;
}

double PseudoLabelResult::valid_fraction() const {
  if (valid.size() == 0) return 0.0;
  return static_cast<double>(valid.count()) / static_cast<double>(valid.size());
}

PseudoLabelResult pseudo_label(const LogitsMap& p, std::optional<double> tau) {
  PseudoLabelResult r;
  r.labels = argmax_channels(p.tensor());
  r.valid = BinaryMask(p.batch(), p.height(), p.width(), 1);
  if (!tau) return r;
  const int c = p.channels();
  for (int b = 0; b < p.batch(); ++b)
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) {
        const double* s = p.pixel(b, y, x);
        const double max_prob = std::exp(s[r.labels(b, y, x)] - log_sum_exp(s, c));
        r.valid(b, y, x) = max_prob >= *tau ? 1 : 0;
      }
  return r;
}

}  // namespace mkd
