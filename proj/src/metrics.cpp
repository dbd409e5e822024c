#include "mkd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace mkd {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (auto v : counts) n += v;
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.num_classes != num_classes) throw ValidationError("confusion matrices differ in size");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth) {
  if (pred.batch() != truth.batch() || pred.height() != truth.height() ||
      pred.width() != truth.width()) {
    throw ValidationError("accumulate: prediction and truth shapes differ");
  }
  const int c = cm.num_classes;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth.values()[i];
    if (t == kIgnore) continue;
    const int p = pred.values()[i];
    if (t >= c || p >= c) {
      throw ValidationError("accumulate: class index " + std::to_string(t >= c ? t : p) +
                            " out of range for " + std::to_string(c) + " classes");
    }
    ++cm.counts[static_cast<std::size_t>(t) * c + p];
  }
}

IouReport miou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes;
  IouReport r;
  r.per_class.assign(c, std::numeric_limits<double>::quiet_NaN());
  r.present.assign(c, false);
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::int64_t diag = cm.at(k, k);
    const std::int64_t uni = row + col - diag;
    if (uni == 0) continue;
    r.per_class[k] = static_cast<double>(diag) / static_cast<double>(uni);
    r.present[k] = true;
    sum += r.per_class[k];
    ++n;
  }
  if (n == 0) throw ValidationError("miou: every class has zero union");
  r.mean = sum / n;
  return r;
}

std::string format_report(const IouReport& r, const std::string& title) {
  std::ostringstream os;
  os << "# " << title << "\n";
  char buf[64];
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    if (r.present[k]) {
      std::snprintf(buf, sizeof buf, "%.6f", r.per_class[k]);
      os << "iou_class_" << k << " " << buf << "\n";
    } else {
      os << "iou_class_" << k << " absent\n";
    }
  }
  std::snprintf(buf, sizeof buf, "%.6f", r.mean);
  os << "miou " << buf << "\n";
  return os.str();
}

}  // namespace mkd
