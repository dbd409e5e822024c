#include "mkd/core_types.hpp"

#include <cmath>

namespace mkd {

namespace {

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw ValidationError(std::string("config field '") + field + "': " + why);
}

bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

}  // namespace

const TrainConfig& validate_config(const TrainConfig& cfg) {
  require(in_unit(cfg.gamma), "gamma", "must lie in [0, 1]");
  require(std::isfinite(cfg.alpha) && cfg.alpha >= 0.0, "alpha", "must be >= 0");
  require(std::isfinite(cfg.beta) && cfg.beta >= 0.0, "beta", "must be >= 0");
  require(std::isfinite(cfg.lambda0) && cfg.lambda0 >= 0.0, "lambda0", "must be >= 0");
  if (cfg.tau) require(in_unit(*cfg.tau), "tau", "must lie in [0, 1] or be disabled");
  require(std::isfinite(cfg.lr0) && cfg.lr0 > 0.0, "lr0", "must be > 0");
  require(std::isfinite(cfg.lr_power) && cfg.lr_power > 0.0, "lr_power", "must be > 0");
  require(std::isfinite(cfg.momentum) && cfg.momentum >= 0.0 && cfg.momentum < 1.0, "momentum",
          "must lie in [0, 1)");
  require(std::isfinite(cfg.weight_decay) && cfg.weight_decay >= 0.0, "weight_decay",
          "must be >= 0");
  require(cfg.iters_max >= 1, "iters_max", "must be >= 1");
  require(cfg.crop_height >= 1, "crop_height", "must be >= 1");
  require(cfg.crop_width >= 1, "crop_width", "must be >= 1");
  require(cfg.batch_labeled >= 1, "batch_labeled", "must be >= 1");
  require(cfg.batch_unlabeled >= 1, "batch_unlabeled", "must be >= 1");
  require(cfg.num_classes >= 2 && cfg.num_classes < kIgnore, "num_classes",
          "must lie in [2, 254]");
  return cfg;
}

void validate_finite(const Tensor4& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite value");
  }
}

void validate_images(const ImageBatch& x) {
  const auto& t = x.tensor();
  if (t.batch() < 1 || t.height() < 1 || t.width() < 1 || t.channels() != 3) {
    throw ValidationError("ImageBatch: expected B>=1, H>=1, W>=1, 3 channels, got " +
                          t.shape_string());
  }
  for (double v : t.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ValidationError("ImageBatch: value outside [0, 1]");
    }
  }
}

void validate_labels(const LabelMap& y, int num_classes) {
  for (auto v : y.values()) {
    if (v != kIgnore && v >= num_classes) {
      throw ValidationError("LabelMap: class " + std::to_string(v) + " >= C=" +
                            std::to_string(num_classes));
    }
  }
}

Tensor4 one_hot(const LabelMap& labels, int num_classes) {
  validate_labels(labels, num_classes);
  Tensor4 out(labels.batch(), labels.height(), labels.width(), num_classes);
  for (int b = 0; b < labels.batch(); ++b)
    for (int y = 0; y < labels.height(); ++y)
      for (int x = 0; x < labels.width(); ++x) {
        const auto v = labels(b, y, x);
        if (v != kIgnore) out(b, y, x, v) = 1.0;
      }
  return out;
}

LabelMap argmax_channels(const Tensor4& scores) {
  LabelMap out(scores.batch(), scores.height(), scores.width());
  const int c = scores.channels();
  for (int b = 0; b < scores.batch(); ++b)
    for (int y = 0; y < scores.height(); ++y)
      for (int x = 0; x < scores.width(); ++x) {
        const double* p = scores.pixel(b, y, x);
        int best = 0;
        for (int k = 1; k < c; ++k)
          if (p[k] > p[best]) best = k;
        out(b, y, x) = static_cast<std::uint8_t>(best);
      }
  return out;
}

}  // namespace mkd
