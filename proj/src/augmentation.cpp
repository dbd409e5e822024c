#include "mkd/augmentation.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace mkd {

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

// Bilinear resize of one item (align_corners = false, edge clamped).
void resize_bilinear(const Tensor4& src, int b, Tensor4& dst, int db) {
  const int ih = src.height(), iw = src.width(), oh = dst.height(), ow = dst.width();
  const int c = src.channels();
  if (ih == oh && iw == ow) {
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int k = 0; k < c; ++k) dst(db, y, x, k) = src(b, y, x, k);
    return;
  }
  const double sy = static_cast<double>(ih) / oh, sx = static_cast<double>(iw) / ow;
  for (int y = 0; y < oh; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), ih - 1);
    const int y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), iw - 1);
      const int x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - x0;
      for (int k = 0; k < c; ++k) {
        const double top = src(b, y0, x0, k) * (1 - wx) + src(b, y0, x1, k) * wx;
        const double bot = src(b, y1, x0, k) * (1 - wx) + src(b, y1, x1, k) * wx;
        dst(db, y, x, k) = top * (1 - wy) + bot * wy;
      }
    }
  }
}

int nearest_src(int dst, int in, int out) {
  return std::min(static_cast<int>((static_cast<long long>(dst) * in) / out), in - 1);
}

void check_geometry_count(int batch, const std::vector<Geometry>& g) {
  if (static_cast<int>(g.size()) != batch) {
    throw ValidationError("apply_geometry: one geometry per batch item required");
  }
}

double sample_beta(Rng& rng, double a, double b) {
  if (a == 1.0 && b == 1.0) return uniform(rng, 0.0, 1.0);
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0 + (b - r) / d;
  } else {
    h = 4.0 + (r - g) / d;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

// Luma that is exact for R == G == B.
double luma(double r, double g, double b) { return r + 0.587 * (g - r) + 0.114 * (b - r); }

}  // namespace

Geometry identity_geometry(int height, int width) {
  Geometry g;
  g.source_height = height;
  g.source_width = width;
  g.resized_height = height;
  g.resized_width = width;
  g.crop_height = height;
  g.crop_width = width;
  return g;
}

Geometry sample_geometry(int height, int width, const AugmentConfig& cfg, Rng& rng) {
  Geometry g;
  g.source_height = height;
  g.source_width = width;
  g.flip = uniform(rng, 0.0, 1.0) < cfg.flip_prob;
  g.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  g.resized_height = std::max(1, static_cast<int>(std::lround(height * g.scale)));
  g.resized_width = std::max(1, static_cast<int>(std::lround(width * g.scale)));
  g.crop_height = cfg.crop_height;
  g.crop_width = cfg.crop_width;
  const int padded_h = std::max(g.resized_height, g.crop_height);
  const int padded_w = std::max(g.resized_width, g.crop_width);
  g.crop_top = uniform_int(rng, 0, padded_h - g.crop_height);
  g.crop_left = uniform_int(rng, 0, padded_w - g.crop_width);
  return g;
}

ImageBatch apply_geometry(const ImageBatch& x, const std::vector<Geometry>& geometry) {
  check_geometry_count(x.batch(), geometry);
  const int c = x.channels();
  if (geometry.empty()) return x;
  const int ch = geometry[0].crop_height, cw = geometry[0].crop_width;
  Tensor4 out(x.batch(), ch, cw, c, 0.0);
  for (int b = 0; b < x.batch(); ++b) {
    const Geometry& g = geometry[b];
    if (g.source_height != x.height() || g.source_width != x.width() || g.crop_height != ch ||
        g.crop_width != cw) {
      throw ValidationError("apply_geometry: geometry does not match image size");
    }
    Tensor4 flipped(1, x.height(), x.width(), c);
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        const int sx = g.flip ? x.width() - 1 - xx : xx;
        for (int k = 0; k < c; ++k) flipped(0, y, xx, k) = x(b, y, sx, k);
      }
    Tensor4 resized(1, g.resized_height, g.resized_width, c);
    resize_bilinear(flipped, 0, resized, 0);
    for (int y = 0; y < ch; ++y)
      for (int xx = 0; xx < cw; ++xx) {
        const int sy = y + g.crop_top, sx = xx + g.crop_left;
        if (sy >= g.resized_height || sx >= g.resized_width) continue;  // zero padding
        for (int k = 0; k < c; ++k) out(b, y, xx, k) = resized(0, sy, sx, k);
      }
  }
  return ImageBatch(std::move(out));
}

LabelMap apply_geometry(const LabelMap& y, const std::vector<Geometry>& geometry) {
  check_geometry_count(y.batch(), geometry);
  if (geometry.empty()) return y;
  const int ch = geometry[0].crop_height, cw = geometry[0].crop_width;
  LabelMap out(y.batch(), ch, cw, kIgnore);
  for (int b = 0; b < y.batch(); ++b) {
    const Geometry& g = geometry[b];
    if (g.source_height != y.height() || g.source_width != y.width()) {
      throw ValidationError("apply_geometry: geometry does not match label size");
    }
    for (int r = 0; r < ch; ++r)
      for (int c = 0; c < cw; ++c) {
        const int sy = r + g.crop_top, sx = c + g.crop_left;
        if (sy >= g.resized_height || sx >= g.resized_width) continue;
        const int oy = nearest_src(sy, y.height(), g.resized_height);
        int ox = nearest_src(sx, y.width(), g.resized_width);
        if (g.flip) ox = y.width() - 1 - ox;
        out(b, r, c) = y(b, oy, ox);
      }
  }
  return out;
}

WeakAugmentResult weak_augment(const ImageBatch& x, const LabelMap* y, const AugmentConfig& cfg,
                               Rng& rng) {
  validate_images(x);
  if (y && (y->batch() != x.batch() || y->height() != x.height() || y->width() != x.width())) {
    throw ValidationError("weak_augment: label map size differs from image size");
  }
  WeakAugmentResult r;
  r.geometry.reserve(x.batch());
  for (int b = 0; b < x.batch(); ++b) r.geometry.push_back(sample_geometry(x.height(), x.width(), cfg, rng));
  r.images = apply_geometry(x, r.geometry);
  if (y) r.labels = apply_geometry(*y, r.geometry);
  return r;
}

PhotometricDraw sample_photometric(const StrongAugConfig& cfg, Rng& rng) {
  PhotometricDraw d;
  d.op = static_cast<PhotometricOp>(uniform_int(rng, 0, kNumPhotometricOps - 1));
  switch (d.op) {
    case PhotometricOp::kColorJitter:
      d.brightness = uniform(rng, cfg.brightness_min, cfg.brightness_max);
      d.contrast = uniform(rng, cfg.contrast_min, cfg.contrast_max);
      d.saturation = uniform(rng, cfg.saturation_min, cfg.saturation_max);
      d.hue = uniform(rng, cfg.hue_min, cfg.hue_max);
      break;
    case PhotometricOp::kBlur:
      d.blur_sigma = uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max);
      break;
    case PhotometricOp::kSolarize:
      d.solarize_threshold = uniform(rng, cfg.solarize_min, cfg.solarize_max);
      break;
    case PhotometricOp::kGrayscale:
    case PhotometricOp::kEqualize:
      break;
  }
  return d;
}

ImageBatch apply_photometric(const ImageBatch& x, const PhotometricDraw& d) {
  switch (d.op) {
    case PhotometricOp::kColorJitter:
      return color_jitter(x, d.brightness, d.contrast, d.saturation, d.hue);
    case PhotometricOp::kBlur:
      return gaussian_blur(x, d.blur_sigma);
    case PhotometricOp::kGrayscale:
      return grayscale(x);
    case PhotometricOp::kEqualize:
      return equalize(x);
    case PhotometricOp::kSolarize:
      return solarize(x, d.solarize_threshold);
  }
  return x;
}

ImageBatch color_jitter(const ImageBatch& x, double brightness, double contrast,
                        double saturation, double hue) {
  ImageBatch out = x;
  const int n = x.height() * x.width();
  for (int b = 0; b < x.batch(); ++b) {
    double mean_luma = 0.0;
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        double* p = out.pixel(b, y, xx);
        for (int k = 0; k < 3; ++k) p[k] = clip01(p[k] * brightness);
        mean_luma += luma(p[0], p[1], p[2]);
      }
    mean_luma /= n;
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        double* p = out.pixel(b, y, xx);
        for (int k = 0; k < 3; ++k) p[k] = clip01((p[k] - mean_luma) * contrast + mean_luma);
        const double g = luma(p[0], p[1], p[2]);
        for (int k = 0; k < 3; ++k) p[k] = clip01((p[k] - g) * saturation + g);
        if (hue != 0.0) {
          double h, s, v;
          rgb_to_hsv(p[0], p[1], p[2], h, s, v);
          hsv_to_rgb(h + hue, s, v, p[0], p[1], p[2]);
          for (int k = 0; k < 3; ++k) p[k] = clip01(p[k]);
        }
      }
  }
  return out;
}

ImageBatch gaussian_blur(const ImageBatch& x, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  const int h = x.height(), w = x.width(), c = x.channels();
  Tensor4 tmp(x.batch(), h, w, c);
  Tensor4 out(x.batch(), h, w, c);
  for (int b = 0; b < x.batch(); ++b) {
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int k = 0; k < c; ++k) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int sx = std::clamp(xx + i, 0, w - 1);
            acc += kernel[i + radius] * x(b, y, sx, k);
          }
          tmp(b, y, xx, k) = acc;
        }
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int k = 0; k < c; ++k) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int sy = std::clamp(y + i, 0, h - 1);
            acc += kernel[i + radius] * tmp(b, sy, xx, k);
          }
          out(b, y, xx, k) = clip01(acc);
        }
  }
  return ImageBatch(std::move(out));
}

ImageBatch grayscale(const ImageBatch& x) {
  ImageBatch out = x;
  for (int b = 0; b < x.batch(); ++b)
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        double* p = out.pixel(b, y, xx);
        const double g = clip01(luma(p[0], p[1], p[2]));
        p[0] = p[1] = p[2] = g;
      }
  return out;
}

ImageBatch equalize(const ImageBatch& x) {
  ImageBatch out = x;
  for (int b = 0; b < x.batch(); ++b)
    for (int k = 0; k < x.channels(); ++k) {
      std::array<long, 256> hist{};
      for (int y = 0; y < x.height(); ++y)
        for (int xx = 0; xx < x.width(); ++xx)
          ++hist[std::lround(clip01(x(b, y, xx, k)) * 255.0)];
      int last = 255;
      while (last > 0 && hist[last] == 0) --last;
      long total = 0;
      for (long v : hist) total += v;
      const long step = (total - hist[last]) / 255;
      if (step == 0) continue;  // constant channel: identity
      std::array<double, 256> lut{};
      long n = step / 2;
      for (int i = 0; i < 256; ++i) {
        lut[i] = std::min(255L, n / step) / 255.0;
        n += hist[i];
      }
      for (int y = 0; y < x.height(); ++y)
        for (int xx = 0; xx < x.width(); ++xx)
          out(b, y, xx, k) = lut[std::lround(clip01(x(b, y, xx, k)) * 255.0)];
    }
  return out;
}

ImageBatch solarize(const ImageBatch& x, double threshold) {
  ImageBatch out = x;
  for (double& v : out.tensor().values())
    if (v > threshold) v = 1.0 - v;
  return out;
}

ImageBatch strong_augment(const ImageBatch& x, const StrongAugConfig& cfg, Rng& rng) {
  validate_images(x);
  std::vector<ImageBatch> items;
  items.reserve(x.batch());
  for (int b = 0; b < x.batch(); ++b) {
    const PhotometricDraw d = sample_photometric(cfg, rng);
    items.push_back(apply_photometric(slice_batch(x, b), d));
  }
  return stack_batch(items);
}

AugmentedPair make_augmented_pair(const ImageBatch& x, const AugmentConfig& cfg, Rng& weak_rng,
                                  Rng& strong_rng) {
  WeakAugmentResult weak = weak_augment(x, nullptr, cfg, weak_rng);
  AugmentedPair pair;
  pair.strong_view = strong_augment(weak.images, cfg.strong, strong_rng);
  pair.weak_view = std::move(weak.images);
  pair.geometry = std::move(weak.geometry);
  return pair;
}

CutMixMask cutmix_mask_from_boxes(int height, int width, const std::vector<Box>& boxes) {
  CutMixMask out;
  out.boxes = boxes;
  out.m = BinaryMask(static_cast<int>(boxes.size()), height, width, 0);
  for (int b = 0; b < static_cast<int>(boxes.size()); ++b) {
    const Box& box = boxes[b];
    if (box.top < 0 || box.left < 0 || box.height < 0 || box.width < 0 ||
        box.top + box.height > height || box.left + box.width > width) {
      throw ValidationError("CutMix box extends outside the image");
    }
    for (int y = box.top; y < box.top + box.height; ++y)
      for (int x = box.left; x < box.left + box.width; ++x) out.m(b, y, x) = 1;
  }
  return out;
}

Box sample_cutmix_box(int height, int width, double area_fraction, Rng& rng) {
  const double side = std::sqrt(std::clamp(area_fraction, 0.0, 1.0));
  Box box;
  box.height = std::clamp(static_cast<int>(std::lround(height * side)), 0, height);
  box.width = std::clamp(static_cast<int>(std::lround(width * side)), 0, width);
  box.top = uniform_int(rng, 0, height - box.height);
  box.left = uniform_int(rng, 0, width - box.width);
  return box;
}

CutMixMask sample_cutmix_mask(int batch, int height, int width, Rng& rng, double beta_a,
                              double beta_b) {
  if (height < 2 || width < 2) throw ValidationError("sample_cutmix_mask: H and W must be >= 2");
  std::vector<Box> boxes;
  boxes.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    const double frac = sample_beta(rng, beta_a, beta_b);
    boxes.push_back(sample_cutmix_box(height, width, frac, rng));
  }
  return cutmix_mask_from_boxes(height, width, boxes);
}

CutMixMask sample_cutmix_mask_with_fraction(int batch, int height, int width,
                                            double area_fraction, Rng& rng) {
  if (height < 2 || width < 2) throw ValidationError("sample_cutmix_mask: H and W must be >= 2");
  std::vector<Box> boxes;
  for (int b = 0; b < batch; ++b) boxes.push_back(sample_cutmix_box(height, width, area_fraction, rng));
  return cutmix_mask_from_boxes(height, width, boxes);
}

BinaryMask downsample_nearest(const BinaryMask& m, int height, int width) {
  if (m.height() == height && m.width() == width) return m;
  BinaryMask out(m.batch(), height, width);
  for (int b = 0; b < m.batch(); ++b)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out(b, y, x) = m(b, nearest_src(y, m.height(), height), nearest_src(x, m.width(), width));
  return out;
}

LabelMap downsample_nearest(const LabelMap& lab, int height, int width) {
  if (lab.height() == height && lab.width() == width) return lab;
  LabelMap out(lab.batch(), height, width);
  for (int b = 0; b < lab.batch(); ++b)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out(b, y, x) =
            lab(b, nearest_src(y, lab.height(), height), nearest_src(x, lab.width(), width));
  return out;
}

namespace {

Tensor4 select_pixels(const Tensor4& a, const Tensor4& b, const BinaryMask& m) {
  Tensor4 out = a;
  const int c = a.channels();
  for (int n = 0; n < a.batch(); ++n)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        if (m(n, y, x)) std::copy_n(b.pixel(n, y, x), c, out.pixel(n, y, x));
  return out;
}

}  // namespace

ImageBatch apply_cutmix_images(const ImageBatch& x_i, const ImageBatch& x_j, const CutMixMask& m) {
  if (!x_i.tensor().same_shape(x_j.tensor()) || m.m.batch() != x_i.batch() ||
      m.m.height() != x_i.height() || m.m.width() != x_i.width()) {
    throw ValidationError("apply_cutmix_images: shape mismatch");
  }
  return ImageBatch(select_pixels(x_i.tensor(), x_j.tensor(), m.m));
}

LogitsMap apply_cutmix_logits(const LogitsMap& p_i, const LogitsMap& p_j, const CutMixMask& m) {
  if (!p_i.tensor().same_shape(p_j.tensor())) {
    throw ValidationError("apply_cutmix_logits: logits shapes differ");
  }
  if (m.m.height() < p_i.height() || m.m.width() < p_i.width()) {
    throw ValidationError("apply_cutmix_logits: mask smaller than logits");
  }
  const BinaryMask low = downsample_nearest(m.m, p_i.height(), p_i.width());
  if (low.batch() != p_i.batch()) throw ValidationError("apply_cutmix_logits: batch mismatch");
  return LogitsMap(select_pixels(p_i.tensor(), p_j.tensor(), low));
}

Tensor4 roll_batch(const Tensor4& x, int shift) {
  Tensor4 out(x.batch(), x.height(), x.width(), x.channels());
  const std::size_t item = static_cast<std::size_t>(x.height()) * x.width() * x.channels();
  const int n = x.batch();
  for (int b = 0; b < n; ++b) {
    const int src = ((b + shift) % n + n) % n;
    std::copy_n(x.data() + src * item, item, out.data() + b * item);
  }
  return out;
}

ImageBatch slice_batch(const ImageBatch& x, int b) {
  Tensor4 out(1, x.height(), x.width(), x.channels());
  std::copy_n(x.pixel(b, 0, 0), out.size(), out.data());
  return ImageBatch(std::move(out));
}

LabelMap slice_batch(const LabelMap& y, int b) {
  LabelMap out(1, y.height(), y.width());
  std::copy_n(y.values().begin() + y.index(b, 0, 0), out.size(), out.values().begin());
  return out;
}

ImageBatch stack_batch(const std::vector<ImageBatch>& items) {
  if (items.empty()) return {};
  const auto& f = items.front();
  int total = 0;
  for (const auto& it : items) {
    if (it.height() != f.height() || it.width() != f.width() || it.channels() != f.channels()) {
      throw ValidationError("stack_batch: items differ in shape");
    }
    total += it.batch();
  }
  Tensor4 out(total, f.height(), f.width(), f.channels());
  std::size_t off = 0;
  for (const auto& it : items) {
    std::copy(it.tensor().values().begin(), it.tensor().values().end(), out.data() + off);
    off += it.tensor().size();
  }
  return ImageBatch(std::move(out));
}

LabelMap stack_batch(const std::vector<LabelMap>& items) {
  if (items.empty()) return {};
  const auto& f = items.front();
  int total = 0;
  for (const auto& it : items) {
    if (it.height() != f.height() || it.width() != f.width()) {
      throw ValidationError("stack_batch: label maps differ in shape");
    }
    total += it.batch();
  }
  LabelMap out(total, f.height(), f.width());
  std::size_t off = 0;
  for (const auto& it : items) {
    std::copy(it.values().begin(), it.values().end(), out.values().begin() + off);
    off += it.size();
  }
  return out;
}

}  // namespace mkd
