#pragma once

#include <optional>
#include <vector>

#include "mkd/core_types.hpp"
#include "mkd/rng.hpp"

namespace mkd {

/// Magnitude ranges of the photometric operators. Each factor is drawn
/// uniformly from [min, max].
struct StrongAugConfig {
  double brightness_min = 0.6, brightness_max = 1.4;
  double contrast_min = 0.6, contrast_max = 1.4;
  double saturation_min = 0.6, saturation_max = 1.4;
  double hue_min = -0.1, hue_max = 0.1;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double solarize_min = 0.5, solarize_max = 1.0;

  friend bool operator==(const StrongAugConfig&, const StrongAugConfig&) = default;
};

struct AugmentConfig {
  double flip_prob = 0.5;
  double scale_min = 0.5;
  double scale_max = 2.0;
  int crop_height = 64;
  int crop_width = 64;
  StrongAugConfig strong;
  /// CutMix box area fraction ~ Beta(a, b).
  double cutmix_beta_a = 1.0;
  double cutmix_beta_b = 1.0;

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// Geometric transform applied to one image: horizontal flip, resize to
/// (resized_height, resized_width), pad bottom/right up to the crop size,
/// then crop a crop_height x crop_width window at (crop_top, crop_left).
struct Geometry {
  int source_height = 0, source_width = 0;
  bool flip = false;
  double scale = 1.0;
  int resized_height = 0, resized_width = 0;
  int crop_top = 0, crop_left = 0;
  int crop_height = 0, crop_width = 0;

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

Geometry identity_geometry(int height, int width);
Geometry sample_geometry(int height, int width, const AugmentConfig& cfg, Rng& rng);

/// Bilinear image / nearest label application of one geometry per batch item.
ImageBatch apply_geometry(const ImageBatch& x, const std::vector<Geometry>& geometry);
LabelMap apply_geometry(const LabelMap& y, const std::vector<Geometry>& geometry);

struct WeakAugmentResult {
  ImageBatch images;
  std::optional<LabelMap> labels;
  std::vector<Geometry> geometry;
};

/// Flip + random scale + random crop; labels follow the same transform and
/// padding pixels become kIgnore.
WeakAugmentResult weak_augment(const ImageBatch& x, const LabelMap* y, const AugmentConfig& cfg,
                               Rng& rng);

enum class PhotometricOp { kColorJitter = 0, kBlur, kGrayscale, kEqualize, kSolarize };
inline constexpr int kNumPhotometricOps = 5;

struct PhotometricDraw {
  PhotometricOp op = PhotometricOp::kGrayscale;
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
  double blur_sigma = 1.0;
  double solarize_threshold = 1.0;
};

PhotometricDraw sample_photometric(const StrongAugConfig& cfg, Rng& rng);
/// Applies one drawn operator to every item of x; output clipped to [0, 1].
ImageBatch apply_photometric(const ImageBatch& x, const PhotometricDraw& draw);

ImageBatch color_jitter(const ImageBatch& x, double brightness, double contrast,
                        double saturation, double hue);
ImageBatch gaussian_blur(const ImageBatch& x, double sigma);
ImageBatch grayscale(const ImageBatch& x);
/// Per-channel 256-bin histogram equalization.
ImageBatch equalize(const ImageBatch& x);
/// Inverts values strictly above the threshold.
ImageBatch solarize(const ImageBatch& x, double threshold);

/// One uniformly drawn photometric operator per batch item. Geometry unchanged.
ImageBatch strong_augment(const ImageBatch& x, const StrongAugConfig& cfg, Rng& rng);

struct AugmentedPair {
  ImageBatch weak_view;
  ImageBatch strong_view;
  std::vector<Geometry> geometry;
};

/// Weak view plus a photometrically perturbed copy sharing its geometry.
AugmentedPair make_augmented_pair(const ImageBatch& x, const AugmentConfig& cfg, Rng& weak_rng,
                                  Rng& strong_rng);

struct Box {
  int top = 0, left = 0, height = 0, width = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct CutMixMask {
  BinaryMask m;  // B x H x W, 1 inside boxes[b]
  std::vector<Box> boxes;
};

CutMixMask cutmix_mask_from_boxes(int height, int width, const std::vector<Box>& boxes);
/// Box with area ~ area_fraction * H * W, placed uniformly fully inside the image.
Box sample_cutmix_box(int height, int width, double area_fraction, Rng& rng);
CutMixMask sample_cutmix_mask(int batch, int height, int width, Rng& rng, double beta_a = 1.0,
                              double beta_b = 1.0);
CutMixMask sample_cutmix_mask_with_fraction(int batch, int height, int width,
                                            double area_fraction, Rng& rng);

/// Nearest-neighbour resampling; source index floor(dst * in / out).
BinaryMask downsample_nearest(const BinaryMask& m, int height, int width);
LabelMap downsample_nearest(const LabelMap& y, int height, int width);

/// (1 - m) * x_i + m * x_j, pixelwise.
ImageBatch apply_cutmix_images(const ImageBatch& x_i, const ImageBatch& x_j, const CutMixMask& m);
/// Same selection on logits; the mask is downsampled to the logits resolution.
LogitsMap apply_cutmix_logits(const LogitsMap& p_i, const LogitsMap& p_j, const CutMixMask& m);

/// out[b] = x[(b + shift) mod B]: the CutMix partner of each item.
Tensor4 roll_batch(const Tensor4& x, int shift = 1);
template <typename Tag>
TypedTensor<Tag> roll_batch(const TypedTensor<Tag>& x, int shift = 1) {
  return TypedTensor<Tag>(roll_batch(x.tensor(), shift));
}

ImageBatch slice_batch(const ImageBatch& x, int b);
LabelMap slice_batch(const LabelMap& y, int b);
ImageBatch stack_batch(const std::vector<ImageBatch>& items);
LabelMap stack_batch(const std::vector<LabelMap>& items);

}  // namespace mkd
