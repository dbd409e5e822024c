#pragma once

#include <array>
#include <string>
#include <vector>

#include "mkd/core_types.hpp"
#include "mkd/rng.hpp"

namespace mkd {

/// Three stride-2 conv blocks, one upsampling decoder block with a skip from
/// the second encoder block (output stride 4), then a 1x1 classifier.
struct ArchConfig {
  int in_channels = 3;
  std::array<int, 3> widths{8, 16, 32};
  int feature_dim = 32;
  int num_classes = 4;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

inline constexpr int kOutputStride = 4;
/// Input height and width must be multiples of this.
inline constexpr int kInputGranularity = 8;

enum class ParamKind { kWeight, kNormScale, kNormShift, kBias };

struct ParamTensor {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  std::vector<double> values;

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

struct BufferTensor {
  std::string name;
  std::vector<double> values;

  friend bool operator==(const BufferTensor&, const BufferTensor&) = default;
};

/// Learnable tensors plus batch-norm running statistics of one network.
/// The last two learnable tensors are the classifier: weight (C x D,
/// row-major) and bias (C), so logits = w . f + b per pixel.
struct SegModelParams {
  ArchConfig arch;
  std::vector<ParamTensor> params;
  std::vector<BufferTensor> buffers;

  const std::vector<double>& classifier_weight() const { return params[kClassifierWeight].values; }
  const std::vector<double>& classifier_bias() const { return params[kClassifierBias].values; }
  std::vector<double>& classifier_weight() { return params[kClassifierWeight].values; }
  std::vector<double>& classifier_bias() { return params[kClassifierBias].values; }

  std::size_t parameter_count() const;

  static constexpr std::size_t kClassifierWeight = 12;
  static constexpr std::size_t kClassifierBias = 13;

  friend bool operator==(const SegModelParams&, const SegModelParams&) = default;
};

/// Per-tensor gradients with the same layout as SegModelParams::params.
struct ModelGrads {
  std::vector<std::vector<double>> values;

  static ModelGrads zeros_like(const SegModelParams& p);
  ModelGrads& operator+=(const ModelGrads& o);
};

void validate_arch(const ArchConfig& arch);

SegModelParams init_model(const ArchConfig& arch, Rng& rng);

enum class Mode { kTrain, kEval };

struct ModelOutput {
  FeatureMap features;  // B x H/4 x W/4 x D
  LogitsMap logits;     // B x H/4 x W/4 x C
};

/// Intermediate activations kept for backward and for running-stat updates.
struct ForwardCache {
  struct ConvBlock {
    Tensor4 input;
    std::vector<double> cols;  // im2col rows, P x K
    Tensor4 xhat;
    std::vector<double> batch_mean, batch_var, inv_std;
    Tensor4 output;  // post ReLU
    int stride = 1;
  };
  Mode mode = Mode::kEval;
  std::array<ConvBlock, 4> blocks;  // enc1, enc2, enc3, dec
};

ModelOutput forward(const SegModelParams& params, const ImageBatch& x, Mode mode,
                    ForwardCache* cache = nullptr);

/// Gradients of a scalar loss given dL/d(features) and/or dL/d(logits).
/// Either pointer may be null.
ModelGrads backward(const SegModelParams& params, const ForwardCache& cache,
                    const FeatureMap* grad_features, const LogitsMap* grad_logits);

/// Folds the batch statistics of a training-mode forward into the running statistics.
void update_running_stats(SegModelParams& params, const ForwardCache& cache);

/// Classifier head applied to a feature map.
LogitsMap apply_classifier(const SegModelParams& params, const FeatureMap& f);

/// Bilinear (align_corners = false) resize of h x w logits to H x W.
LogitsMap upsample_logits(const LogitsMap& p, int height, int width);
/// Adjoint of upsample_logits: maps dL/d(upsampled) to dL/d(p).
LogitsMap upsample_logits_backward(const LogitsMap& grad, int height, int width);

}  // namespace mkd
