#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mkd {

/// Thrown when a tensor, label map, or config violates its declared contract.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense channels-last 4-D tensor (batch, height, width, channels) of doubles.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int batch, int height, int width, int channels, double fill = 0.0)
      : b_(batch), h_(height), w_(width), c_(channels) {
    if (batch < 0 || height < 0 || width < 0 || channels < 0) {
      throw ValidationError("Tensor4: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(batch) * height * width * channels, fill);
  }

  int batch() const { return b_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  std::size_t size() const { return data_.size(); }
  std::size_t pixels() const { return static_cast<std::size_t>(b_) * h_ * w_; }

  std::size_t index(int b, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(b) * h_ + y) * w_ + x) * c_ + ch;
  }
  double& operator()(int b, int y, int x, int ch) { return data_[index(b, y, x, ch)]; }
  double operator()(int b, int y, int x, int ch) const { return data_[index(b, y, x, ch)]; }

  /// Pointer to the channel vector of one pixel.
  double* pixel(int b, int y, int x) { return data_.data() + index(b, y, x, 0); }
  const double* pixel(int b, int y, int x) const { return data_.data() + index(b, y, x, 0); }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor4& o) const {
    return b_ == o.b_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }
  std::string shape_string() const {
    return std::to_string(b_) + "x" + std::to_string(h_) + "x" + std::to_string(w_) + "x" +
           std::to_string(c_);
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  int b_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> data_;
};

/// Strongly typed wrapper so images, logits and features cannot be mixed up.
template <typename Tag>
class TypedTensor {
 public:
  TypedTensor() = default;
  explicit TypedTensor(Tensor4 t) : t_(std::move(t)) {}
  TypedTensor(int batch, int height, int width, int channels, double fill = 0.0)
      : t_(batch, height, width, channels, fill) {}

  const Tensor4& tensor() const { return t_; }
  Tensor4& tensor() { return t_; }

  int batch() const { return t_.batch(); }
  int height() const { return t_.height(); }
  int width() const { return t_.width(); }
  int channels() const { return t_.channels(); }
  double& operator()(int b, int y, int x, int ch) { return t_(b, y, x, ch); }
  double operator()(int b, int y, int x, int ch) const { return t_(b, y, x, ch); }
  double* pixel(int b, int y, int x) { return t_.pixel(b, y, x); }
  const double* pixel(int b, int y, int x) const { return t_.pixel(b, y, x); }

  friend bool operator==(const TypedTensor&, const TypedTensor&) = default;

 private:
  Tensor4 t_;
};

struct ImageTag {};
struct LogitsTag {};
struct FeatureTag {};

/// B x H x W x 3 RGB in [0, 1].
using ImageBatch = TypedTensor<ImageTag>;
/// B x h x w x C per-class scores.
using LogitsMap = TypedTensor<LogitsTag>;
/// B x h x w x D classifier-input features.
using FeatureMap = TypedTensor<FeatureTag>;

/// Reserved label value for pixels that carry no supervision.
inline constexpr std::uint8_t kIgnore = 255;

/// B x H x W integer class map; values in [0, C) or kIgnore.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int batch, int height, int width, std::uint8_t fill = 0)
      : b_(batch), h_(height), w_(width),
        data_(static_cast<std::size_t>(batch) * height * width, fill) {}

  int batch() const { return b_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int b, int y, int x) const {
    return (static_cast<std::size_t>(b) * h_ + y) * w_ + x;
  }
  std::uint8_t& operator()(int b, int y, int x) { return data_[index(b, y, x)]; }
  std::uint8_t operator()(int b, int y, int x) const { return data_[index(b, y, x)]; }

  std::vector<std::uint8_t>& values() { return data_; }
  const std::vector<std::uint8_t>& values() const { return data_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int b_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

/// B x h x w binary mask (0/1), used for validity and CutMix selection.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int batch, int height, int width, std::uint8_t fill = 0)
      : b_(batch), h_(height), w_(width),
        data_(static_cast<std::size_t>(batch) * height * width, fill) {}

  int batch() const { return b_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t index(int b, int y, int x) const {
    return (static_cast<std::size_t>(b) * h_ + y) * w_ + x;
  }
  std::uint8_t& operator()(int b, int y, int x) { return data_[index(b, y, x)]; }
  std::uint8_t operator()(int b, int y, int x) const { return data_[index(b, y, x)]; }
  std::vector<std::uint8_t>& values() { return data_; }
  const std::vector<std::uint8_t>& values() const { return data_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int b_ = 0, h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

}  // namespace mkd
