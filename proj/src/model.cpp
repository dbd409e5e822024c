#include "mkd/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace mkd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr int kKernel = 3;
constexpr int kPad = 1;

struct BlockSpec {
  int in_channels;
  int out_channels;
  int stride;
};

std::array<BlockSpec, 4> block_specs(const ArchConfig& a) {
  return {{{a.in_channels, a.widths[0], 2},
           {a.widths[0], a.widths[1], 2},
           {a.widths[1], a.widths[2], 2},
           {a.widths[2] + a.widths[1], a.feature_dim, 1}}};
}

int conv_out(int size, int stride) { return (size + 2 * kPad - kKernel) / stride + 1; }

void im2col(const Tensor4& in, int stride, int ho, int wo, std::vector<double>& cols) {
  const int c = in.channels();
  const std::size_t k = static_cast<std::size_t>(kKernel) * kKernel * c;
  cols.assign(static_cast<std::size_t>(in.batch()) * ho * wo * k, 0.0);
  std::size_t row = 0;
  for (int b = 0; b < in.batch(); ++b)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x, ++row) {
        double* dst = cols.data() + row * k;
        for (int ky = 0; ky < kKernel; ++ky) {
          const int sy = y * stride + ky - kPad;
          for (int kx = 0; kx < kKernel; ++kx) {
            const int sx = x * stride + kx - kPad;
            double* cell = dst + (ky * kKernel + kx) * c;
            if (sy < 0 || sy >= in.height() || sx < 0 || sx >= in.width()) continue;
            std::copy_n(in.pixel(b, sy, sx), c, cell);
          }
        }
      }
}

void col2im(const std::vector<double>& dcols, int stride, int ho, int wo, Tensor4& din) {
  const int c = din.channels();
  const std::size_t k = static_cast<std::size_t>(kKernel) * kKernel * c;
  std::fill(din.values().begin(), din.values().end(), 0.0);
  std::size_t row = 0;
  for (int b = 0; b < din.batch(); ++b)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x, ++row) {
        const double* src = dcols.data() + row * k;
        for (int ky = 0; ky < kKernel; ++ky) {
          const int sy = y * stride + ky - kPad;
          if (sy < 0 || sy >= din.height()) continue;
          for (int kx = 0; kx < kKernel; ++kx) {
            const int sx = x * stride + kx - kPad;
            if (sx < 0 || sx >= din.width()) continue;
            const double* cell = src + (ky * kKernel + kx) * c;
            double* d = din.pixel(b, sy, sx);
            for (int ch = 0; ch < c; ++ch) d[ch] += cell[ch];
          }
        }
      }
}

// conv3x3 -> batch norm -> ReLU
Tensor4 block_forward(const SegModelParams& p, int idx, const BlockSpec& spec, const Tensor4& in,
                      Mode mode, ForwardCache::ConvBlock& c) {
  const int ho = conv_out(in.height(), spec.stride), wo = conv_out(in.width(), spec.stride);
  const int cout = spec.out_channels;
  const std::size_t k = static_cast<std::size_t>(kKernel) * kKernel * spec.in_channels;
  const double eps = p.arch.bn_eps;

  c.stride = spec.stride;
  c.input = in;
  im2col(in, spec.stride, ho, wo, c.cols);
  const std::size_t rows = static_cast<std::size_t>(in.batch()) * ho * wo;

  Tensor4 pre(in.batch(), ho, wo, cout);
  ConstMapMat cols(c.cols.data(), rows, k);
  ConstMapMat w(p.params[3 * idx].values.data(), k, cout);
  MapMat(pre.data(), rows, cout).noalias() = cols * w;

  const auto& gamma = p.params[3 * idx + 1].values;
  const auto& beta = p.params[3 * idx + 2].values;
  c.batch_mean.assign(cout, 0.0);
  c.batch_var.assign(cout, 0.0);
  c.inv_std.assign(cout, 0.0);
  if (mode == Mode::kTrain) {
    const double* d = pre.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (int ch = 0; ch < cout; ++ch) c.batch_mean[ch] += d[r * cout + ch];
    for (int ch = 0; ch < cout; ++ch) c.batch_mean[ch] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (int ch = 0; ch < cout; ++ch) {
        const double dv = d[r * cout + ch] - c.batch_mean[ch];
        c.batch_var[ch] += dv * dv;
      }
    for (int ch = 0; ch < cout; ++ch) {
      c.batch_var[ch] /= static_cast<double>(rows);
      c.inv_std[ch] = 1.0 / std::sqrt(c.batch_var[ch] + eps);
    }
  } else {
    c.batch_mean = p.buffers[2 * idx].values;
    c.batch_var = p.buffers[2 * idx + 1].values;
    for (int ch = 0; ch < cout; ++ch) c.inv_std[ch] = 1.0 / std::sqrt(c.batch_var[ch] + eps);
  }

  c.xhat = Tensor4(in.batch(), ho, wo, cout);
  c.output = Tensor4(in.batch(), ho, wo, cout);
  double* xh = c.xhat.data();
  double* out = c.output.data();
  const double* d = pre.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (int ch = 0; ch < cout; ++ch) {
      const std::size_t i = r * cout + ch;
      xh[i] = (d[i] - c.batch_mean[ch]) * c.inv_std[ch];
      out[i] = std::max(0.0, gamma[ch] * xh[i] + beta[ch]);
    }
  return c.output;
}

// Returns dL/d(input) when want_input_grad; accumulates parameter grads.
Tensor4 block_backward(const SegModelParams& p, int idx, const BlockSpec& spec,
                       const ForwardCache::ConvBlock& c, Mode mode, const Tensor4& dout,
                       ModelGrads& g, bool want_input_grad) {
  const int cout = spec.out_channels;
  const std::size_t k = static_cast<std::size_t>(kKernel) * kKernel * spec.in_channels;
  const std::size_t rows = c.output.pixels();
  const auto& gamma = p.params[3 * idx + 1].values;

  std::vector<double> dy(rows * cout);
  const double* out = c.output.data();
  const double* go = dout.data();
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = out[i] > 0.0 ? go[i] : 0.0;

  auto& dgamma = g.values[3 * idx + 1];
  auto& dbeta = g.values[3 * idx + 2];
  std::vector<double> sum_dy(cout, 0.0), sum_dy_xhat(cout, 0.0);
  const double* xh = c.xhat.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (int ch = 0; ch < cout; ++ch) {
      const std::size_t i = r * cout + ch;
      sum_dy[ch] += dy[i];
      sum_dy_xhat[ch] += dy[i] * xh[i];
    }
  for (int ch = 0; ch < cout; ++ch) {
    dgamma[ch] += sum_dy_xhat[ch];
    dbeta[ch] += sum_dy[ch];
  }

  std::vector<double> dpre(rows * cout);
  const double n = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (int ch = 0; ch < cout; ++ch) {
      const std::size_t i = r * cout + ch;
      if (mode == Mode::kTrain) {
        dpre[i] = gamma[ch] * c.inv_std[ch] / n *
                  (n * dy[i] - sum_dy[ch] - xh[i] * sum_dy_xhat[ch]);
      } else {
        dpre[i] = gamma[ch] * c.inv_std[ch] * dy[i];
      }
    }

  ConstMapMat dpre_m(dpre.data(), rows, cout);
  ConstMapMat cols(c.cols.data(), rows, k);
  MapMat(g.values[3 * idx].data(), k, cout).noalias() += cols.transpose() * dpre_m;

  Tensor4 din;
  if (want_input_grad) {
    std::vector<double> dcols(rows * k);
    ConstMapMat w(p.params[3 * idx].values.data(), k, cout);
    MapMat(dcols.data(), rows, k).noalias() = dpre_m * w.transpose();
    din = Tensor4(c.input.batch(), c.input.height(), c.input.width(), c.input.channels());
    col2im(dcols, c.stride, c.output.height(), c.output.width(), din);
  }
  return din;
}

Tensor4 upsample2_concat(const Tensor4& low, const Tensor4& skip) {
  const int cl = low.channels(), cs = skip.channels();
  Tensor4 out(skip.batch(), skip.height(), skip.width(), cl + cs);
  for (int b = 0; b < skip.batch(); ++b)
    for (int y = 0; y < skip.height(); ++y)
      for (int x = 0; x < skip.width(); ++x) {
        double* d = out.pixel(b, y, x);
        std::copy_n(low.pixel(b, y / 2, x / 2), cl, d);
        std::copy_n(skip.pixel(b, y, x), cs, d + cl);
      }
  return out;
}

void split_upsample2_concat_grad(const Tensor4& dcat, Tensor4& dlow, Tensor4& dskip) {
  const int cl = dlow.channels(), cs = dskip.channels();
  std::fill(dlow.values().begin(), dlow.values().end(), 0.0);
  for (int b = 0; b < dcat.batch(); ++b)
    for (int y = 0; y < dcat.height(); ++y)
      for (int x = 0; x < dcat.width(); ++x) {
        const double* s = dcat.pixel(b, y, x);
        double* l = dlow.pixel(b, y / 2, x / 2);
        for (int ch = 0; ch < cl; ++ch) l[ch] += s[ch];
        double* k = dskip.pixel(b, y, x);
        for (int ch = 0; ch < cs; ++ch) k[ch] += s[cl + ch];
      }
}

}  // namespace

std::size_t SegModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params) n += t.values.size();
  return n;
}

ModelGrads ModelGrads::zeros_like(const SegModelParams& p) {
  ModelGrads g;
  g.values.reserve(p.params.size());
  for (const auto& t : p.params) g.values.emplace_back(t.values.size(), 0.0);
  return g;
}

ModelGrads& ModelGrads::operator+=(const ModelGrads& o) {
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < values[i].size(); ++j) values[i][j] += o.values[i][j];
  return *this;
}

void validate_arch(const ArchConfig& a) {
  if (a.in_channels < 1 || a.feature_dim < 1 || a.num_classes < 2 ||
      std::any_of(a.widths.begin(), a.widths.end(), [](int w) { return w < 1; })) {
    throw ValidationError("ArchConfig: widths, feature_dim must be >= 1 and num_classes >= 2");
  }
  if (!(a.bn_momentum > 0.0 && a.bn_momentum <= 1.0) || !(a.bn_eps > 0.0)) {
    throw ValidationError("ArchConfig: bn_momentum in (0, 1] and bn_eps > 0 required");
  }
}

SegModelParams init_model(const ArchConfig& arch, Rng& rng) {
  validate_arch(arch);
  SegModelParams p;
  p.arch = arch;
  const char* names[4] = {"enc1", "enc2", "enc3", "dec"};
  const auto specs = block_specs(arch);
  for (int i = 0; i < 4; ++i) {
    const auto& s = specs[i];
    const int fan_in = kKernel * kKernel * s.in_channels;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    ParamTensor w{std::string(names[i]) + ".conv.weight", ParamKind::kWeight,
                  std::vector<double>(static_cast<std::size_t>(fan_in) * s.out_channels)};
    for (double& v : w.values) v = normal(rng);
    p.params.push_back(std::move(w));
    p.params.push_back({std::string(names[i]) + ".bn.weight", ParamKind::kNormScale,
                        std::vector<double>(s.out_channels, 1.0)});
    p.params.push_back({std::string(names[i]) + ".bn.bias", ParamKind::kNormShift,
                        std::vector<double>(s.out_channels, 0.0)});
    p.buffers.push_back({std::string(names[i]) + ".bn.running_mean",
                         std::vector<double>(s.out_channels, 0.0)});
    p.buffers.push_back({std::string(names[i]) + ".bn.running_var",
                         std::vector<double>(s.out_channels, 1.0)});
  }
  std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / arch.feature_dim));
  ParamTensor cw{"classifier.weight", ParamKind::kWeight,
                 std::vector<double>(static_cast<std::size_t>(arch.num_classes) * arch.feature_dim)};
  for (double& v : cw.values) v = normal(rng);
  p.params.push_back(std::move(cw));
  p.params.push_back({"classifier.bias", ParamKind::kBias,
                      std::vector<double>(arch.num_classes, 0.0)});
  return p;
}

LogitsMap apply_classifier(const SegModelParams& p, const FeatureMap& f) {
  const int c = p.arch.num_classes, d = p.arch.feature_dim;
  if (f.channels() != d) throw ValidationError("apply_classifier: feature dimension mismatch");
  LogitsMap out(f.batch(), f.height(), f.width(), c);
  const std::size_t rows = f.tensor().pixels();
  ConstMapMat fm(f.tensor().data(), rows, d);
  ConstMapMat w(p.classifier_weight().data(), c, d);
  MapMat lm(out.tensor().data(), rows, c);
  lm.noalias() = fm * w.transpose();
  const auto& bias = p.classifier_bias();
  for (std::size_t r = 0; r < rows; ++r)
    for (int k = 0; k < c; ++k) lm(r, k) += bias[k];
  return out;
}

ModelOutput forward(const SegModelParams& p, const ImageBatch& x, Mode mode, ForwardCache* cache) {
  if (x.channels() != p.arch.in_channels) {
    throw ValidationError("forward: expected " + std::to_string(p.arch.in_channels) +
                          " input channels");
  }
  if (x.height() % kInputGranularity != 0 || x.width() % kInputGranularity != 0 ||
      x.height() == 0 || x.width() == 0) {
    throw ValidationError("forward: input size " + std::to_string(x.height()) + "x" +
                          std::to_string(x.width()) + " is not a positive multiple of " +
                          std::to_string(kInputGranularity));
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.mode = mode;
  const auto specs = block_specs(p.arch);
  const Tensor4 e1 = block_forward(p, 0, specs[0], x.tensor(), mode, c.blocks[0]);
  const Tensor4 e2 = block_forward(p, 1, specs[1], e1, mode, c.blocks[1]);
  const Tensor4 e3 = block_forward(p, 2, specs[2], e2, mode, c.blocks[2]);
  const Tensor4 cat = upsample2_concat(e3, e2);
  Tensor4 f = block_forward(p, 3, specs[3], cat, mode, c.blocks[3]);
  ModelOutput out;
  out.features = FeatureMap(std::move(f));
  out.logits = apply_classifier(p, out.features);
  return out;
}

ModelGrads backward(const SegModelParams& p, const ForwardCache& c, const FeatureMap* grad_features,
                    const LogitsMap* grad_logits) {
  ModelGrads g = ModelGrads::zeros_like(p);
  const auto specs = block_specs(p.arch);
  const Tensor4& f = c.blocks[3].output;
  const int cdim = p.arch.num_classes, d = p.arch.feature_dim;
  const std::size_t rows = f.pixels();

  Tensor4 df(f.batch(), f.height(), f.width(), d, 0.0);
  if (grad_features) {
    if (!grad_features->tensor().same_shape(f)) {
      throw ValidationError("backward: feature gradient shape mismatch");
    }
    df = grad_features->tensor();
  }
  if (grad_logits) {
    if (grad_logits->batch() != f.batch() || grad_logits->height() != f.height() ||
        grad_logits->width() != f.width() || grad_logits->channels() != cdim) {
      throw ValidationError("backward: logits gradient shape mismatch");
    }
    ConstMapMat dl(grad_logits->tensor().data(), rows, cdim);
    ConstMapMat fm(f.data(), rows, d);
    ConstMapMat w(p.classifier_weight().data(), cdim, d);
    MapMat(g.values[SegModelParams::kClassifierWeight].data(), cdim, d).noalias() +=
        dl.transpose() * fm;
    auto& db = g.values[SegModelParams::kClassifierBias];
    for (std::size_t r = 0; r < rows; ++r)
      for (int k = 0; k < cdim; ++k) db[k] += dl(r, k);
    MapMat(df.data(), rows, d).noalias() += dl * w;
  }

  const Tensor4 dcat = block_backward(p, 3, specs[3], c.blocks[3], c.mode, df, g, true);
  const Tensor4& e2 = c.blocks[1].output;
  const Tensor4& e3 = c.blocks[2].output;
  Tensor4 de3(e3.batch(), e3.height(), e3.width(), e3.channels());
  Tensor4 de2(e2.batch(), e2.height(), e2.width(), e2.channels(), 0.0);
  split_upsample2_concat_grad(dcat, de3, de2);
  const Tensor4 de2_from_enc3 = block_backward(p, 2, specs[2], c.blocks[2], c.mode, de3, g, true);
  for (std::size_t i = 0; i < de2.size(); ++i) de2.values()[i] += de2_from_enc3.values()[i];
  const Tensor4 de1 = block_backward(p, 1, specs[1], c.blocks[1], c.mode, de2, g, true);
  block_backward(p, 0, specs[0], c.blocks[0], c.mode, de1, g, false);
  return g;
}

void update_running_stats(SegModelParams& p, const ForwardCache& c) {
  if (c.mode != Mode::kTrain) return;
  const double m = p.arch.bn_momentum;
  for (int i = 0; i < 4; ++i) {
    const auto& blk = c.blocks[i];
    const double n = static_cast<double>(blk.output.pixels());
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    auto& rm = p.buffers[2 * i].values;
    auto& rv = p.buffers[2 * i + 1].values;
    for (std::size_t ch = 0; ch < rm.size(); ++ch) {
      rm[ch] = (1 - m) * rm[ch] + m * blk.batch_mean[ch];
      rv[ch] = (1 - m) * rv[ch] + m * blk.batch_var[ch] * unbias;
    }
  }
}

namespace {

struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double s = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double f = std::max(0.0, (o + 0.5) * s - 0.5);
    const int i0 = std::min(static_cast<int>(f), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, f - i0};
  }
  return taps;
}

}  // namespace

LogitsMap upsample_logits(const LogitsMap& p, int height, int width) {
  if (height < p.height() || width < p.width()) {
    throw ValidationError("upsample_logits: target smaller than source");
  }
  if (height == p.height() && width == p.width()) return p;
  const auto ty = bilinear_taps(p.height(), height);
  const auto tx = bilinear_taps(p.width(), width);
  const int c = p.channels();
  LogitsMap out(p.batch(), height, width, c);
  for (int b = 0; b < p.batch(); ++b)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const Tap& a = ty[y];
        const Tap& t = tx[x];
        double* o = out.pixel(b, y, x);
        const double* p00 = p.pixel(b, a.i0, t.i0);
        const double* p01 = p.pixel(b, a.i0, t.i1);
        const double* p10 = p.pixel(b, a.i1, t.i0);
        const double* p11 = p.pixel(b, a.i1, t.i1);
        for (int k = 0; k < c; ++k) {
          const double top = p00[k] * (1 - t.w1) + p01[k] * t.w1;
          const double bot = p10[k] * (1 - t.w1) + p11[k] * t.w1;
          o[k] = top * (1 - a.w1) + bot * a.w1;
        }
      }
  return out;
}

LogitsMap upsample_logits_backward(const LogitsMap& grad, int height, int width) {
  if (grad.height() == height && grad.width() == width) return grad;
  const auto ty = bilinear_taps(height, grad.height());
  const auto tx = bilinear_taps(width, grad.width());
  const int c = grad.channels();
  LogitsMap out(grad.batch(), height, width, c, 0.0);
  for (int b = 0; b < grad.batch(); ++b)
    for (int y = 0; y < grad.height(); ++y)
      for (int x = 0; x < grad.width(); ++x) {
        const Tap& a = ty[y];
        const Tap& t = tx[x];
        const double* gi = grad.pixel(b, y, x);
        double* p00 = out.pixel(b, a.i0, t.i0);
        double* p01 = out.pixel(b, a.i0, t.i1);
        double* p10 = out.pixel(b, a.i1, t.i0);
        double* p11 = out.pixel(b, a.i1, t.i1);
        for (int k = 0; k < c; ++k) {
          p00[k] += gi[k] * (1 - t.w1) * (1 - a.w1);
          p01[k] += gi[k] * t.w1 * (1 - a.w1);
          p10[k] += gi[k] * (1 - t.w1) * a.w1;
          p11[k] += gi[k] * t.w1 * a.w1;
        }
      }
  return out;
}

}  // namespace mkd
