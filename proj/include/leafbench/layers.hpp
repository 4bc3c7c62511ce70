#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leafbench/errors.hpp"
#include "leafbench/rng.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

// ===========================================================================
// Elementwise activations
// ===========================================================================

/// Logistic function, evaluated without overflow and kept strictly inside (0,1).
template <std::floating_point T>
T sigmoid(T x) {
  T y;
  if (x >= T(0)) {
    y = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    y = e / (T(1) + e);
  }
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(y, lo, hi);
}

template <typename T>
std::vector<T> sigmoid(std::span<const T> x) {
  std::vector<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](T v) { return sigmoid(v); });
  return out;
}

template <std::floating_point T>
T relu(T x) {
  return x < T(0) ? T(0) : x;
}

template <typename T>
std::vector<T> relu(std::span<const T> x) {
  std::vector<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](T v) { return relu(v); });
  return out;
}

// ===========================================================================
// Parameter blocks
// ===========================================================================

enum class Padding { valid, same };

inline std::string to_string(Padding p) { return p == Padding::valid ? "valid" : "same"; }
inline Padding parse_padding(std::string_view s) {
  if (s == "valid") return Padding::valid;
  if (s == "same") return Padding::same;
  throw Error(ErrorKind::ConfigError, "padding must be 'valid' or 'same'");
}

inline constexpr std::size_t kMaxKernelSide = 5;

/// Convolution filters stored as [out][in][kh][kw] plus one bias per output channel.
template <typename T>
struct ConvLayerParams {
  std::size_t out_channels = 0, in_channels = 0, kh = 0, kw = 0;
  std::vector<T> kernels;
  std::vector<T> bias;
  std::size_t stride = 1;
  Padding padding = Padding::valid;

  ConvLayerParams() = default;
  ConvLayerParams(std::size_t out, std::size_t in, std::size_t kh_, std::size_t kw_, std::size_t stride_ = 1,
                  Padding pad = Padding::valid)
      : out_channels(out), in_channels(in), kh(kh_), kw(kw_), kernels(out * in * kh_ * kw_, T(0)),
        bias(out, T(0)), stride(stride_), padding(pad) {
    validate();
  }

  void validate() const {
    if (out_channels == 0 || in_channels == 0 || kh == 0 || kw == 0 || stride == 0)
      throw Error(ErrorKind::ConfigError, "convolution dimensions and stride must be positive");
    if (kh > kMaxKernelSide || kw > kMaxKernelSide)
      throw Error(ErrorKind::ConfigError, "kernel side must not exceed 5");
    if (kernels.size() != out_channels * in_channels * kh * kw || bias.size() != out_channels)
      throw Error(ErrorKind::ShapeMismatch, "convolution parameter buffers have wrong length");
  }

  T& kernel(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return kernels[((o * in_channels + i) * kh + y) * kw + x];
  }
  const T& kernel(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return kernels[((o * in_channels + i) * kh + y) * kw + x];
  }
};

struct ConvGeometry {
  std::size_t out_h, out_w, pad_top, pad_left;
};

/// Output size and leading padding. "same" pads so that out = ceil(in / stride),
/// with any odd padding placed at the bottom/right.
inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
                                  Padding padding) {
  ConvGeometry g{};
  if (padding == Padding::valid) {
    if (h < kh || w < kw) throw Error(ErrorKind::ShapeMismatch, "input smaller than kernel under valid padding");
    g.out_h = (h - kh) / stride + 1;
    g.out_w = (w - kw) / stride + 1;
  } else {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + kh;
    const std::size_t need_w = (g.out_w - 1) * stride + kw;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
  }
  return g;
}

template <typename T>
struct BatchNormState {
  std::vector<T> gamma, beta, running_mean, running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.99);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)), running_var(channels, T(1)) {}

  std::size_t channels() const { return gamma.size(); }
};

/// One weight row per output node.
template <typename T>
struct DenseParams {
  std::size_t in_dim = 0, out_dim = 0;
  std::vector<T> weights;  // [out][in]
  std::vector<T> bias;

  DenseParams() = default;
  DenseParams(std::size_t in, std::size_t out) : in_dim(in), out_dim(out), weights(in * out, T(0)), bias(out, T(0)) {}

  T& w(std::size_t o, std::size_t i) { return weights[o * in_dim + i]; }
  const T& w(std::size_t o, std::size_t i) const { return weights[o * in_dim + i]; }
};

enum class Activation { none, sigmoid };

// ===========================================================================
// Forward operations
// ===========================================================================

namespace detail {

/// Kernel reordered to [ky][kx][in][out] so the innermost loops run over
/// contiguous output channels.
template <typename T>
std::vector<T> kernel_hwio(const ConvLayerParams<T>& p) {
  std::vector<T> k(p.kernels.size());
  for (std::size_t o = 0; o < p.out_channels; ++o)
    for (std::size_t i = 0; i < p.in_channels; ++i)
      for (std::size_t y = 0; y < p.kh; ++y)
        for (std::size_t x = 0; x < p.kw; ++x)
          k[((y * p.kw + x) * p.in_channels + i) * p.out_channels + o] = p.kernel(o, i, y, x);
  return k;
}

template <typename T>
void conv_forward_hwio(const Tensor<T>& in, const ConvLayerParams<T>& p, const std::vector<T>& khwio, Tensor<T>& out,
                       const ConvGeometry& g) {
  const auto& s = in.shape();
  const std::size_t co_n = p.out_channels, ci_n = p.in_channels;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T* acc = &out.at(n, oy, ox, 0);
        std::copy(p.bias.begin(), p.bias.end(), acc);
        for (std::size_t ky = 0; ky < p.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t kx = 0; kx < p.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const T* src = &in.at(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
            const T* kk = &khwio[(ky * p.kw + kx) * ci_n * co_n];
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              const T v = src[ci];
              const T* krow = kk + ci * co_n;
              for (std::size_t co = 0; co < co_n; ++co) acc[co] += v * krow[co];
            }
          }
        }
      }
}

}  // namespace detail

/// Multi-channel cross-correlation: output channel i is bias_i plus the sum
/// over input channels j of input_j correlated with kernel (i, j).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvLayerParams<T>& params) {
  params.validate();
  const auto& s = input.shape();
  if (s.c != params.in_channels)
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(s.c) + " channels, kernels expect " +
                                              std::to_string(params.in_channels));
  const auto g = conv_geometry(s.h, s.w, params.kh, params.kw, params.stride, params.padding);
  Tensor<T> out(Shape{s.n, g.out_h, g.out_w, params.out_channels});
  detail::conv_forward_hwio(input, params, detail::kernel_hwio(params), out, g);
  return out;
}

/// Per-channel statistics of a batch viewed as rows of `channels` values.
template <typename T>
struct ChannelStats {
  std::vector<T> mean, var;  // population variance
};

template <typename T>
ChannelStats<T> channel_stats(std::span<const T> values, std::size_t channels) {
  const std::size_t rows = values.size() / channels;
  ChannelStats<T> st{std::vector<T>(channels, T(0)), std::vector<T>(channels, T(0))};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < channels; ++c) st.mean[c] += values[r * channels + c];
  for (auto& m : st.mean) m /= static_cast<T>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < channels; ++c) {
      const T d = values[r * channels + c] - st.mean[c];
      st.var[c] += d * d;
    }
  for (auto& v : st.var) v /= static_cast<T>(rows);
  return st;
}

/// Affine map followed by an optional elementwise activation.
template <typename T>
std::vector<T> dense_forward(std::span<const T> x, const DenseParams<T>& params, Activation activation) {
  if (x.size() != params.in_dim)
    throw Error(ErrorKind::ShapeMismatch, "dense input has length " + std::to_string(x.size()) + ", expected " +
                                              std::to_string(params.in_dim));
  std::vector<T> out(params.out_dim);
  for (std::size_t o = 0; o < params.out_dim; ++o) {
    T acc = params.bias[o];
    const T* row = &params.weights[o * params.in_dim];
    for (std::size_t i = 0; i < params.in_dim; ++i) acc += row[i] * x[i];
    out[o] = activation == Activation::sigmoid ? sigmoid(acc) : acc;
  }
  return out;
}

// ===========================================================================
// Trainable layers
// ===========================================================================

/// A named view onto one parameter buffer and its gradient accumulator.
template <typename T>
struct ParamRef {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
};

/// Non-trainable state that still belongs in a checkpoint (running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  std::span<T> value;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  /// Accumulates parameter gradients and, when asked, returns the gradient
  /// with respect to the last forward input.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) = 0;
  virtual std::vector<ParamRef<T>> parameters() { return {}; }
  virtual std::vector<BufferRef<T>> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

/// Glorot-uniform fill, the usual default for conv and dense kernels.
template <typename T>
void glorot_uniform(std::span<T> w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& gen) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w) v = static_cast<T>((2.0 * uniform_unit(gen) - 1.0) * limit);
}

template <typename T>
class Conv2DLayer final : public Layer<T> {
 public:
  explicit Conv2DLayer(ConvLayerParams<T> params)
      : p_(std::move(params)), dk_(p_.kernels.size(), T(0)), db_(p_.bias.size(), T(0)) {
    p_.validate();
  }

  std::string kind() const override { return "conv2d"; }
  const ConvLayerParams<T>& params() const { return p_; }
  ConvLayerParams<T>& params() { return p_; }

  Shape output_shape(const Shape& in) const override {
    if (in.c != p_.in_channels) throw Error(ErrorKind::ConfigError, "conv input channels mismatch");
    const auto g = conv_geometry(in.h, in.w, p_.kh, p_.kw, p_.stride, p_.padding);
    return {in.n, g.out_h, g.out_w, p_.out_channels};
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.shape().c != p_.in_channels) throw Error(ErrorKind::ShapeMismatch, "conv input channels mismatch");
    input_ = x;
    khwio_ = detail::kernel_hwio(p_);
    geom_ = conv_geometry(x.shape().h, x.shape().w, p_.kh, p_.kw, p_.stride, p_.padding);
    Tensor<T> out(Shape{x.shape().n, geom_.out_h, geom_.out_w, p_.out_channels});
    detail::conv_forward_hwio(x, p_, khwio_, out, geom_);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override {
    const auto& s = input_.shape();
    const std::size_t co_n = p_.out_channels, ci_n = p_.in_channels;
    std::vector<T> dk(khwio_.size(), T(0));
    Tensor<T> dx = need_input_grad ? Tensor<T>(s) : Tensor<T>();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t oy = 0; oy < geom_.out_h; ++oy)
        for (std::size_t ox = 0; ox < geom_.out_w; ++ox) {
          const T* g = &grad_out.at(n, oy, ox, 0);
          for (std::size_t co = 0; co < co_n; ++co) db_[co] += g[co];
          for (std::size_t ky = 0; ky < p_.kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * p_.stride + ky) - static_cast<std::ptrdiff_t>(geom_.pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kx = 0; kx < p_.kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * p_.stride + kx) - static_cast<std::ptrdiff_t>(geom_.pad_left);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t off = input_.index(n, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
              const T* src = input_.data() + off;
              const std::size_t kbase = (ky * p_.kw + kx) * ci_n * co_n;
              for (std::size_t ci = 0; ci < ci_n; ++ci) {
                const T v = src[ci];
                T* dkrow = &dk[kbase + ci * co_n];
                for (std::size_t co = 0; co < co_n; ++co) dkrow[co] += v * g[co];
              }
              if (need_input_grad) {
                T* dst = dx.data() + off;
                for (std::size_t ci = 0; ci < ci_n; ++ci) {
                  const T* krow = &khwio_[kbase + ci * co_n];
                  T acc = T(0);
                  for (std::size_t co = 0; co < co_n; ++co) acc += krow[co] * g[co];
                  dst[ci] += acc;
                }
              }
            }
          }
        }
    for (std::size_t o = 0; o < co_n; ++o)
      for (std::size_t i = 0; i < ci_n; ++i)
        for (std::size_t y = 0; y < p_.kh; ++y)
          for (std::size_t x = 0; x < p_.kw; ++x)
            dk_[((o * ci_n + i) * p_.kh + y) * p_.kw + x] += dk[((y * p_.kw + x) * ci_n + i) * co_n + o];
    return dx;
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"kernels", p_.kernels, dk_}, {"bias", p_.bias, db_}};
  }

  std::unique_ptr<Layer<T>> clone() const override {
    auto c = std::make_unique<Conv2DLayer>(p_);
    return c;
  }

 private:
  ConvLayerParams<T> p_;
  std::vector<T> dk_, db_;
  Tensor<T> input_;
  std::vector<T> khwio_;
  ConvGeometry geom_{};
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(BatchNormState<T> state)
      : s_(std::move(state)), dgamma_(s_.channels(), T(0)), dbeta_(s_.channels(), T(0)) {}

  std::string kind() const override { return "batchnorm"; }
  const BatchNormState<T>& state() const { return s_; }
  BatchNormState<T>& state() { return s_; }

  Shape output_shape(const Shape& in) const override {
    if (in.c != s_.channels()) throw Error(ErrorKind::ConfigError, "batchnorm channel mismatch");
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    const std::size_t ch = s_.channels();
    if (x.shape().c != ch) throw Error(ErrorKind::ShapeMismatch, "batchnorm channel mismatch");
    training_ = training;
    const std::size_t rows = x.size() / ch;
    std::vector<T> mean = s_.running_mean, var = s_.running_var;
    if (training) {
      if (rows < 2) throw Error(ErrorKind::DegenerateBatch, "batch statistics need at least 2 values per channel");
      auto st = channel_stats(x.span(), ch);
      mean = st.mean;
      var = st.var;
      for (std::size_t c = 0; c < ch; ++c) {
        s_.running_mean[c] = s_.momentum * s_.running_mean[c] + (T(1) - s_.momentum) * mean[c];
        s_.running_var[c] = s_.momentum * s_.running_var[c] + (T(1) - s_.momentum) * var[c];
      }
    }
    invstd_.assign(ch, T(0));
    for (std::size_t c = 0; c < ch; ++c) invstd_[c] = T(1) / std::sqrt(var[c] + s_.epsilon);
    xhat_ = Tensor<T>(x.shape());
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = r * ch + c;
        xhat_[k] = (x[k] - mean[c]) * invstd_[c];
        out[k] = s_.gamma[c] * xhat_[k] + s_.beta[c];
      }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override {
    const std::size_t ch = s_.channels();
    const std::size_t rows = grad_out.size() / ch;
    std::vector<T> sum_g(ch, T(0)), sum_gx(ch, T(0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = r * ch + c;
        sum_g[c] += grad_out[k];
        sum_gx[c] += grad_out[k] * xhat_[k];
      }
    for (std::size_t c = 0; c < ch; ++c) {
      dbeta_[c] += sum_g[c];
      dgamma_[c] += sum_gx[c];
    }
    if (!need_input_grad) return {};
    Tensor<T> dx(grad_out.shape());
    const T m = static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = r * ch + c;
        if (training_) {
          // d/dx of gamma * (x - mean) / sqrt(var + eps) with batch mean and var
          dx[k] = s_.gamma[c] * invstd_[c] / m * (m * grad_out[k] - sum_g[c] - xhat_[k] * sum_gx[c]);
        } else {
          dx[k] = s_.gamma[c] * invstd_[c] * grad_out[k];
        }
      }
    return dx;
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"gamma", s_.gamma, dgamma_}, {"beta", s_.beta, dbeta_}};
  }
  std::vector<BufferRef<T>> buffers() override {
    return {{"running_mean", s_.running_mean}, {"running_var", s_.running_var}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNormLayer>(s_); }

 private:
  BatchNormState<T> s_;
  std::vector<T> dgamma_, dbeta_;
  Tensor<T> xhat_;
  std::vector<T> invstd_;
  bool training_ = false;
};

/// Batch normalization over every axis except the channel axis. In training
/// mode the batch statistics are used and the running statistics are updated
/// as running = momentum * running + (1 - momentum) * batch.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& batch, BatchNormState<T>& state, bool training) {
  BatchNormLayer<T> layer(state);
  auto out = layer.forward(batch, training);
  state = layer.state();
  return out;
}

template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    Tensor<T> out(x.shape());
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = x[i] > T(0);
      out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor<T> dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask_[i] ? grad_out[i] : T(0);
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReluLayer>(); }

 private:
  std::vector<unsigned char> mask_;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
class MaxPool2Layer final : public Layer<T> {
 public:
  std::string kind() const override { return "maxpool2"; }

  Shape output_shape(const Shape& in) const override {
    if (in.h < 2 || in.w < 2) throw Error(ErrorKind::ConfigError, "feature map too small to pool: " + in.str());
    return {in.n, in.h / 2, in.w / 2, in.c};
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    const auto& s = x.shape();
    in_shape_ = s;
    Tensor<T> out(output_shape(s));
    argmax_.assign(out.size(), 0);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t oy = 0; oy < s.h / 2; ++oy)
        for (std::size_t ox = 0; ox < s.w / 2; ++ox)
          for (std::size_t c = 0; c < s.c; ++c) {
            std::size_t best = x.index(n, 2 * oy, 2 * ox, c);
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t k = x.index(n, 2 * oy + dy, 2 * ox + dx, c);
                if (x[k] > x[best] || std::isnan(x[k])) best = k;
              }
            const std::size_t o = out.index(n, oy, ox, c);
            out[o] = x[best];
            argmax_[o] = best;
          }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2Layer>(); }

 private:
  Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

/// Dense layer over flattened samples; output has shape [n, 1, 1, out_dim].
/// The activation is applied by the caller (the head keeps raw logits).
template <typename T>
class DenseLayer final : public Layer<T> {
 public:
  explicit DenseLayer(DenseParams<T> params)
      : p_(std::move(params)), dw_(p_.weights.size(), T(0)), db_(p_.bias.size(), T(0)) {}

  std::string kind() const override { return "dense"; }
  const DenseParams<T>& params() const { return p_; }
  DenseParams<T>& params() { return p_; }

  Shape output_shape(const Shape& in) const override {
    if (in.per_sample() != p_.in_dim)
      throw Error(ErrorKind::ConfigError, "dense input width " + std::to_string(in.per_sample()) + " != " +
                                              std::to_string(p_.in_dim));
    return {in.n, 1, 1, p_.out_dim};
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.shape().per_sample() != p_.in_dim) throw Error(ErrorKind::ShapeMismatch, "dense input width mismatch");
    input_ = x;
    const std::size_t n = x.shape().n;
    Tensor<T> out(Shape{n, 1, 1, p_.out_dim});
    for (std::size_t b = 0; b < n; ++b) {
      auto y = dense_forward<T>(x.sample(b), p_, Activation::none);
      std::copy(y.begin(), y.end(), out.sample(b).begin());
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override {
    const std::size_t n = input_.shape().n;
    Tensor<T> dx = need_input_grad ? Tensor<T>(input_.shape()) : Tensor<T>();
    for (std::size_t b = 0; b < n; ++b) {
      auto x = input_.sample(b);
      auto g = grad_out.sample(b);
      for (std::size_t o = 0; o < p_.out_dim; ++o) {
        const T go = g[o];
        db_[o] += go;
        T* dwrow = &dw_[o * p_.in_dim];
        for (std::size_t i = 0; i < p_.in_dim; ++i) dwrow[i] += go * x[i];
        if (need_input_grad) {
          const T* wrow = &p_.weights[o * p_.in_dim];
          auto dxs = dx.sample(b);
          for (std::size_t i = 0; i < p_.in_dim; ++i) dxs[i] += go * wrow[i];
        }
      }
    }
    return dx;
  }

  std::vector<ParamRef<T>> parameters() override { return {{"weights", p_.weights, dw_}, {"bias", p_.bias, db_}}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<DenseLayer>(p_); }

 private:
  DenseParams<T> p_;
  std::vector<T> dw_, db_;
  Tensor<T> input_;
};

/// Mean over the spatial axes: [n, h, w, c] -> [n, 1, 1, c].
template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& in) const override { return {in.n, 1, 1, in.c}; }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    const auto& s = x.shape();
    Tensor<T> out(output_shape(s));
    const T inv = T(1) / static_cast<T>(s.h * s.w);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < s.h * s.w; ++p)
        for (std::size_t c = 0; c < s.c; ++c) out[n * s.c + c] += x[(n * s.h * s.w + p) * s.c + c] * inv;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) override {
    if (!need_input_grad) return {};
    const auto& s = in_shape_;
    Tensor<T> dx(s);
    const T inv = T(1) / static_cast<T>(s.h * s.w);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < s.h * s.w; ++p)
        for (std::size_t c = 0; c < s.c; ++c) dx[(n * s.h * s.w + p) * s.c + c] = grad_out[n * s.c + c] * inv;
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPoolLayer>(); }

 private:
  Shape in_shape_{};
};

/// Ordered stack of layers with prefixed parameter names ("3.kernels").
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      layers_.clear();
      for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Shape output_shape(Shape in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  Tensor<T> forward(Tensor<T> x, bool training) {
    for (auto& l : layers_) x = l->forward(x, training);
    return x;
  }

  Tensor<T> backward(Tensor<T> grad, bool need_input_grad) {
    for (std::size_t i = layers_.size(); i-- > 0;) grad = layers_[i]->backward(grad, need_input_grad || i > 0);
    return grad;
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto p : layers_[i]->parameters()) {
        p.name = std::to_string(i) + "." + p.name;
        out.push_back(p);
      }
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto b : layers_[i]->buffers()) {
        b.name = std::to_string(i) + "." + b.name;
        out.push_back(b);
      }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace leafbench
