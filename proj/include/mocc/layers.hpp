#pragma once

// Neural layers with explicit forward/backward passes over [B,C,H,W] tensors.
//
// Every forward takes an optional context pointer. When one is supplied the
// forward records what backward needs (inputs, masks, argmax indices, batch
// statistics). A context is consumed by exactly one backward call, which is
// why the backward functions take it by rvalue reference.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mocc/errors.hpp"
#include "mocc/rng.hpp"
#include "mocc/tensor.hpp"

namespace mocc {

enum class Mode { train, eval };

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T> using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Unfold one image [C,H,W] into a [C*9, H*W] patch matrix for a 3x3 kernel
// with zero padding 1.
template <typename T>
void im2col3x3(const T *image, std::size_t channels, std::size_t height, std::size_t width,
               T *col) {
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const T *src = image + c * plane;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T *row = col + ((c * 3 + ky) * 3 + kx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          T *dst = row + y * width;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + width, T{0});
            continue;
          }
          const T *line = src + static_cast<std::size_t>(sy) * width;
          if (kx == 0) {
            dst[0] = T{0};
            std::copy(line, line + width - 1, dst + 1);
          } else if (kx == 1) {
            std::copy(line, line + width, dst);
          } else {
            std::copy(line + 1, line + width, dst);
            dst[width - 1] = T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col3x3: scatter-add patch gradients back into the image.
template <typename T>
void col2im3x3(const T *col, std::size_t channels, std::size_t height, std::size_t width,
               T *image) {
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    T *dst = image + c * plane;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T *row = col + ((c * 3 + ky) * 3 + kx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height))
            continue;
          const T *src = row + y * width;
          T *line = dst + static_cast<std::size_t>(sy) * width;
          if (kx == 0) {
            for (std::size_t x = 1; x < width; ++x)
              line[x - 1] += src[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < width; ++x)
              line[x] += src[x];
          } else {
            for (std::size_t x = 0; x + 1 < width; ++x)
              line[x + 1] += src[x];
          }
        }
      }
    }
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernels, stride 1, zero padding 1 ("same" output size).

template <typename T> struct Conv2dContext {
  Tensor<T> input;
};

template <typename T> struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  Tensor<T> bias; // empty when the forward had no bias
};

// kernels: [F,C,3,3]; bias: [F] or empty for a bias-free convolution.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T> &input, const Tensor<T> &kernels,
                         const Tensor<T> &bias, Conv2dContext<T> *ctx = nullptr) {
  require_rank4(input.shape(), "conv2d input");
  require_rank4(kernels.shape(), "conv2d kernels");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  const std::size_t filters = kernels.dim(0);
  if (kernels.dim(1) != channels)
    throw DimensionError("conv2d: input has " + std::to_string(channels) +
                         " channels but kernels expect " + std::to_string(kernels.dim(1)));
  if (kernels.dim(2) != 3 || kernels.dim(3) != 3)
    throw DimensionError("conv2d: only 3x3 kernels are supported, got " +
                         shape_str(kernels.shape()));
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != filters))
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(filters) + " filters");

  const std::size_t plane = height * width;
  const std::size_t patch = channels * 9;
  Tensor<T> out({batch, filters, height, width});
  // Products run on Eigen-owned (aligned) buffers so vectorized reductions do
  // not depend on where the tensor storage happens to land in memory.
  const detail::RowMatrix<T> w = detail::ConstMatrixMap<T>(
      kernels.data(), static_cast<Eigen::Index>(filters), static_cast<Eigen::Index>(patch));
  detail::RowMatrix<T> cols(patch, plane);
  detail::RowMatrix<T> o(filters, plane);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col3x3(input.data() + b * channels * plane, channels, height, width, cols.data());
    o.noalias() = w * cols;
    if (!bias.empty())
      for (std::size_t f = 0; f < filters; ++f)
        o.row(static_cast<Eigen::Index>(f)).array() += bias[f];
    std::copy_n(o.data(), filters * plane, out.data() + b * filters * plane);
  }
  if (ctx)
    ctx->input = input;
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T> &grad_out, const Tensor<T> &kernels,
                               bool has_bias, Conv2dContext<T> &&ctx) {
  const Tensor<T> input = std::move(ctx.input);
  if (input.empty())
    throw StateError("conv2d_backward: context holds no forward input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  const std::size_t filters = kernels.dim(0);
  if (grad_out.shape() != Shape{batch, filters, height, width})
    throw DimensionError("conv2d_backward: gradient shape " + shape_str(grad_out.shape()));

  const std::size_t plane = height * width;
  const std::size_t patch = channels * 9;
  Conv2dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernels.shape()),
                       has_bias ? Tensor<T>({filters}) : Tensor<T>()};
  const detail::RowMatrix<T> w = detail::ConstMatrixMap<T>(
      kernels.data(), static_cast<Eigen::Index>(filters), static_cast<Eigen::Index>(patch));
  detail::RowMatrix<T> gw = detail::RowMatrix<T>::Zero(filters, patch);
  detail::RowMatrix<T> cols(patch, plane), gc(patch, plane);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col3x3(input.data() + b * channels * plane, channels, height, width, cols.data());
    const detail::RowMatrix<T> go = detail::ConstMatrixMap<T>(
        grad_out.data() + b * filters * plane, static_cast<Eigen::Index>(filters),
        static_cast<Eigen::Index>(plane));
    gw.noalias() += go * cols.transpose();
    gc.noalias() = w.transpose() * go;
    detail::col2im3x3(gc.data(), channels, height, width,
                      grads.input.data() + b * channels * plane);
    if (has_bias)
      for (std::size_t f = 0; f < filters; ++f)
        grads.bias[f] += go.row(static_cast<Eigen::Index>(f)).sum();
  }
  std::copy_n(gw.data(), filters * patch, grads.kernels.data());
  return grads;
}

// ---------------------------------------------------------------------------
// batchnorm2d: per-channel normalization over (B,H,W).

template <typename T> struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  static RunningStats fresh(std::size_t channels) {
    return {Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{1})};
  }
  bool initialized() const noexcept { return !mean.empty() && !var.empty(); }
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T> struct BatchNormContext {
  Mode mode = Mode::train;
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <typename T> struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

// Train mode normalizes with batch statistics and folds them into `stats` by
// exponential moving average (uninitialized stats start at mean 0, var 1);
// eval mode reads `stats`. The running variance uses the unbiased estimate.
template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T> &input, const Tensor<T> &gamma,
                              const Tensor<T> &beta, RunningStats<T> &stats, Mode mode,
                              const BatchNormOptions &options = {},
                              BatchNormContext<T> *ctx = nullptr) {
  require_rank4(input.shape(), "batchnorm2d input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
    throw DimensionError("batchnorm2d: affine parameters must have shape [" +
                         std::to_string(channels) + "]");

  std::vector<T> mean(channels), inv_std(channels);
  if (mode == Mode::eval) {
    if (!stats.initialized())
      throw StateError("batchnorm2d: eval mode before running statistics were initialized");
    if (stats.mean.shape() != Shape{channels})
      throw DimensionError("batchnorm2d: running statistics have wrong channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + options.eps));
    }
  } else {
    const std::size_t count = batch * plane;
    if (!stats.initialized())
      stats = RunningStats<T>::fresh(channels);
    if (stats.mean.shape() != Shape{channels})
      throw DimensionError("batchnorm2d: running statistics have wrong channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T *p = input.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          sum += static_cast<double>(p[i]);
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T *p = input.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      const double m = options.momentum;
      stats.mean[c] = static_cast<T>((1.0 - m) * static_cast<double>(stats.mean[c]) + m * mu);
      stats.var[c] =
          static_cast<T>((1.0 - m) * static_cast<double>(stats.var[c]) + m * unbiased);
    }
  }

  Tensor<T> out(input.shape());
  Tensor<T> xhat = ctx ? Tensor<T>(input.shape()) : Tensor<T>();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t offset = (b * channels + c) * plane;
      const T mu = mean[c], is = inv_std[c], g = gamma[c], be = beta[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (input[offset + i] - mu) * is;
        if (ctx)
          xhat[offset + i] = h;
        out[offset + i] = g * h + be;
      }
    }
  }
  if (ctx) {
    ctx->mode = mode;
    ctx->xhat = std::move(xhat);
    ctx->inv_std = std::move(inv_std);
  }
  return out;
}

// Eval-mode forward over read-only statistics.
template <typename T>
Tensor<T> batchnorm2d_eval(const Tensor<T> &input, const Tensor<T> &gamma,
                           const Tensor<T> &beta, const RunningStats<T> &stats,
                           const BatchNormOptions &options = {},
                           BatchNormContext<T> *ctx = nullptr) {
  RunningStats<T> copy = stats;
  return batchnorm2d_forward(input, gamma, beta, copy, Mode::eval, options, ctx);
}

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const Tensor<T> &grad_out, const Tensor<T> &gamma,
                                       BatchNormContext<T> &&ctx) {
  const Tensor<T> xhat = std::move(ctx.xhat);
  if (xhat.empty())
    throw StateError("batchnorm2d_backward: context holds no forward state");
  grad_out.require_same_shape(xhat, "batchnorm2d_backward");
  const std::size_t batch = xhat.dim(0), channels = xhat.dim(1);
  const std::size_t plane = xhat.dim(2) * xhat.dim(3);
  const double count = static_cast<double>(batch * plane);

  BatchNormGrads<T> grads{Tensor<T>(xhat.shape()), Tensor<T>({channels}),
                          Tensor<T>({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t offset = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += static_cast<double>(grad_out[offset + i]);
        sum_dy_xhat += static_cast<double>(grad_out[offset + i]) *
                       static_cast<double>(xhat[offset + i]);
      }
    }
    grads.gamma[c] = static_cast<T>(sum_dy_xhat);
    grads.beta[c] = static_cast<T>(sum_dy);
    const double scale = static_cast<double>(gamma[c]) * static_cast<double>(ctx.inv_std[c]);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t offset = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double dy = static_cast<double>(grad_out[offset + i]);
        if (ctx.mode == Mode::eval) {
          grads.input[offset + i] = static_cast<T>(scale * dy);
        } else {
          const double h = static_cast<double>(xhat[offset + i]);
          grads.input[offset + i] =
              static_cast<T>(scale * (dy - sum_dy / count - h * sum_dy_xhat / count));
        }
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// maxpool2d: 2x2 window, stride 2.

template <typename T> struct MaxPoolContext {
  Shape input_shape;
  std::vector<std::uint32_t> argmax; // flat input index per output element
};

template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T> &input, MaxPoolContext<T> *ctx = nullptr) {
  require_rank4(input.shape(), "maxpool2d input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  if (height % 2 != 0 || width % 2 != 0)
    throw DimensionError("maxpool2d: spatial size " + std::to_string(height) + "x" +
                         std::to_string(width) + " is not even");
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor<T> out({batch, channels, oh, ow});
  std::vector<std::uint32_t> argmax(ctx ? out.size() : 0);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const std::size_t base = bc * height * width;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        // Row-major scan with strict '>' keeps the first maximum on ties.
        std::size_t best = base + (2 * y) * width + 2 * x;
        const std::size_t candidates[3] = {best + 1, best + width, best + width + 1};
        for (auto idx : candidates)
          if (input[idx] > input[best])
            best = idx;
        out[o] = input[best];
        if (ctx)
          argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (ctx) {
    ctx->input_shape = input.shape();
    ctx->argmax = std::move(argmax);
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T> &grad_out, MaxPoolContext<T> &&ctx) {
  if (ctx.argmax.size() != grad_out.size())
    throw DimensionError("maxpool2d_backward: gradient does not match the recorded forward");
  Tensor<T> grad_in(ctx.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o)
    grad_in[ctx.argmax[o]] += grad_out[o];
  ctx.argmax.clear();
  return grad_in;
}

// ---------------------------------------------------------------------------
// dropout (inverted): survivors are scaled by 1/(1-rate) at train time.

template <typename T> struct DropoutContext {
  std::vector<T> mask; // empty means identity
};

template <typename T>
Tensor<T> dropout_forward(const Tensor<T> &input, double rate, Mode mode, Rng &rng,
                          DropoutContext<T> *ctx = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (ctx)
    ctx->mask.clear();
  if (mode == Mode::eval || rate == 0.0)
    return input;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(input.size());
  for (auto &m : mask)
    m = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i)
    out[i] = input[i] * mask[i];
  if (ctx)
    ctx->mask = std::move(mask);
  return out;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T> &grad_out, DropoutContext<T> &&ctx) {
  if (ctx.mask.empty())
    return grad_out;
  if (ctx.mask.size() != grad_out.size())
    throw DimensionError("dropout_backward: gradient does not match the recorded mask");
  Tensor<T> grad_in(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    grad_in[i] = grad_out[i] * ctx.mask[i];
  ctx.mask.clear();
  return grad_in;
}

// ---------------------------------------------------------------------------
// Pointwise activations.

enum class Activation { relu, sigmoid };

template <typename T> struct ActivationContext {
  Activation kind = Activation::relu;
  Tensor<T> saved; // relu: input, sigmoid: output
};

template <typename T>
Tensor<T> activation_forward(const Tensor<T> &input, Activation kind,
                             ActivationContext<T> *ctx = nullptr) {
  Tensor<T> out(input.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < input.size(); ++i)
      out[i] = input[i] > T{0} ? input[i] : T{0};
  } else {
    for (std::size_t i = 0; i < input.size(); ++i)
      out[i] = T{1} / (T{1} + std::exp(-input[i]));
  }
  if (ctx) {
    ctx->kind = kind;
    ctx->saved = kind == Activation::relu ? input : out;
  }
  return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T> &grad_out, ActivationContext<T> &&ctx) {
  const Tensor<T> saved = std::move(ctx.saved);
  grad_out.require_same_shape(saved, "activation_backward");
  Tensor<T> grad_in(grad_out.shape());
  if (ctx.kind == Activation::relu) {
    for (std::size_t i = 0; i < saved.size(); ++i)
      grad_in[i] = saved[i] > T{0} ? grad_out[i] : T{0};
  } else {
    for (std::size_t i = 0; i < saved.size(); ++i)
      grad_in[i] = grad_out[i] * saved[i] * (T{1} - saved[i]);
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// upsample2x: nearest-neighbour, each pixel becomes a 2x2 block.

template <typename T> Tensor<T> upsample2x_forward(const Tensor<T> &input) {
  require_rank4(input.shape(), "upsample2x input");
  const std::size_t bc = input.dim(0) * input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  Tensor<T> out({input.dim(0), input.dim(1), 2 * height, 2 * width});
  const std::size_t ow = 2 * width;
  for (std::size_t p = 0; p < bc; ++p) {
    const T *src = input.data() + p * height * width;
    T *dst = out.data() + p * 4 * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      T *row0 = dst + (2 * y) * ow;
      for (std::size_t x = 0; x < width; ++x)
        row0[2 * x] = row0[2 * x + 1] = src[y * width + x];
      std::copy(row0, row0 + ow, row0 + ow);
    }
  }
  return out;
}

template <typename T> Tensor<T> upsample2x_backward(const Tensor<T> &grad_out) {
  require_rank4(grad_out.shape(), "upsample2x gradient");
  if (grad_out.dim(2) % 2 != 0 || grad_out.dim(3) % 2 != 0)
    throw DimensionError("upsample2x_backward: gradient spatial size must be even");
  const std::size_t bc = grad_out.dim(0) * grad_out.dim(1);
  const std::size_t height = grad_out.dim(2) / 2, width = grad_out.dim(3) / 2;
  const std::size_t ow = 2 * width;
  Tensor<T> grad_in({grad_out.dim(0), grad_out.dim(1), height, width});
  for (std::size_t p = 0; p < bc; ++p) {
    const T *src = grad_out.data() + p * 4 * height * width;
    T *dst = grad_in.data() + p * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const T *r0 = src + (2 * y) * ow;
      const T *r1 = r0 + ow;
      for (std::size_t x = 0; x < width; ++x)
        dst[y * width + x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
    }
  }
  return grad_in;
}

} // namespace mocc
