#pragma once

// Finite-difference verification suite for every layer and for the full
// training loss on a tiny network. Shared by the `gradcheck` command and the
// test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mocc/gradcheck.hpp"
#include "mocc/layers.hpp"
#include "mocc/model.hpp"
#include "mocc/rng.hpp"

namespace mocc {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckEps = 1e-5;
// Inputs closer than this to a ReLU kink or a pooling tie are resampled.
inline constexpr double kKinkMargin = 1e-3;

namespace gradcheck_layers {

inline Tensor<double> random_tensor(Shape shape, Rng &rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto &v : t.values())
    v = scale * rng.normal();
  return t;
}

// Normal samples with |x| >= margin.
inline Tensor<double> away_from_zero(Shape shape, Rng &rng) {
  Tensor<double> t(std::move(shape));
  for (auto &v : t.values()) {
    do {
      v = rng.normal();
    } while (std::abs(v) < kKinkMargin);
  }
  return t;
}

// Normal samples where every 2x2 window's maximum beats the runner-up by at
// least the margin.
inline Tensor<double> untied_windows(Shape shape, Rng &rng) {
  Tensor<double> t(std::move(shape));
  const std::size_t bc = t.dim(0) * t.dim(1), h = t.dim(2), w = t.dim(3);
  for (std::size_t p = 0; p < bc; ++p)
    for (std::size_t y = 0; y < h; y += 2)
      for (std::size_t x = 0; x < w; x += 2) {
        const std::size_t idx[4] = {(p * h + y) * w + x, (p * h + y) * w + x + 1,
                                    (p * h + y + 1) * w + x, (p * h + y + 1) * w + x + 1};
        for (;;) {
          double vals[4];
          for (int k = 0; k < 4; ++k)
            vals[k] = rng.normal();
          std::sort(vals, vals + 4);
          if (vals[3] - vals[2] < kKinkMargin)
            continue;
          // Scatter the window values in random order.
          std::size_t perm[4] = {0, 1, 2, 3};
          rng.shuffle(perm, perm + 4);
          for (int k = 0; k < 4; ++k)
            t[idx[k]] = vals[perm[k]];
          break;
        }
      }
  return t;
}

struct Conv {
  std::size_t filters, channels;
  void split(const Tensor<double> &p, Tensor<double> &k, Tensor<double> &b) const {
    const std::size_t nk = filters * channels * 9;
    k = Tensor<double>({filters, channels, 3, 3},
                       std::vector<double>(p.storage().begin(), p.storage().begin() + nk));
    b = Tensor<double>({filters}, std::vector<double>(p.storage().begin() + nk, p.storage().end()));
  }
  Tensor<double> forward(const Tensor<double> &p, const Tensor<double> &x) const {
    Tensor<double> k, b;
    split(p, k, b);
    return conv2d_forward(x, k, b);
  }
  LayerGradient backward(const Tensor<double> &p, const Tensor<double> &x,
                         const Tensor<double> &g) const {
    Tensor<double> k, b;
    split(p, k, b);
    Conv2dContext<double> ctx;
    conv2d_forward(x, k, b, &ctx);
    auto grads = conv2d_backward(g, k, true, std::move(ctx));
    std::vector<double> flat(grads.kernels.storage());
    flat.insert(flat.end(), grads.bias.storage().begin(), grads.bias.storage().end());
    return {Tensor<double>(p.shape(), std::move(flat)), std::move(grads.input)};
  }
};

struct BatchNormTrain {
  std::size_t channels;
  Tensor<double> forward_impl(const Tensor<double> &p, const Tensor<double> &x,
                              BatchNormContext<double> *ctx) const {
    Tensor<double> gamma({channels}, std::vector<double>(p.storage().begin(),
                                                         p.storage().begin() + channels));
    Tensor<double> beta({channels}, std::vector<double>(p.storage().begin() + channels,
                                                        p.storage().end()));
    auto stats = RunningStats<double>::fresh(channels);
    return batchnorm2d_forward(x, gamma, beta, stats, Mode::train, {}, ctx);
  }
  Tensor<double> forward(const Tensor<double> &p, const Tensor<double> &x) const {
    return forward_impl(p, x, nullptr);
  }
  LayerGradient backward(const Tensor<double> &p, const Tensor<double> &x,
                         const Tensor<double> &g) const {
    BatchNormContext<double> ctx;
    forward_impl(p, x, &ctx);
    Tensor<double> gamma({channels}, std::vector<double>(p.storage().begin(),
                                                         p.storage().begin() + channels));
    auto grads = batchnorm2d_backward(g, gamma, std::move(ctx));
    std::vector<double> flat(grads.gamma.storage());
    flat.insert(flat.end(), grads.beta.storage().begin(), grads.beta.storage().end());
    return {Tensor<double>(p.shape(), std::move(flat)), std::move(grads.input)};
  }
};

struct MaxPool {
  Tensor<double> forward(const Tensor<double> &, const Tensor<double> &x) const {
    return maxpool2d_forward(x);
  }
  LayerGradient backward(const Tensor<double> &, const Tensor<double> &x,
                         const Tensor<double> &g) const {
    MaxPoolContext<double> ctx;
    maxpool2d_forward(x, &ctx);
    return {Tensor<double>(), maxpool2d_backward(g, std::move(ctx))};
  }
};

// Dropout with a frozen mask: every call replays the same random stream.
struct Dropout {
  double rate;
  std::uint64_t mask_seed;
  Tensor<double> forward(const Tensor<double> &, const Tensor<double> &x) const {
    Rng rng(mask_seed);
    return dropout_forward(x, rate, Mode::train, rng);
  }
  LayerGradient backward(const Tensor<double> &, const Tensor<double> &x,
                         const Tensor<double> &g) const {
    Rng rng(mask_seed);
    DropoutContext<double> ctx;
    dropout_forward(x, rate, Mode::train, rng, &ctx);
    return {Tensor<double>(), dropout_backward(g, std::move(ctx))};
  }
};

struct Pointwise {
  Activation kind;
  Tensor<double> forward(const Tensor<double> &, const Tensor<double> &x) const {
    return activation_forward(x, kind);
  }
  LayerGradient backward(const Tensor<double> &, const Tensor<double> &x,
                         const Tensor<double> &g) const {
    ActivationContext<double> ctx;
    activation_forward(x, kind, &ctx);
    return {Tensor<double>(), activation_backward(g, std::move(ctx))};
  }
};

struct Upsample {
  Tensor<double> forward(const Tensor<double> &, const Tensor<double> &x) const {
    return upsample2x_forward(x);
  }
  LayerGradient backward(const Tensor<double> &, const Tensor<double> &,
                         const Tensor<double> &g) const {
    return {Tensor<double>(), upsample2x_backward(g)};
  }
};

} // namespace gradcheck_layers

struct GradCheckEntry {
  std::string name;
  std::uint64_t seed = 0;
  double max_relative_error = 0.0;
  std::size_t skipped = 0;
  bool passed() const { return max_relative_error < kGradCheckTolerance; }
};

// Tiny network used for whole-loss checks: 8x8 single-channel images, one
// encoder block of width 4, batch of 2.
inline ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.input_size = 8;
  arch.in_channels = 1;
  arch.channels = {4};
  arch.dropout = 0.2;
  return arch;
}

inline Tensor<double> flatten_trainable(const ModelParams<double> &params) {
  std::vector<double> flat;
  for (const auto *t : params.trainable())
    flat.insert(flat.end(), t->storage().begin(), t->storage().end());
  const std::size_t n = flat.size();
  return Tensor<double>({n}, std::move(flat));
}

inline void assign_trainable(ModelParams<double> &params, const Tensor<double> &flat) {
  std::size_t offset = 0;
  for (auto *t : params.trainable()) {
    std::copy_n(flat.data() + offset, t->size(), t->data());
    offset += t->size();
  }
  if (offset != flat.size())
    throw DimensionError("assign_trainable: flat vector has the wrong length");
}

// Finite-difference check of compute_loss gradients w.r.t. every trainable
// parameter. Dropout masks are frozen by replaying the same random stream;
// coordinates whose stencil flips a ReLU sign or a pool winner are skipped.
inline GradCheckReport loss_grad_check(std::uint64_t seed, const LossOptions &options,
                                       const ArchConfig &arch = tiny_arch(),
                                       std::size_t batch = 2, double eps = kGradCheckEps) {
  Rng rng(seed);
  const auto base = ModelParams<double>::init(arch, rng);
  const Shape image{batch, arch.in_channels, arch.input_size, arch.input_size};
  Tensor<double> left(image), right(image);
  for (auto &v : left.values())
    v = rng.uniform();
  for (auto &v : right.values())
    v = rng.uniform();
  const Rng dropout_rng = rng.fork();

  auto evaluate = [&](const Tensor<double> &theta, ParamGrads<double> *grads) {
    ModelParams<double> params = base;
    assign_trainable(params, theta);
    Rng r = dropout_rng;
    std::uint64_t fingerprint = 0;
    auto result = compute_loss(params, left, right, options, r, &fingerprint);
    if (grads)
      *grads = std::move(result.grads);
    return Probe{result.loss.total, fingerprint};
  };

  const Tensor<double> theta = flatten_trainable(base);
  ParamGrads<double> grads;
  evaluate(theta, &grads);
  std::vector<double> flat;
  for (const auto &g : grads)
    flat.insert(flat.end(), g.storage().begin(), g.storage().end());
  const std::size_t n = flat.size();
  const Tensor<double> analytic({n}, std::move(flat));
  return check_scalar_gradient([&](const Tensor<double> &t) { return evaluate(t, nullptr); },
                               theta, analytic, eps);
}

// Runs every layer check and the whole-loss check for each seed.
inline std::vector<GradCheckEntry> run_gradient_suite(const std::vector<std::uint64_t> &seeds) {
  using namespace gradcheck_layers;
  std::vector<GradCheckEntry> entries;
  for (auto seed : seeds) {
    Rng rng(seed * 7919 + 17);
    auto add = [&](std::string name, double err, std::size_t skipped = 0) {
      entries.push_back({std::move(name), seed, err, skipped});
    };
    {
      const Conv layer{4, 3};
      auto params = random_tensor({4 * 3 * 9 + 4}, rng, 0.1);
      add("conv2d", grad_check(layer, params, random_tensor({2, 3, 6, 6}, rng), kGradCheckEps, seed));
    }
    {
      const BatchNormTrain layer{3};
      Tensor<double> params({6});
      for (std::size_t c = 0; c < 3; ++c) {
        params[c] = 0.5 + rng.uniform();
        params[3 + c] = rng.normal();
      }
      add("batchnorm2d(train)",
          grad_check(layer, params, random_tensor({4, 3, 4, 4}, rng), kGradCheckEps, seed));
    }
    add("maxpool2d", grad_check(MaxPool{}, Tensor<double>(), untied_windows({2, 3, 6, 6}, rng),
                                kGradCheckEps, seed));
    add("dropout(frozen mask)", grad_check(Dropout{0.3, seed + 1}, Tensor<double>(),
                                           random_tensor({2, 3, 5, 5}, rng), kGradCheckEps, seed));
    add("relu", grad_check(Pointwise{Activation::relu}, Tensor<double>(),
                           away_from_zero({2, 3, 5, 5}, rng), kGradCheckEps, seed));
    add("sigmoid", grad_check(Pointwise{Activation::sigmoid}, Tensor<double>(),
                              random_tensor({2, 3, 5, 5}, rng, 2.0), kGradCheckEps, seed));
    add("upsample2x", grad_check(Upsample{}, Tensor<double>(), random_tensor({2, 3, 3, 3}, rng),
                                 kGradCheckEps, seed));
    const auto report = loss_grad_check(seed, LossOptions{});
    add("loss(multimodal, tiny model)", report.max_relative_error, report.skipped);
  }
  return entries;
}

} // namespace mocc
