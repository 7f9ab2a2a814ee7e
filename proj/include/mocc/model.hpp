#pragma once

// Multimodal convolutional autoencoder with one shared encoder (E1 = E2) and
// one shared decoder (D1 = D2).
//
//   encoder block : conv3x3 -> batchnorm -> relu -> maxpool2x2 -> dropout
//   decoder block : upsample2x -> conv3x3 -> batchnorm -> relu
//   head          : conv3x3 (+bias) -> sigmoid
//
// Decoder block widths mirror the encoder, so each decoder stage produces the
// (resolution, width) pair of the matching encoder stage: for the default
// plan [64,32,16] the decoder runs 16 -> 16 -> 32 -> 64 -> C channels.
//
// Both modalities go through the encoder as one concatenated batch, so batch
// norm statistics are shared between the two views.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mocc/diversity.hpp"
#include "mocc/errors.hpp"
#include "mocc/layers.hpp"
#include "mocc/rng.hpp"
#include "mocc/tensor.hpp"

namespace mocc {

enum class Modality { multimodal, unimodal_left, unimodal_right };

inline std::string to_string(Modality m) {
  switch (m) {
  case Modality::multimodal: return "multimodal";
  case Modality::unimodal_left: return "unimodal_left";
  case Modality::unimodal_right: return "unimodal_right";
  }
  return "multimodal";
}

inline std::optional<Modality> parse_modality(std::string_view text) {
  if (text == "multimodal") return Modality::multimodal;
  if (text == "unimodal_left") return Modality::unimodal_left;
  if (text == "unimodal_right") return Modality::unimodal_right;
  return std::nullopt;
}

inline std::size_t view_count(Modality m) { return m == Modality::multimodal ? 2 : 1; }

struct ArchConfig {
  std::size_t input_size = 32;
  std::size_t in_channels = 3;
  std::vector<std::size_t> channels{64, 32, 16};
  double dropout = 0.2;
  BatchNormOptions batchnorm{};

  void validate() const {
    if (channels.empty())
      throw ParameterError("architecture needs at least one encoder block");
    for (auto c : channels)
      if (c == 0)
        throw ParameterError("encoder block widths must be positive");
    if (in_channels == 0)
      throw ParameterError("input channel count must be positive");
    const std::size_t factor = std::size_t{1} << channels.size();
    if (input_size == 0 || input_size % factor != 0)
      throw ParameterError("input size " + std::to_string(input_size) + " is not divisible by " +
                           std::to_string(factor));
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw ParameterError("dropout rate must lie in [0, 1)");
  }

  FeatureMapShape latent_shape() const {
    const std::size_t side = input_size >> channels.size();
    return {side, side, channels.back()};
  }

  std::size_t embedding_dim(Modality m) const {
    return view_count(m) * latent_shape().flat_size();
  }

  friend bool operator==(const ArchConfig &a, const ArchConfig &b) {
    return a.input_size == b.input_size && a.in_channels == b.in_channels &&
           a.channels == b.channels && a.dropout == b.dropout &&
           a.batchnorm.eps == b.batchnorm.eps && a.batchnorm.momentum == b.batchnorm.momentum;
  }
};

template <typename T> struct ConvBlockParams {
  Tensor<T> kernels; // [out, in, 3, 3], no bias (batch norm follows)
  Tensor<T> gamma;
  Tensor<T> beta;
  RunningStats<T> stats;
};

template <typename T> struct ModelParams {
  ArchConfig arch;
  std::vector<ConvBlockParams<T>> encoder; // the single E1 = E2 parameter set
  std::vector<ConvBlockParams<T>> decoder; // the single D1 = D2 parameter set
  Tensor<T> head_kernels;
  Tensor<T> head_bias;

  // He-normal convolution weights, unit gamma, zero beta, fresh running stats.
  static ModelParams init(const ArchConfig &arch, Rng &rng) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    auto make_block = [&](std::size_t in, std::size_t out) {
      ConvBlockParams<T> block;
      block.kernels = Tensor<T>({out, in, 3, 3});
      const double stddev = std::sqrt(2.0 / static_cast<double>(in * 9));
      for (auto &w : block.kernels.values())
        w = static_cast<T>(stddev * rng.normal());
      block.gamma = Tensor<T>({out}, T{1});
      block.beta = Tensor<T>({out}, T{0});
      block.stats = RunningStats<T>::fresh(out);
      return block;
    };
    std::size_t in = arch.in_channels;
    for (auto c : arch.channels) {
      p.encoder.push_back(make_block(in, c));
      in = c;
    }
    const std::size_t depth = arch.channels.size();
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t out = arch.channels[depth - 1 - l];
      p.decoder.push_back(make_block(in, out));
      in = out;
    }
    p.head_kernels = Tensor<T>({arch.in_channels, in, 3, 3});
    const double head_std = std::sqrt(1.0 / static_cast<double>(in * 9));
    for (auto &w : p.head_kernels.values())
      w = static_cast<T>(head_std * rng.normal());
    p.head_bias = Tensor<T>({arch.in_channels}, T{0});
    return p;
  }

  // Trainable tensors in a fixed order: encoder blocks (kernels, gamma, beta),
  // decoder blocks (same), head kernels, head bias.
  std::vector<Tensor<T> *> trainable() {
    std::vector<Tensor<T> *> out;
    for (auto *blocks : {&encoder, &decoder})
      for (auto &b : *blocks) {
        out.push_back(&b.kernels);
        out.push_back(&b.gamma);
        out.push_back(&b.beta);
      }
    out.push_back(&head_kernels);
    out.push_back(&head_bias);
    return out;
  }

  std::vector<const Tensor<T> *> trainable() const {
    auto ptrs = const_cast<ModelParams *>(this)->trainable();
    return {ptrs.begin(), ptrs.end()};
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> names;
    const char *groups[2] = {"encoder", "decoder"};
    const std::vector<ConvBlockParams<T>> *sets[2] = {&encoder, &decoder};
    for (int g = 0; g < 2; ++g)
      for (std::size_t l = 0; l < sets[g]->size(); ++l)
        for (const char *field : {"kernels", "gamma", "beta"})
          names.push_back(std::string(groups[g]) + "." + std::to_string(l) + "." + field);
    names.emplace_back("head.kernels");
    names.emplace_back("head.bias");
    return names;
  }

  // Every stored tensor (trainable ones, then batch-norm running statistics)
  // with a stable name. Used by checkpointing.
  template <typename F> void for_each_tensor(F &&f) {
    auto ptrs = trainable();
    auto names = trainable_names();
    for (std::size_t i = 0; i < ptrs.size(); ++i)
      f(names[i], *ptrs[i]);
    const char *groups[2] = {"encoder", "decoder"};
    std::vector<ConvBlockParams<T>> *sets[2] = {&encoder, &decoder};
    for (int g = 0; g < 2; ++g)
      for (std::size_t l = 0; l < sets[g]->size(); ++l) {
        const std::string prefix = std::string(groups[g]) + "." + std::to_string(l) + ".";
        f(prefix + "running_mean", (*sets[g])[l].stats.mean);
        f(prefix + "running_var", (*sets[g])[l].stats.var);
      }
  }

  template <typename F> void for_each_tensor(F &&f) const {
    const_cast<ModelParams *>(this)->for_each_tensor(
        [&](const std::string &name, Tensor<T> &t) { f(name, static_cast<const Tensor<T> &>(t)); });
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto *t : trainable())
      n += t->size();
    return n;
  }

  template <typename U> ModelParams<U> cast() const {
    ModelParams<U> out;
    out.arch = arch;
    auto convert = [](const std::vector<ConvBlockParams<T>> &blocks) {
      std::vector<ConvBlockParams<U>> res;
      for (const auto &b : blocks)
        res.push_back({b.kernels.template cast<U>(), b.gamma.template cast<U>(),
                       b.beta.template cast<U>(),
                       {b.stats.mean.template cast<U>(), b.stats.var.template cast<U>()}});
      return res;
    };
    out.encoder = convert(encoder);
    out.decoder = convert(decoder);
    out.head_kernels = head_kernels.template cast<U>();
    out.head_bias = head_bias.template cast<U>();
    return out;
  }

  friend bool operator==(const ModelParams &a, const ModelParams &b) {
    bool same = a.arch == b.arch && a.encoder.size() == b.encoder.size() &&
                a.decoder.size() == b.decoder.size();
    if (!same)
      return false;
    std::vector<const Tensor<T> *> ta, tb;
    a.for_each_tensor([&](const std::string &, const Tensor<T> &t) { ta.push_back(&t); });
    b.for_each_tensor([&](const std::string &, const Tensor<T> &t) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i]))
        return false;
    return true;
  }
};

// Parameter gradients, aligned with ModelParams::trainable().
template <typename T> using ParamGrads = std::vector<Tensor<T>>;

// ---------------------------------------------------------------------------
// Forward traces

template <typename T> struct EncoderBlockTrace {
  Conv2dContext<T> conv;
  BatchNormContext<T> bn;
  ActivationContext<T> act;
  MaxPoolContext<T> pool;
  DropoutContext<T> drop;
};

template <typename T> struct DecoderBlockTrace {
  Conv2dContext<T> conv;
  BatchNormContext<T> bn;
  ActivationContext<T> act;
};

template <typename T> struct EncoderTrace {
  std::vector<EncoderBlockTrace<T>> blocks;
};

template <typename T> struct DecoderTrace {
  std::vector<DecoderBlockTrace<T>> blocks;
  Conv2dContext<T> head;
  ActivationContext<T> out;
};

namespace detail {

template <typename T> void check_images(const ArchConfig &arch, const Tensor<T> &x) {
  require_rank4(x.shape(), "encoder input");
  if (x.dim(1) != arch.in_channels || x.dim(2) != arch.input_size ||
      x.dim(3) != arch.input_size)
    throw DimensionError("encoder input " + shape_str(x.shape()) + " does not match configured " +
                         std::to_string(arch.in_channels) + "x" +
                         std::to_string(arch.input_size) + "x" +
                         std::to_string(arch.input_size) + " images");
}

template <typename T> void check_latent(const ArchConfig &arch, const Tensor<T> &z) {
  require_rank4(z.shape(), "decoder input");
  const auto shape = arch.latent_shape();
  if (z.dim(1) != shape.d || z.dim(2) != shape.m || z.dim(3) != shape.p)
    throw DimensionError("decoder input " + shape_str(z.shape()) +
                         " does not match the configured latent map");
}

} // namespace detail

// Encoder forward. Train mode updates batch-norm running statistics and
// draws dropout masks from `rng`; eval mode leaves params untouched.
template <typename T>
Tensor<T> encode(ModelParams<T> &params, const Tensor<T> &x, Mode mode, Rng &rng,
                 EncoderTrace<T> *trace = nullptr) {
  detail::check_images(params.arch, x);
  if (trace)
    trace->blocks.assign(params.encoder.size(), {});
  Tensor<T> h = x;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    auto &block = params.encoder[l];
    EncoderBlockTrace<T> *bt = trace ? &trace->blocks[l] : nullptr;
    h = conv2d_forward(h, block.kernels, Tensor<T>(), bt ? &bt->conv : nullptr);
    h = batchnorm2d_forward(h, block.gamma, block.beta, block.stats, mode,
                            params.arch.batchnorm, bt ? &bt->bn : nullptr);
    h = activation_forward(h, Activation::relu, bt ? &bt->act : nullptr);
    h = maxpool2d_forward(h, bt ? &bt->pool : nullptr);
    h = dropout_forward(h, params.arch.dropout, mode, rng, bt ? &bt->drop : nullptr);
  }
  return h;
}

// Deterministic inference path over read-only parameters.
template <typename T> Tensor<T> encode(const ModelParams<T> &params, const Tensor<T> &x) {
  detail::check_images(params.arch, x);
  Tensor<T> h = x;
  for (const auto &block : params.encoder) {
    h = conv2d_forward(h, block.kernels, Tensor<T>());
    h = batchnorm2d_eval(h, block.gamma, block.beta, block.stats, params.arch.batchnorm);
    h = activation_forward(h, Activation::relu);
    h = maxpool2d_forward(h);
  }
  return h;
}

// Returns d(loss)/d(x) and accumulates encoder parameter gradients into
// grads[0 .. 3*depth).
template <typename T>
Tensor<T> encode_backward(const ModelParams<T> &params, Tensor<T> grad, EncoderTrace<T> &&trace,
                          ParamGrads<T> &grads) {
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    auto &bt = trace.blocks[l];
    const auto &block = params.encoder[l];
    grad = dropout_backward(grad, std::move(bt.drop));
    grad = maxpool2d_backward(grad, std::move(bt.pool));
    grad = activation_backward(grad, std::move(bt.act));
    auto bn = batchnorm2d_backward(grad, block.gamma, std::move(bt.bn));
    auto conv = conv2d_backward(bn.input, block.kernels, false, std::move(bt.conv));
    grads[3 * l] += conv.kernels;
    grads[3 * l + 1] += bn.gamma;
    grads[3 * l + 2] += bn.beta;
    grad = std::move(conv.input);
  }
  return grad;
}

template <typename T>
Tensor<T> reconstruct(ModelParams<T> &params, const Tensor<T> &z, Mode mode,
                      DecoderTrace<T> *trace = nullptr) {
  detail::check_latent(params.arch, z);
  if (trace)
    trace->blocks.assign(params.decoder.size(), {});
  Tensor<T> h = z;
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    auto &block = params.decoder[l];
    DecoderBlockTrace<T> *bt = trace ? &trace->blocks[l] : nullptr;
    h = upsample2x_forward(h);
    h = conv2d_forward(h, block.kernels, Tensor<T>(), bt ? &bt->conv : nullptr);
    h = batchnorm2d_forward(h, block.gamma, block.beta, block.stats, mode,
                            params.arch.batchnorm, bt ? &bt->bn : nullptr);
    h = activation_forward(h, Activation::relu, bt ? &bt->act : nullptr);
  }
  h = conv2d_forward(h, params.head_kernels, params.head_bias, trace ? &trace->head : nullptr);
  return activation_forward(h, Activation::sigmoid, trace ? &trace->out : nullptr);
}

template <typename T> Tensor<T> reconstruct(const ModelParams<T> &params, const Tensor<T> &z) {
  detail::check_latent(params.arch, z);
  Tensor<T> h = z;
  for (const auto &block : params.decoder) {
    h = upsample2x_forward(h);
    h = conv2d_forward(h, block.kernels, Tensor<T>());
    h = batchnorm2d_eval(h, block.gamma, block.beta, block.stats, params.arch.batchnorm);
    h = activation_forward(h, Activation::relu);
  }
  h = conv2d_forward(h, params.head_kernels, params.head_bias);
  return activation_forward(h, Activation::sigmoid);
}

// Returns d(loss)/d(z) and accumulates decoder/head gradients.
template <typename T>
Tensor<T> reconstruct_backward(const ModelParams<T> &params, const Tensor<T> &grad_out,
                               DecoderTrace<T> &&trace, ParamGrads<T> &grads) {
  const std::size_t offset = 3 * params.encoder.size();
  const std::size_t head = offset + 3 * params.decoder.size();
  Tensor<T> grad = activation_backward(grad_out, std::move(trace.out));
  auto head_grads = conv2d_backward(grad, params.head_kernels, true, std::move(trace.head));
  grads[head] += head_grads.kernels;
  grads[head + 1] += head_grads.bias;
  grad = std::move(head_grads.input);
  for (std::size_t l = params.decoder.size(); l-- > 0;) {
    auto &bt = trace.blocks[l];
    const auto &block = params.decoder[l];
    grad = activation_backward(grad, std::move(bt.act));
    auto bn = batchnorm2d_backward(grad, block.gamma, std::move(bt.bn));
    auto conv = conv2d_backward(bn.input, block.kernels, false, std::move(bt.conv));
    grads[offset + 3 * l] += conv.kernels;
    grads[offset + 3 * l + 1] += bn.gamma;
    grads[offset + 3 * l + 2] += bn.beta;
    grad = upsample2x_backward(conv.input);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Joint embedding

namespace detail {

// Offset in a [d, m, p] feature map of the k-th element of its row-major
// m x p x d flattening.
inline std::size_t hwc_to_chw(std::size_t k, std::size_t d, std::size_t m, std::size_t p) {
  const std::size_t c = k % d, pixel = k / d;
  return (c * m + pixel / p) * p + pixel % p;
}

// Per-sample concatenation of flattened feature maps: `first` then `second`
// (if any), each flattened row-major over m x p x d.
// first/second: [B, d, m, p] -> [B, views*m*p*d].
template <typename T>
Tensor<T> join_embeddings(const Tensor<T> &first, const Tensor<T> *second) {
  const std::size_t batch = first.dim(0), d = first.dim(1), m = first.dim(2), p = first.dim(3);
  const std::size_t flat = d * m * p;
  const std::size_t views = second ? 2 : 1;
  Tensor<T> phi({batch, views * flat});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t v = 0; v < views; ++v) {
      const T *src = (v == 0 ? first : *second).data() + b * flat;
      T *dst = phi.data() + (b * views + v) * flat;
      for (std::size_t k = 0; k < flat; ++k)
        dst[k] = src[hwc_to_chw(k, d, m, p)];
    }
  return phi;
}

} // namespace detail

// [B, d, m, p] -> [B, m*p*d], each sample flattened row-major over m x p x d.
template <typename T> Tensor<T> flatten_features(const Tensor<T> &z) {
  require_rank4(z.shape(), "flatten_features");
  return detail::join_embeddings<T>(z, nullptr);
}

// phi = concat(flatten(E(x)), flatten(E(x'))) per sample, shape [B, dim].
// Eval mode on read-only params; unimodal modes embed a single view.
template <typename T>
Tensor<T> embed(const ModelParams<T> &params, const Tensor<T> &left, const Tensor<T> &right,
                Modality modality = Modality::multimodal) {
  switch (modality) {
  case Modality::unimodal_left: {
    const auto z = encode(params, left);
    return detail::join_embeddings<T>(z, nullptr);
  }
  case Modality::unimodal_right: {
    const auto z = encode(params, right);
    return detail::join_embeddings<T>(z, nullptr);
  }
  case Modality::multimodal:
    break;
  }
  if (left.shape() != right.shape())
    throw DimensionError("embed: views have different shapes " + shape_str(left.shape()) +
                         " and " + shape_str(right.shape()));
  const auto z = encode(params, concat_batch(left, right));
  const std::size_t batch = left.dim(0);
  const auto z1 = slice_batch(z, 0, batch);
  const auto z2 = slice_batch(z, batch, 2 * batch);
  return detail::join_embeddings(z1, &z2);
}

// Train-path embedding (dropout and batch statistics active).
template <typename T>
Tensor<T> embed(ModelParams<T> &params, const Tensor<T> &left, const Tensor<T> &right,
                Modality modality, Mode mode, Rng &rng) {
  if (mode == Mode::eval)
    return embed(static_cast<const ModelParams<T> &>(params), left, right, modality);
  if (modality != Modality::multimodal) {
    const auto z = encode(params, modality == Modality::unimodal_left ? left : right, mode, rng);
    return detail::join_embeddings<T>(z, nullptr);
  }
  const auto z = encode(params, concat_batch(left, right), mode, rng);
  const std::size_t batch = left.dim(0);
  const auto z1 = slice_batch(z, 0, batch);
  const auto z2 = slice_batch(z, batch, 2 * batch);
  return detail::join_embeddings(z1, &z2);
}

// ---------------------------------------------------------------------------
// Training objective

struct LossOptions {
  Modality modality = Modality::multimodal;
  Regularizer regularizer = Regularizer::none;
  double lambda = 0.01;
  // 1 reproduces the full objective; 0 keeps only the compactness term.
  double reconstruction_weight = 1.0;
};

struct LossBreakdown {
  double compactness = 0.0;
  double recon_x = 0.0;
  double recon_xprime = 0.0;
  double diversity_penalty = 0.0;
  double total = 0.0;
};

template <typename T> struct LossTrace {
  EncoderTrace<T> encoder;
  DecoderTrace<T> decoder;
};

template <typename T> struct LossResult {
  LossBreakdown loss;
  ParamGrads<T> grads;
};

// Loss over a batch of N pairs (left, right: [N,C,S,S]):
//   (1/N) sum_i ( |phi_i|^2 + |D(E(x_i)) - x_i|^2 + |D(E(x'_i)) - x'_i|^2 ) + lambda * R
// Squared norms are plain sums over coordinates. Unimodal modes keep only the
// selected view's compactness and reconstruction terms (reported as recon_x).
// Runs in train mode: running statistics are updated and dropout is active.
//
// If `fingerprint` is non-null it receives a hash of every ReLU sign and pool
// winner of the forward pass (used to detect kinks in gradient checks).
template <typename T>
LossResult<T> compute_loss(ModelParams<T> &params, const Tensor<T> &left, const Tensor<T> &right,
                           const LossOptions &options, Rng &rng,
                           std::uint64_t *fingerprint = nullptr) {
  require_rank4(left.shape(), "compute_loss left views");
  const std::size_t n = left.dim(0);
  if (n == 0)
    throw ParameterError("compute_loss: empty batch");
  if (options.modality == Modality::multimodal && left.shape() != right.shape())
    throw DimensionError("compute_loss: views have different shapes");

  Tensor<T> images;
  switch (options.modality) {
  case Modality::multimodal: images = concat_batch(left, right); break;
  case Modality::unimodal_left: images = left; break;
  case Modality::unimodal_right: images = right; break;
  }
  const bool multimodal = options.modality == Modality::multimodal;
  const double inv_n = 1.0 / static_cast<double>(n);

  LossTrace<T> trace;
  const Tensor<T> z = encode(params, images, Mode::train, rng, &trace.encoder);

  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&hash](std::uint64_t v) { hash = (hash ^ v) * 1099511628211ULL; };
  if (fingerprint)
    for (const auto &bt : trace.encoder.blocks) {
      for (auto v : bt.act.saved.values())
        mix(v > T{0});
      for (auto idx : bt.pool.argmax)
        mix(idx);
    }

  LossResult<T> result;
  for (const auto *t : params.trainable())
    result.grads.emplace_back(t->shape());

  // Compactness: sum of squares of all latent coordinates of both views.
  result.loss.compactness = z.squared_norm() * inv_n;
  Tensor<T> grad_z(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    grad_z[i] = static_cast<T>(2.0 * inv_n) * z[i];

  if (options.reconstruction_weight != 0.0) {
    const Tensor<T> recon = reconstruct(params, z, Mode::train, &trace.decoder);
    if (fingerprint)
      for (const auto &bt : trace.decoder.blocks)
        for (auto v : bt.act.saved.values())
          mix(v > T{0});
    Tensor<T> grad_recon(recon.shape());
    const std::size_t per_view = n * images.size() / images.dim(0);
    double sq_first = 0.0, sq_second = 0.0;
    const double w = options.reconstruction_weight;
    for (std::size_t i = 0; i < recon.size(); ++i) {
      const double diff = static_cast<double>(recon[i]) - static_cast<double>(images[i]);
      (i < per_view ? sq_first : sq_second) += diff * diff;
      grad_recon[i] = static_cast<T>(2.0 * w * inv_n * diff);
    }
    result.loss.recon_x = w * sq_first * inv_n;
    result.loss.recon_xprime = w * sq_second * inv_n;
    grad_z += reconstruct_backward(params, grad_recon, std::move(trace.decoder), result.grads);
  }

  if (options.regularizer != Regularizer::none) {
    if (n < 2)
      throw ParameterError("compute_loss: diversity regularizers need a batch of at least 2");
    const Tensor<T> z1 = multimodal ? slice_batch(z, 0, n) : z;
    Tensor<T> z2;
    if (multimodal)
      z2 = slice_batch(z, n, 2 * n);
    const Tensor<T> phi = detail::join_embeddings(z1, multimodal ? &z2 : nullptr);
    Tensor<T> grad_phi;
    result.loss.diversity_penalty =
        wld_penalty(phi, options.regularizer, options.lambda != 0.0 ? &grad_phi : nullptr);
    if (options.lambda != 0.0) {
      // Scatter d/dphi back to the [views*N, d, m, p] latent layout.
      const std::size_t d = z.dim(1), m = z.dim(2), p = z.dim(3), flat = d * m * p;
      const std::size_t row = phi.dim(1);
      const T lam = static_cast<T>(options.lambda);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t v = 0; v < view_count(options.modality); ++v)
          for (std::size_t k = 0; k < flat; ++k)
            grad_z[(v * n + b) * flat + detail::hwc_to_chw(k, d, m, p)] +=
                lam * grad_phi[b * row + v * flat + k];
    }
  }

  result.loss.total = result.loss.compactness + result.loss.recon_x + result.loss.recon_xprime +
                      options.lambda * result.loss.diversity_penalty;
  if (!std::isfinite(result.loss.total))
    throw NumericError("compute_loss: loss is not finite");

  if (fingerprint)
    *fingerprint = hash;

  encode_backward(params, std::move(grad_z), std::move(trace.encoder), result.grads);
  return result;
}

} // namespace mocc
