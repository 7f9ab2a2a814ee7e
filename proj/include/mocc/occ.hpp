#pragma once

// One-class pipeline: training, threshold calibration, scoring and decisions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mocc/adam.hpp"
#include "mocc/data.hpp"
#include "mocc/errors.hpp"
#include "mocc/model.hpp"

namespace mocc {

struct TrainConfig {
  int epochs = 4;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  int input_size = 32;
  Modality mode = Modality::multimodal;
  Regularizer regularizer = Regularizer::none;
  double lambda = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1)
      throw ParameterError("epochs must be at least 1, got " + std::to_string(epochs));
    if (batch_size < 1)
      throw ParameterError("batch_size must be at least 1, got " + std::to_string(batch_size));
    if (!(lr > 0.0) || !std::isfinite(lr))
      throw ParameterError("lr must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
      throw ParameterError("weight_decay must be non-negative");
    if (input_size < 8 || input_size % 8 != 0)
      throw ParameterError("input_size must be a positive multiple of 8, got " +
                           std::to_string(input_size));
    if (!std::isfinite(lambda))
      throw ParameterError("lambda must be finite");
  }

  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

// The deployable artifact: frozen parameters plus the decision threshold.
struct OccModel {
  ModelParams<float> params;
  float tau = 0.0f;
  TrainConfig config;
  std::uint64_t n_train = 0;
  std::optional<int> positive_class;

  friend bool operator==(const OccModel &a, const OccModel &b) {
    return a.params == b.params && a.tau == b.tau && a.config == b.config &&
           a.n_train == b.n_train && a.positive_class == b.positive_class;
  }
};

struct AnomalyScore {
  float value = 0.0f; // L2 norm of the joint embedding
};

enum class Label { positive, anomaly };

struct EpochStats {
  LossBreakdown mean;
  std::size_t steps = 0;
};

struct TrainOptions {
  // Architecture knobs outside TrainConfig; input size and channel count are
  // taken from the config and the data.
  ArchConfig arch{};
  // 1 = full objective, 0 = compactness term only.
  double reconstruction_weight = 1.0;
  double percentile = 95.0;
  std::vector<EpochStats> *history = nullptr;
  std::function<void(int epoch, const EpochStats &)> on_epoch;
};

// k-th smallest value with k = ceil(percentile/100 * N), clamped to [1, N].
inline float nearest_rank_percentile(std::vector<float> values, double percentile) {
  if (values.empty())
    throw ParameterError("percentile of an empty set");
  if (!(percentile > 0.0 && percentile <= 100.0))
    throw ParameterError("percentile must lie in (0, 100]");
  const double n = static_cast<double>(values.size());
  auto k = static_cast<std::size_t>(std::ceil(percentile * n / 100.0 - 1e-9));
  k = std::clamp<std::size_t>(k, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   values.end());
  return values[k - 1];
}

namespace detail {

inline constexpr std::size_t kScoreChunk = 64;

inline void check_geometry(const ArchConfig &arch, const SamplePair &s) {
  const Shape expected{arch.in_channels, arch.input_size, arch.input_size};
  if (s.left.shape() != expected || s.right.shape() != expected)
    throw DimensionError("sample '" + s.sample_id + "' has geometry " + shape_str(s.left.shape()) +
                         "/" + shape_str(s.right.shape()) + ", model expects " +
                         shape_str(expected));
}

} // namespace detail

// Embedding norms in eval mode, one per sample.
inline std::vector<float> embedding_norms(const ModelParams<float> &params,
                                          const std::vector<SamplePair> &samples,
                                          Modality modality) {
  std::vector<float> norms;
  norms.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += detail::kScoreChunk) {
    const std::size_t end = std::min(samples.size(), begin + detail::kScoreChunk);
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) {
      detail::check_geometry(params.arch, samples[i]);
      idx.push_back(i);
    }
    const auto [left, right] = stack_views(samples, idx);
    const auto phi = embed(params, left, right, modality);
    const std::size_t dim = phi.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = phi[b * dim + j];
        sq += v * v;
      }
      norms.push_back(static_cast<float>(std::sqrt(sq)));
    }
  }
  return norms;
}

// tau = nearest-rank percentile of the training embedding norms.
inline float calibrate_threshold(const ModelParams<float> &params,
                                 const std::vector<SamplePair> &train_data, Modality modality,
                                 double percentile = 95.0) {
  if (train_data.empty())
    throw ParameterError("calibrate_threshold: empty training data");
  return nearest_rank_percentile(embedding_norms(params, train_data, modality), percentile);
}

inline OccModel train(const std::vector<SamplePair> &dataset, const TrainConfig &config,
                      const TrainOptions &options = {}) {
  config.validate();
  if (dataset.empty())
    throw ParameterError("train: empty dataset");
  ArchConfig arch = options.arch;
  arch.input_size = static_cast<std::size_t>(config.input_size);
  arch.in_channels = dataset.front().left.rank() == 3 ? dataset.front().left.dim(0) : 0;
  arch.validate();
  for (const auto &s : dataset)
    detail::check_geometry(arch, s);

  Rng rng(config.seed);
  Rng init_rng = rng.fork();
  Rng shuffle_rng = rng.fork();
  Rng dropout_rng = rng.fork();
  OccModel model;
  model.params = ModelParams<float>::init(arch, init_rng);
  model.config = config;
  model.n_train = dataset.size();

  LossOptions loss_options;
  loss_options.modality = config.mode;
  loss_options.regularizer = config.regularizer;
  loss_options.lambda = config.lambda;
  loss_options.reconstruction_weight = options.reconstruction_weight;

  AdamOptions adam;
  adam.lr = config.lr;
  adam.weight_decay = config.weight_decay;
  AdamState<float> state;

  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(dataset.size());
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochStats stats;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const auto [left, right] = stack_views(dataset, idx);
      LossOptions step_options = loss_options;
      if (idx.size() < 2)
        step_options.regularizer = Regularizer::none; // needs two samples
      try {
        auto result = compute_loss(model.params, left, right, step_options, dropout_rng);
        adam_step<float>(model.params.trainable(), result.grads, state, adam);
        stats.mean.compactness += result.loss.compactness;
        stats.mean.recon_x += result.loss.recon_x;
        stats.mean.recon_xprime += result.loss.recon_xprime;
        stats.mean.diversity_penalty += result.loss.diversity_penalty;
        stats.mean.total += result.loss.total;
      } catch (const NumericError &e) {
        throw NumericError("training diverged at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + "): " + e.what());
      }
      ++stats.steps;
      ++step;
    }
    const double inv = 1.0 / static_cast<double>(stats.steps);
    stats.mean.compactness *= inv;
    stats.mean.recon_x *= inv;
    stats.mean.recon_xprime *= inv;
    stats.mean.diversity_penalty *= inv;
    stats.mean.total *= inv;
    if (options.history)
      options.history->push_back(stats);
    if (options.on_epoch)
      options.on_epoch(epoch, stats);
  }

  model.tau = calibrate_threshold(model.params, dataset, config.mode, options.percentile);
  if (!std::isfinite(model.tau))
    throw NumericError("train: calibrated threshold is not finite");
  return model;
}

inline std::vector<float> score_batch(const OccModel &model, const std::vector<SamplePair> &samples) {
  return embedding_norms(model.params, samples, model.config.mode);
}

inline AnomalyScore score(const OccModel &model, const SamplePair &sample) {
  return {score_batch(model, {sample}).front()};
}

// Boundary inclusive: a score equal to tau is positive.
inline Label decide(float score_value, float tau) {
  return score_value <= tau ? Label::positive : Label::anomaly;
}

inline Label classify(const OccModel &model, const SamplePair &sample) {
  return decide(score(model, sample).value, model.tau);
}

inline std::string to_string(Label label) {
  return label == Label::positive ? "positive" : "anomaly";
}

} // namespace mocc
