#pragma once

// Evaluation metrics. Labels: 1 = anomaly, 0 = positive (normal) class;
// higher scores are more anomalous.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mocc/errors.hpp"
#include "mocc/occ.hpp"

namespace mocc {

struct EvalReport {
  double recall = 0.0;
  double p_at_n = 0.0;
  double roc_auc = 0.0;
  std::size_t n_test = 0;
  std::size_t n_anomalies = 0;
};

namespace detail {

template <typename S>
void check_metric_inputs(std::span<const S> scores, std::span<const int> labels, const char *what) {
  if (scores.size() != labels.size())
    throw DimensionError(std::string(what) + ": " + std::to_string(scores.size()) +
                         " scores but " + std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l != 0 && l != 1)
      throw ParameterError(std::string(what) + ": labels must be 0 or 1");
}

} // namespace detail

// Probability that a random anomaly outscores a random positive, ties
// counted one half. Computed from mid-ranks (Mann-Whitney U).
template <typename S> double roc_auc(std::span<const S> scores, std::span<const int> labels) {
  detail::check_metric_inputs(scores, labels, "roc_auc");
  const std::size_t n = scores.size();
  const auto n1 = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n0 = n - n1;
  if (n0 == 0 || n1 == 0)
    throw ParameterError("roc_auc: both classes must be present");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks are doubled so that mid-ranks stay integral.
  std::size_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]])
      ++j;
    const std::size_t doubled_mid = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1)
        doubled_rank_sum += doubled_mid;
    i = j + 1;
  }
  const double u = static_cast<double>(doubled_rank_sum) / 2.0 -
                   static_cast<double>(n1) * static_cast<double>(n1 + 1) / 2.0;
  return u / (static_cast<double>(n0) * static_cast<double>(n1));
}

// Fraction of anomalies among the n highest scores, n = number of anomalies.
// Equal scores are ordered by ascending sample index.
template <typename S>
double precision_at_n(std::span<const S> scores, std::span<const int> labels) {
  detail::check_metric_inputs(scores, labels, "precision_at_n");
  const auto n = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n == 0)
    throw ParameterError("precision_at_n: no anomalies in the labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i)
    hits += labels[order[i]] == 1;
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Share of positive-class samples with score <= tau.
template <typename S>
double recall_at_threshold(std::span<const S> scores, std::span<const int> labels, double tau) {
  detail::check_metric_inputs(scores, labels, "recall_at_threshold");
  std::size_t positives = 0, accepted = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0)
      continue;
    ++positives;
    accepted += static_cast<double>(scores[i]) <= tau;
  }
  if (positives == 0)
    throw ParameterError("recall_at_threshold: no positive-class samples");
  return static_cast<double>(accepted) / static_cast<double>(positives);
}

template <typename S>
EvalReport make_report(std::span<const S> scores, std::span<const int> labels, double tau) {
  EvalReport report;
  report.n_test = scores.size();
  report.n_anomalies = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  report.recall = recall_at_threshold(scores, labels, tau);
  report.p_at_n = precision_at_n(scores, labels);
  report.roc_auc = roc_auc(scores, labels);
  return report;
}

inline EvalReport evaluate(const OccModel &model, const std::vector<SamplePair> &test,
                           std::span<const int> labels) {
  if (test.empty())
    throw ParameterError("evaluate: empty test set");
  if (test.size() != labels.size())
    throw DimensionError("evaluate: test set and labels differ in length");
  const auto scores = score_batch(model, test);
  return make_report<float>(scores, labels, model.tau);
}

inline EvalReport evaluate(const OccModel &model, const OccTask &task) {
  return evaluate(model, task.test, task.test_labels);
}

} // namespace mocc
