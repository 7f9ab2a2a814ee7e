#pragma once

// Direct-enumeration reference implementations of the evaluation metrics.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mocc/rng.hpp"

namespace oracle {

// Pair counting over every (anomaly, positive) pair; ties count one half.
inline double roc_auc(const std::vector<double> &s, const std::vector<int> &l) {
  long long twice_wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != 1)
      continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != 0)
        continue;
      ++pairs;
      twice_wins += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pairs));
}

// Repeatedly pick the highest remaining score, lowest index first on ties.
inline double precision_at_n(const std::vector<double> &s, const std::vector<int> &l) {
  const auto n = static_cast<std::size_t>(std::count(l.begin(), l.end(), 1));
  std::vector<bool> taken(s.size(), false);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
      if (!taken[i] && (best == s.size() || s[i] > s[best]))
        best = i;
    taken[best] = true;
    hits += l[best] == 1;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline double recall_at_threshold(const std::vector<double> &s, const std::vector<int> &l,
                                  double tau) {
  std::size_t pos = 0, ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (l[i] == 0) {
      ++pos;
      ok += s[i] <= tau;
    }
  return static_cast<double>(ok) / static_cast<double>(pos);
}

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Random instance with both classes present. With `ties`, scores are drawn
// from a small integer grid so equal values are common.
inline Instance random_instance(mocc::Rng &rng, std::size_t max_n, bool ties) {
  Instance inst;
  const std::size_t n = 2 + rng.uniform_int(max_n - 1);
  const double p = 0.1 + 0.8 * rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    inst.scores.push_back(ties ? static_cast<double>(rng.uniform_int(8)) : rng.normal());
    inst.labels.push_back(rng.uniform() < p ? 1 : 0);
  }
  inst.labels[0] = 0;
  inst.labels[1] = 1;
  return inst;
}

} // namespace oracle
