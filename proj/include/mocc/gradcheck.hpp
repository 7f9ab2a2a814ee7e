#pragma once

// Central finite-difference verification of analytic gradients (64-bit).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <utility>

#include "mocc/errors.hpp"
#include "mocc/rng.hpp"
#include "mocc/tensor.hpp"

namespace mocc {

// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

// A scalar function value together with a fingerprint of its piecewise branch
// (ReLU signs, pool winners). Coordinates whose finite-difference stencil
// changes the fingerprint straddle a kink and are skipped.
struct Probe {
  double value = 0.0;
  std::uint64_t pattern = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  void merge(const GradCheckReport &other) {
    max_relative_error = std::max(max_relative_error, other.max_relative_error);
    checked += other.checked;
    skipped += other.skipped;
  }
};

// Compare `analytic` (gradient of fn at x) against central differences of fn.
template <typename Fn>
  requires std::invocable<Fn &, const Tensor<double> &>
GradCheckReport check_scalar_gradient(Fn &&fn, const Tensor<double> &x,
                                      const Tensor<double> &analytic, double eps) {
  if (x.size() != analytic.size())
    throw DimensionError("check_scalar_gradient: gradient size does not match the point");
  if (!analytic.all_finite())
    throw NumericError("check_scalar_gradient: analytic gradient is not finite");
  GradCheckReport report;
  const Probe base = fn(x);
  Tensor<double> point = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = point[i];
    point[i] = original + eps;
    const Probe plus = fn(point);
    point[i] = original - eps;
    const Probe minus = fn(point);
    point[i] = original;
    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      ++report.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * eps);
    if (!std::isfinite(numeric))
      throw NumericError("check_scalar_gradient: numeric gradient is not finite at coordinate " +
                         std::to_string(i));
    report.max_relative_error =
        std::max(report.max_relative_error, relative_error(analytic[i], numeric));
    ++report.checked;
  }
  return report;
}

// Gradients a layer returns for the weighted-sum readout.
struct LayerGradient {
  Tensor<double> params;
  Tensor<double> input;
};

// A layer under test: params is a flat parameter vector (possibly empty).
template <typename L>
concept CheckableLayer = requires(const L &layer, const Tensor<double> &params,
                                  const Tensor<double> &input, const Tensor<double> &grad) {
  { layer.forward(params, input) } -> std::same_as<Tensor<double>>;
  { layer.backward(params, input, grad) } -> std::same_as<LayerGradient>;
};

// Gradient check of a layer through the scalar readout sum(w * output), with
// readout weights w drawn uniformly from [-1, 1]. With unit weights the check
// degenerates for layers whose output sum is constant (batch norm), hence the
// random weights. Returns the maximum relative error over every parameter
// and input coordinate.
template <CheckableLayer L>
double grad_check(const L &layer, const Tensor<double> &params, const Tensor<double> &input,
                  double eps = 1e-5, std::uint64_t readout_seed = 0x5eed) {
  const Tensor<double> probe_out = layer.forward(params, input);
  Tensor<double> weights(probe_out.shape());
  Rng rng(readout_seed);
  for (auto &w : weights.values())
    w = 2.0 * rng.uniform() - 1.0;

  auto readout = [&](const Tensor<double> &out) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
      acc += weights[i] * out[i];
    return acc;
  };
  const LayerGradient analytic = layer.backward(params, input, weights);

  GradCheckReport report;
  if (!params.empty()) {
    report.merge(check_scalar_gradient(
        [&](const Tensor<double> &p) { return Probe{readout(layer.forward(p, input))}; },
        params, analytic.params, eps));
  }
  report.merge(check_scalar_gradient(
      [&](const Tensor<double> &x) { return Probe{readout(layer.forward(params, x))}; }, input,
      analytic.input, eps));
  return report.max_relative_error;
}

} // namespace mocc
