#pragma once

// Uncertainty of the teacher on a target image: mean softmax over noisy copies,
// per-pixel predictive entropy, a step-dependent entropy threshold and the
// resulting binary significance mask.

#include <algorithm>
#include <cmath>

#include "camix/errors.hpp"
#include "camix/kernels.hpp"
#include "camix/mixup.hpp"
#include "camix/rng.hpp"
#include "camix/segmenter.hpp"
#include "camix/tensor.hpp"

namespace camix {

// Mean teacher softmax over n copies of x_t, copy i perturbed with noise drawn
// from rng.fork(i). No dropout is involved; the only randomness is the input noise.
template <typename T>
Tensor<T> stochastic_mean_probs(const SegmenterParams<T>& teacher, const Tensor<T>& x_t, std::size_t n,
                                double sigma, const SeededRng& rng) {
  if (n == 0) throw ArgumentError("stochastic_mean_probs: need at least one copy");
  if (!(sigma >= 0.0)) throw ArgumentError("stochastic_mean_probs: sigma must be >= 0");
  Tensor<T> sum;
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng copy_rng = rng.fork(i);
    const auto probs = softmax_channelwise(forward(teacher, gaussian_noise(x_t, sigma, copy_rng)));
    if (i == 0) {
      sum = probs;
    } else {
      for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += probs[j];
    }
  }
  const T inv = T{1} / static_cast<T>(n);
  for (auto& v : sum.values()) v *= inv;
  return sum;
}

// Entropy in nats per pixel, 0 log 0 = 0.
template <typename T>
Tensor<T> predictive_entropy(const Tensor<T>& p_hat) {
  p_hat.require_ndim(3, "predictive_entropy");
  const std::size_t C = p_hat.dim(0), n = p_hat.dim(1) * p_hat.dim(2);
  Tensor<T> zeta({p_hat.dim(1), p_hat.dim(2)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const T p = p_hat[c * n + i];
      if (p < T{0}) throw DataError("predictive_entropy: negative probability at channel " + std::to_string(c) +
                                    ", pixel " + std::to_string(i));
      if (p > T{0}) zeta[i] -= p * std::log(p);
    }
  // Rounding can push a near-uniform pixel a hair past the analytic bounds.
  const T ln_c = static_cast<T>(std::log(static_cast<double>(C)));
  for (auto& v : zeta.values()) v = std::clamp(v, T{0}, ln_c);
  return zeta;
}

struct ThresholdParams {
  double beta = 0.75;
  double gamma = -5.0;
  std::size_t t = 0;
  std::size_t t_max = 1;

  void validate() const {
    if (t_max == 0) throw ArgumentError("threshold: t_max must be positive");
    if (t > t_max) throw ArgumentError("threshold: t must not exceed t_max");
    if (!(beta > 0.0 && beta <= 1.0)) throw ArgumentError("threshold: beta must be in (0, 1]");
  }
};

struct Threshold {
  double h;      // the threshold itself
  double k_sup;  // largest entropy in the map
};

// H = beta + (1 - beta) * exp(gamma * (1 - t / t_max)^2) * K_sup, K_sup = max(zeta).
template <typename T>
Threshold dynamic_threshold(const Tensor<T>& zeta, const ThresholdParams& params) {
  params.validate();
  if (zeta.empty()) throw ArgumentError("dynamic_threshold: empty entropy map");
  const double k_sup = static_cast<double>(*std::max_element(zeta.values().begin(), zeta.values().end()));
  const double progress = 1.0 - static_cast<double>(params.t) / static_cast<double>(params.t_max);
  const double h = params.beta + (1.0 - params.beta) * std::exp(params.gamma * progress * progress) * k_sup;
  return {h, k_sup};
}

// U = 1 where zeta < h (strict).
template <typename T>
SignificanceMask significance_mask(const Tensor<T>& zeta, double h) {
  zeta.require_ndim(2, "significance_mask");
  SignificanceMask out{BinaryGrid(zeta.dim(0), zeta.dim(1), 0)};
  for (std::size_t i = 0; i < zeta.size(); ++i) out.u[i] = static_cast<double>(zeta[i]) < h ? 1 : 0;
  return out;
}

}  // namespace camix
