#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/kernels.hpp"
#include "camix/mixup.hpp"
#include "camix/tensor.hpp"

namespace camix {

// A scalar loss together with its gradient with respect to the probabilities it was computed from.
template <typename T>
struct LossValue {
  T value{0};
  Tensor<T> grad_probs;
  double weight_sum = 0.0;  // number of (weighted) pixels in the average
  bool empty = false;       // no pixel contributed; value is defined as 0
};

// Weighted mean cross-entropy over pixels with a real label and nonzero weight.
// `weights` may be null (all ones).
template <typename T>
LossValue<T> weighted_cross_entropy(const Tensor<T>& probs, const LabelMap& labels, const BinaryGrid* weights,
                                    std::uint8_t ignore_id = kIgnoreId) {
  const auto ce = cross_entropy_map(probs, labels, ignore_id);
  if (weights && !weights->same_size(labels)) throw ShapeError("weighted_cross_entropy: weight map size mismatch");
  const std::size_t n = labels.size();
  LossValue<T> out;
  out.grad_probs = Tensor<T>(probs.shape());
  double wsum = 0.0;
  T sum{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (!ce.valid[i] || (weights && !(*weights)[i])) continue;
    sum += ce.loss[i];
    wsum += 1.0;
  }
  out.weight_sum = wsum;
  if (wsum == 0.0) {
    out.empty = true;
    return out;
  }
  const T inv = static_cast<T>(1.0 / wsum);
  out.value = sum * inv;
  for (std::size_t i = 0; i < n; ++i) {
    if (!ce.valid[i] || (weights && !(*weights)[i])) continue;
    const std::size_t j = labels[i] * n + i;
    const T p = probs[j];
    if (p > static_cast<T>(kProbFloor)) out.grad_probs[j] = -inv / p;
  }
  return out;
}

// Source segmentation loss: mean cross-entropy over non-ignore pixels.
template <typename T>
LossValue<T> seg_loss(const Tensor<T>& probs, const LabelMap& y_s, std::uint8_t ignore_id = kIgnoreId) {
  return weighted_cross_entropy(probs, y_s, nullptr, ignore_id);
}

// Significance-reweighted consistency: sum(U * CE) / sum(U); 0 when sum(U) == 0.
template <typename T>
LossValue<T> src_loss(const Tensor<T>& probs_m, const LabelMap& y_m, const SignificanceMask& u_m) {
  return weighted_cross_entropy(probs_m, y_m, &u_m.u);
}

// Mean over labelled pixels of sum_c (p_c - onehot_c)^2.
template <typename T>
LossValue<T> mse_consistency(const Tensor<T>& probs, const LabelMap& labels) {
  probs.require_ndim(3, "mse_consistency");
  const std::size_t C = probs.dim(0), n = labels.size();
  if (!labels.same_size(probs.dim(1), probs.dim(2))) throw ShapeError("mse_consistency: label map size mismatch");
  require_labels_below(labels, C, "mse_consistency");
  LossValue<T> out;
  out.grad_probs = Tensor<T>(probs.shape());
  double count = 0.0;
  for (std::size_t i = 0; i < n; ++i) count += labels[i] != kIgnoreId ? 1.0 : 0.0;
  out.weight_sum = count;
  if (count == 0.0) {
    out.empty = true;
    return out;
  }
  const T inv = static_cast<T>(1.0 / count);
  T sum{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreId) continue;
    for (std::size_t c = 0; c < C; ++c) {
      const T d = probs[c * n + i] - (c == labels[i] ? T{1} : T{0});
      sum += d * d;
      out.grad_probs[c * n + i] = T{2} * d * inv;
    }
  }
  out.value = sum * inv;
  return out;
}

struct RampConfig {
  double lambda_max = 1.0;
  double t_ramp = 300.0;
};

// lambda(t) = lambda_max * exp(-5 (1 - min(t / t_ramp, 1))^2)
inline double consistency_weight(double t, const RampConfig& cfg) {
  if (!(cfg.t_ramp > 0.0)) throw ArgumentError("consistency_weight: t_ramp must be positive");
  if (t < 0.0) throw ArgumentError("consistency_weight: t must be non-negative");
  const double x = 1.0 - std::min(t / cfg.t_ramp, 1.0);
  return cfg.lambda_max * std::exp(-5.0 * x * x);
}

template <typename T>
T total_loss(T l_seg, T l_con, T lambda_con) {
  return l_seg + lambda_con * l_con;
}

struct LossBreakdown {
  double l_seg = 0.0;
  double l_con = 0.0;
  double lambda_con = 0.0;
  double l_total = 0.0;
  double valid_pixel_fraction = 0.0;  // share of mixed pixels that entered the consistency average
};

}  // namespace camix
