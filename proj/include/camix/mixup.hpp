#pragma once

// Target-to-source masked composition at the input, output and significance levels.
// All three are hard per-pixel selects: target where M = 1, source where M = 0.

#include "camix/context_mask.hpp"
#include "camix/grid.hpp"
#include "camix/tensor.hpp"

namespace camix {

// Binary map of pixels credible enough to supervise.
struct SignificanceMask {
  BinaryGrid u;
};

// X_M = M * X_T + (1 - M) * X_S, mask broadcast over channels.
template <typename T>
Tensor<T> mix_images(const Tensor<T>& x_s, const Tensor<T>& x_t, const ContextualMask& mask) {
  x_s.require_ndim(3, "mix_images");
  require_same_shape(x_s.shape(), x_t.shape(), "mix_images");
  if (!mask.m.same_size(x_s.dim(1), x_s.dim(2))) throw ShapeError("mix_images: mask size mismatch");
  const std::size_t n = mask.m.size();
  Tensor<T> out(x_s.shape());
  for (std::size_t c = 0; c < x_s.dim(0); ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = mask.m[i] ? x_t[c * n + i] : x_s[c * n + i];
  return out;
}

// Y_M = M * Y_T_hat + (1 - M) * Y_S; ignore ids pass through from whichever side is selected.
inline LabelMap mix_labels(const LabelMap& y_s, const LabelMap& y_t_hat, const ContextualMask& mask) {
  require_same_grid(y_s, y_t_hat, "mix_labels");
  require_same_grid(y_s, mask.m, "mix_labels");
  LabelMap out(y_s.height, y_s.width, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.m[i] ? y_t_hat[i] : y_s[i];
  return out;
}

// U_M = M * U_T + (1 - M) * 1: source pixels are always credible.
inline SignificanceMask mix_significance(const SignificanceMask& u_t, const ContextualMask& mask) {
  require_same_grid(u_t.u, mask.m, "mix_significance");
  SignificanceMask out{BinaryGrid(u_t.u.height, u_t.u.width, 1)};
  for (std::size_t i = 0; i < out.u.size(); ++i)
    if (mask.m[i]) out.u[i] = u_t.u[i];
  return out;
}

}  // namespace camix
