#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/rng.hpp"
#include "camix/tensor.hpp"

namespace camix {

inline constexpr double kProbFloor = 1e-12;

// Per-pixel softmax over the channel axis of a (C, H, W) tensor.
template <typename T>
Tensor<T> softmax_channelwise(const Tensor<T>& logits) {
  logits.require_ndim(3, "softmax_channelwise");
  const std::size_t C = logits.dim(0);
  if (C < 2) throw ShapeError("softmax_channelwise: need at least 2 channels");
  const std::size_t n = logits.dim(1) * logits.dim(2);
  Tensor<T> out(logits.shape());
  const T* in = logits.data();
  T* o = out.data();
  std::vector<T> mx(n), sum(n, T{0});
  std::copy(in, in + n, mx.begin());
  for (std::size_t c = 1; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) mx[i] = std::max(mx[i], in[c * n + i]);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const T e = std::exp(in[c * n + i] - mx[i]);
      o[c * n + i] = e;
      sum[i] += e;
    }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) o[c * n + i] /= sum[i];
  return out;
}

// Vector-Jacobian product of softmax_channelwise: dz_c = p_c (g_c - sum_k p_k g_k).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  probs.require_ndim(3, "softmax_backward");
  require_same_shape(probs.shape(), grad_probs.shape(), "softmax_backward");
  const std::size_t C = probs.dim(0);
  const std::size_t n = probs.dim(1) * probs.dim(2);
  std::vector<T> dot(n, T{0});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) dot[i] += probs[c * n + i] * grad_probs[c * n + i];
  Tensor<T> out(probs.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i)
      out[c * n + i] = probs[c * n + i] * (grad_probs[c * n + i] - dot[i]);
  return out;
}

namespace detail {

struct ConvDims {
  std::size_t cin, cout, h, w, k;
};

template <typename T>
ConvDims check_conv(const Tensor<T>& input, const Tensor<T>& kernel, const char* context) {
  input.require_ndim(3, context);
  kernel.require_ndim(4, context);
  const ConvDims d{input.dim(0), kernel.dim(0), input.dim(1), input.dim(2), kernel.dim(2)};
  if (kernel.dim(1) != d.cin)
    throw ShapeError(std::string(context) + ": kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(d.cin));
  if (kernel.dim(3) != d.k || d.k % 2 == 0)
    throw ShapeError(std::string(context) + ": kernel must be square with odd size");
  return d;
}

}  // namespace detail

namespace detail {

inline constexpr std::size_t kLanes = 16;

// Geometry of zero-padded planes: border r, row stride Wp = W + 2r. Each plane
// has room for reads of a kLanes-rounded span at the largest tap offset, so
// every kernel tap is a constant flat offset and every strip is full width.
struct PaddedGeometry {
  std::size_t r, wp, span, span_rounded, plane;

  PaddedGeometry(std::size_t h, std::size_t w, std::size_t k) {
    r = k / 2;
    wp = w + 2 * r;
    span = h * wp;
    span_rounded = (span + kLanes - 1) / kLanes * kLanes;
    plane = span_rounded + (k - 1) * wp + (k - 1);
  }
};

template <typename T>
std::vector<T> pad_planes(const T* src, std::size_t C, std::size_t H, std::size_t W, const PaddedGeometry& g) {
  std::vector<T> out(C * g.plane, T{0});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      std::copy(src + (c * H + y) * W, src + (c * H + y + 1) * W,
                out.begin() + static_cast<std::ptrdiff_t>(c * g.plane + (y + g.r) * g.wp + g.r));
  return out;
}

// Fixed 16-lane partial sums; vectorizes without relying on reassociation and
// gives the same result on every build.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t L = 16;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L)
    for (std::size_t j = 0; j < L; ++j) acc[j] += a[i + j] * b[i + j];
  for (std::size_t j = 0; i + j < n; ++j) acc[j] += a[i + j] * b[i + j];
  T s{0};
  for (std::size_t j = 0; j < L; ++j) s += acc[j];
  return s;
}

}  // namespace detail

namespace detail {

// kLanes-wide vector type (GCC/Clang extension). Element-wise arithmetic on it
// is exact per lane, so results match the scalar loops bit for bit.
template <typename T>
struct LaneVec {
  typedef T type __attribute__((vector_size(kLanes * sizeof(T))));
};

template <typename T>
inline typename LaneVec<T>::type load_lanes(const T* p) {
  typename LaneVec<T>::type v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

// Accumulates CB output channels over a strip of kLanes padded-stride pixels
// starting at flat position i0. wt is laid out [ci][tap][cout].
template <typename T, std::size_t CB>
void conv_strip(const T* __restrict padded, std::size_t plane, const T* __restrict wt, std::size_t cin,
                std::size_t cout, std::size_t co0, const std::size_t* offsets, std::size_t taps,
                const T* __restrict bias, std::size_t i0, T* __restrict out, std::size_t stride) {
  using V = typename LaneVec<T>::type;
  V acc[CB];
  for (std::size_t c = 0; c < CB; ++c) acc[c] = V{} + bias[co0 + c];
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* src = padded + ci * plane + i0;
    for (std::size_t t = 0; t < taps; ++t) {
      const V v = load_lanes(src + offsets[t]);
      const T* w = wt + (ci * taps + t) * cout + co0;
      for (std::size_t c = 0; c < CB; ++c) acc[c] += w[c] * v;
    }
  }
  for (std::size_t c = 0; c < CB; ++c) std::memcpy(out + (co0 + c) * stride + i0, &acc[c], sizeof(V));
}

inline std::vector<std::size_t> tap_offsets(std::size_t k, std::size_t wp) {
  std::vector<std::size_t> offsets(k * k);
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx) offsets[ky * k + kx] = ky * wp + kx;
  return offsets;
}

// Convolution over padded planes. `out` receives (cout, span_rounded) values in
// padded-stride layout; scratch columns hold garbage.
template <typename T>
void conv_padded(const T* padded, std::size_t cin, const PaddedGeometry& g, std::size_t k, const T* kernel,
                 std::size_t cout, const T* bias, std::vector<T>& out) {
  const std::size_t taps = k * k;
  const auto offsets = tap_offsets(k, g.wp);
  std::vector<T> wt(cin * taps * cout);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t t = 0; t < taps; ++t) wt[(ci * taps + t) * cout + co] = kernel[(co * cin + ci) * taps + t];
  out.assign(cout * g.span_rounded, T{0});
  constexpr std::size_t CB = 8;
  for (std::size_t i0 = 0; i0 < g.span_rounded; i0 += kLanes) {
    std::size_t co = 0;
    for (; co + CB <= cout; co += CB)
      conv_strip<T, CB>(padded, g.plane, wt.data(), cin, cout, co, offsets.data(), taps, bias, i0, out.data(),
                        g.span_rounded);
    for (; co < cout; ++co)
      conv_strip<T, 1>(padded, g.plane, wt.data(), cin, cout, co, offsets.data(), taps, bias, i0, out.data(),
                       g.span_rounded);
  }
}

// dK[co][ci][tap] = sum_i g[co][i] * padded[ci][i + offset[tap]], tiled 4 x 4
// with kLanes partial sums per pair.
template <typename T>
void kernel_grad_padded(const T* __restrict g, std::size_t cout, const T* __restrict padded, std::size_t cin,
                        const PaddedGeometry& geo, const std::size_t* offsets, std::size_t taps, T* __restrict dk) {
  const std::size_t rows = cin * taps;
  constexpr std::size_t BA = 4, BB = 4;
  for (std::size_t co0 = 0; co0 < cout; co0 += BA) {
    const std::size_t na = std::min(BA, cout - co0);
    for (std::size_t r0 = 0; r0 < rows; r0 += BB) {
      const std::size_t nb = std::min(BB, rows - r0);
      using V = typename LaneVec<T>::type;
      V acc[BA][BB] = {};
      const T* ga[BA];
      const T* sb[BB];
      for (std::size_t a = 0; a < BA; ++a) ga[a] = g + (co0 + std::min(a, na - 1)) * geo.span_rounded;
      for (std::size_t b = 0; b < BB; ++b) {
        const std::size_t ri = r0 + std::min(b, nb - 1);
        sb[b] = padded + (ri / taps) * geo.plane + offsets[ri % taps];
      }
      for (std::size_t i = 0; i < geo.span_rounded; i += kLanes) {
        V va[BA], vb[BB];
        for (std::size_t a = 0; a < BA; ++a) va[a] = load_lanes(ga[a] + i);
        for (std::size_t b = 0; b < BB; ++b) vb[b] = load_lanes(sb[b] + i);
        for (std::size_t a = 0; a < BA; ++a)
          for (std::size_t b = 0; b < BB; ++b) acc[a][b] += va[a] * vb[b];
      }
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t b = 0; b < nb; ++b) {
          T s{0};
          for (std::size_t j = 0; j < kLanes; ++j) s += acc[a][b][j];
          const std::size_t ri = r0 + b;
          dk[((co0 + a) * cin + ri / taps) * taps + ri % taps] = s;
        }
    }
  }
}

template <typename T>
void unpad_into(const std::vector<T>& acc, std::size_t C, std::size_t H, std::size_t W, const PaddedGeometry& g,
                T* dst) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      const T* row = acc.data() + c * g.span_rounded + y * g.wp;
      std::copy(row, row + W, dst + (c * H + y) * W);
    }
}

}  // namespace detail

// Same-padded (zero) 2-D convolution, stride 1.
// input (Cin, H, W), kernel (Cout, Cin, k, k), bias (Cout) -> (Cout, H, W).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const auto d = detail::check_conv(input, kernel, "conv2d_forward");
  if (bias.size() != d.cout) throw ShapeError("conv2d_forward: bias length mismatch");
  const detail::PaddedGeometry geo(d.h, d.w, d.k);
  const auto padded = detail::pad_planes(input.data(), d.cin, d.h, d.w, geo);
  std::vector<T> acc;
  detail::conv_padded(padded.data(), d.cin, geo, d.k, kernel.data(), d.cout, bias.data(), acc);
  Tensor<T> out({d.cout, d.h, d.w});
  detail::unpad_into(acc, d.cout, d.h, d.w, geo, out.data());
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;   // empty when not requested
  Tensor<T> kernel;
  Tensor<T> bias;
};

// Adjoint of conv2d_forward. grad_input is skipped when need_input_grad is false
// (first layer of a network, where the image needs no gradient).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_out, bool need_input_grad = true) {
  const auto d = detail::check_conv(input, kernel, "conv2d_backward");
  require_same_shape(grad_out.shape(), Shape{d.cout, d.h, d.w}, "conv2d_backward grad_out");
  const detail::PaddedGeometry geo(d.h, d.w, d.k);
  const std::size_t taps = d.k * d.k;
  const auto padded = detail::pad_planes(input.data(), d.cin, d.h, d.w, geo);

  // grad_out in padded-stride layout with zero scratch columns, so they contribute nothing.
  std::vector<T> g(d.cout * geo.span_rounded, T{0});
  for (std::size_t co = 0; co < d.cout; ++co)
    for (std::size_t y = 0; y < d.h; ++y) {
      const T* row = grad_out.data() + (co * d.h + y) * d.w;
      std::copy(row, row + d.w, g.begin() + static_cast<std::ptrdiff_t>(co * geo.span_rounded + y * geo.wp));
    }

  ConvGrads<T> out;
  out.kernel = Tensor<T>(kernel.shape());
  out.bias = Tensor<T>({d.cout});
  const std::vector<T> ones(geo.span_rounded, T{1});
  for (std::size_t co = 0; co < d.cout; ++co)
    out.bias[co] = detail::lane_dot(g.data() + co * geo.span_rounded, ones.data(), geo.span_rounded);

  const auto offsets = detail::tap_offsets(d.k, geo.wp);
  detail::kernel_grad_padded(g.data(), d.cout, padded.data(), d.cin, geo, offsets.data(), taps, out.kernel.data());

  if (need_input_grad) {
    // The input gradient is a same-padded convolution of grad_out with the kernel
    // transposed over channels and rotated by 180 degrees.
    std::vector<T> flipped(d.cin * d.cout * taps);
    for (std::size_t co = 0; co < d.cout; ++co)
      for (std::size_t ci = 0; ci < d.cin; ++ci)
        for (std::size_t t = 0; t < taps; ++t)
          flipped[(ci * d.cout + co) * taps + (taps - 1 - t)] = kernel.data()[(co * d.cin + ci) * taps + t];
    const auto gpad = detail::pad_planes(grad_out.data(), d.cout, d.h, d.w, geo);
    const std::vector<T> zero_bias(d.cin, T{0});
    std::vector<T> acc;
    detail::conv_padded(gpad.data(), d.cout, geo, d.k, flipped.data(), d.cin, zero_bias.data(), acc);
    out.input = Tensor<T>(input.shape());
    detail::unpad_into(acc, d.cin, d.h, d.w, geo, out.input.data());
  }
  return out;
}

// t + N(0, sigma^2) noise, one draw per element in flat order. sigma == 0 copies t.
template <typename T>
Tensor<T> gaussian_noise(const Tensor<T>& t, double sigma, SeededRng& rng) {
  if (!(sigma >= 0.0)) throw ArgumentError("gaussian_noise: sigma must be >= 0");
  Tensor<T> out = t;
  if (sigma == 0.0) return out;
  for (auto& v : out.values()) v += static_cast<T>(sigma * rng.normal());
  return out;
}

template <typename T>
struct CrossEntropyMap {
  Tensor<T> loss;   // (H, W); zero at excluded pixels
  BinaryGrid valid; // 1 where the label is a real class
};

// Per-pixel -log(p[label]) with a probability floor.
template <typename T>
CrossEntropyMap<T> cross_entropy_map(const Tensor<T>& probs, const LabelMap& labels,
                                     std::uint8_t ignore_id = kIgnoreId) {
  probs.require_ndim(3, "cross_entropy_map");
  const std::size_t C = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  if (!labels.same_size(H, W)) throw ShapeError("cross_entropy_map: label map size mismatch");
  CrossEntropyMap<T> out{Tensor<T>({H, W}), BinaryGrid(H, W, 0)};
  const std::size_t n = H * W;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = labels[i];
    if (id == ignore_id) continue;
    if (id >= C)
      throw DataError("cross_entropy_map: label " + std::to_string(id) + " >= num classes " +
                      std::to_string(C) + " at pixel " + std::to_string(i));
    const T p = std::max(probs[id * n + i], static_cast<T>(kProbFloor));
    out.loss[i] = -std::log(p);
    out.valid[i] = 1;
  }
  return out;
}

// Per-pixel argmax over channels, ties to the smallest id.
template <typename T>
LabelMap argmax_channels(const Tensor<T>& scores) {
  scores.require_ndim(3, "argmax_channels");
  const std::size_t C = scores.dim(0), H = scores.dim(1), W = scores.dim(2), n = H * W;
  LabelMap out(H, W, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    T bv = scores[i];
    for (std::size_t c = 1; c < C; ++c)
      if (scores[c * n + i] > bv) {
        bv = scores[c * n + i];
        best = c;
      }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace camix
