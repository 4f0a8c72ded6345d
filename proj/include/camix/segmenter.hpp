#pragma once

// Small fully-convolutional per-pixel classifier with hand-written gradients,
// Adam, and the exponential-moving-average teacher update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "camix/errors.hpp"
#include "camix/kernels.hpp"
#include "camix/rng.hpp"
#include "camix/tensor.hpp"

namespace camix {

struct LayerSpec {
  std::size_t in = 0, out = 0, k = 1;
  bool relu = false;

  bool operator==(const LayerSpec&) const = default;
};

struct Architecture {
  std::vector<LayerSpec> layers;

  // conv3x3(in->h)-ReLU, conv3x3(h->h)-ReLU, conv3x3(h->h)-ReLU, conv1x1(h->C)
  static Architecture standard(std::size_t num_classes, std::size_t in_channels = 3, std::size_t hidden = 16) {
    return {{{in_channels, hidden, 3, true},
             {hidden, hidden, 3, true},
             {hidden, hidden, 3, true},
             {hidden, num_classes, 1, false}}};
  }

  std::size_t in_channels() const { return layers.front().in; }
  std::size_t num_classes() const { return layers.back().out; }

  void validate() const {
    if (layers.empty()) throw ArgumentError("architecture has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.in == 0 || l.out == 0 || l.k % 2 == 0) throw ArgumentError("invalid layer spec at index " + std::to_string(i));
      if (i > 0 && layers[i - 1].out != l.in) throw ArgumentError("layer channel chain broken at index " + std::to_string(i));
    }
    if (layers.back().out < 2) throw ArgumentError("segmenter needs at least 2 output classes");
  }

  // e.g. "3-16k3r,16-16k3r,16-16k3r,16-8k1"
  std::string describe() const {
    std::string s;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      s += (i ? "," : "") + std::to_string(l.in) + "-" + std::to_string(l.out) + "k" + std::to_string(l.k) + (l.relu ? "r" : "");
    }
    return s;
  }

  static Architecture parse(const std::string& s) {
    Architecture a;
    std::size_t pos = 0;
    while (pos < s.size()) {
      std::size_t end = s.find(',', pos);
      if (end == std::string::npos) end = s.size();
      const std::string tok = s.substr(pos, end - pos);
      LayerSpec l;
      char r = 0;
      unsigned long in = 0, out = 0, k = 0;
      const int got = std::sscanf(tok.c_str(), "%lu-%luk%lu%c", &in, &out, &k, &r);
      if (got < 3 || (got == 4 && r != 'r')) throw ArgumentError("cannot parse layer '" + tok + "'");
      l.in = in;
      l.out = out;
      l.k = k;
      l.relu = got == 4;
      a.layers.push_back(l);
      pos = end + 1;
    }
    a.validate();
    return a;
  }

  bool operator==(const Architecture&) const = default;
};

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;  // (out, in, k, k)
  Tensor<T> bias;    // (out)
};

// Also used as the gradient container (same layout).
template <typename T>
struct SegmenterParams {
  Architecture arch;
  std::vector<ConvLayer<T>> layers;

  static SegmenterParams zeros(const Architecture& arch) {
    arch.validate();
    SegmenterParams p{arch, {}};
    for (const auto& l : arch.layers) p.layers.push_back({Tensor<T>({l.out, l.in, l.k, l.k}), Tensor<T>({l.out})});
    return p;
  }

  std::size_t num_classes() const { return arch.num_classes(); }

  // Visits every parameter tensor in a fixed order: kernel0, bias0, kernel1, ...
  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      f(l.kernel);
      f(l.bias);
    }
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      f(l.kernel);
      f(l.bias);
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor<T>& t) { n += t.size(); });
    return n;
  }
};

template <typename T>
using SegmenterGrads = SegmenterParams<T>;

// Glorot-uniform kernels, zero biases.
template <typename T>
SegmenterParams<T> init_params(const Architecture& arch, SeededRng rng) {
  auto p = SegmenterParams<T>::zeros(arch);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const double limit = std::sqrt(6.0 / static_cast<double>((l.in + l.out) * l.k * l.k));
    for (auto& v : p.layers[i].kernel.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  return p;
}

// acts[0] is the input, acts[i + 1] the (post-ReLU) output of layer i; acts.back() are logits.
template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> acts;

  const Tensor<T>& logits() const { return acts.back(); }
};

template <typename T>
ForwardCache<T> forward_cached(const SegmenterParams<T>& params, const Tensor<T>& image) {
  image.require_ndim(3, "segmenter forward");
  if (image.dim(0) != params.arch.in_channels())
    throw ShapeError("segmenter forward: expected " + std::to_string(params.arch.in_channels()) +
                     " input channels, got " + std::to_string(image.dim(0)));
  ForwardCache<T> cache;
  cache.acts.reserve(params.layers.size() + 1);
  cache.acts.push_back(image);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto out = conv2d_forward(cache.acts.back(), params.layers[i].kernel, params.layers[i].bias);
    if (params.arch.layers[i].relu)
      for (auto& v : out.values()) v = v > T{0} ? v : T{0};
    cache.acts.push_back(std::move(out));
  }
  return cache;
}

template <typename T>
Tensor<T> forward(const SegmenterParams<T>& params, const Tensor<T>& image) {
  image.require_ndim(3, "segmenter forward");
  if (image.dim(0) != params.arch.in_channels())
    throw ShapeError("segmenter forward: expected " + std::to_string(params.arch.in_channels()) +
                     " input channels, got " + std::to_string(image.dim(0)));
  Tensor<T> x = image;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = conv2d_forward(x, params.layers[i].kernel, params.layers[i].bias);
    if (params.arch.layers[i].relu)
      for (auto& v : x.values()) v = v > T{0} ? v : T{0};
  }
  return x;
}

template <typename T>
SegmenterGrads<T> backward(const SegmenterParams<T>& params, const ForwardCache<T>& cache,
                           const Tensor<T>& grad_logits) {
  if (cache.acts.size() != params.layers.size() + 1) throw ShapeError("segmenter backward: cache does not match params");
  require_same_shape(grad_logits.shape(), cache.logits().shape(), "segmenter backward");
  SegmenterGrads<T> grads{params.arch, std::vector<ConvLayer<T>>(params.layers.size())};
  Tensor<T> g = grad_logits;
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    if (params.arch.layers[i].relu) {
      const auto& out = cache.acts[i + 1];
      for (std::size_t j = 0; j < g.size(); ++j)
        if (!(out[j] > T{0})) g[j] = T{0};
    }
    auto cg = conv2d_backward(cache.acts[i], params.layers[i].kernel, g, i > 0);
    grads.layers[i] = {std::move(cg.kernel), std::move(cg.bias)};
    g = std::move(cg.input);
  }
  return grads;
}

// a += b, elementwise over all parameter tensors.
template <typename T>
void accumulate(SegmenterGrads<T>& a, const SegmenterGrads<T>& b) {
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (std::size_t j = 0; j < a.layers[i].kernel.size(); ++j) a.layers[i].kernel[j] += b.layers[i].kernel[j];
    for (std::size_t j = 0; j < a.layers[i].bias.size(); ++j) a.layers[i].bias[j] += b.layers[i].bias[j];
  }
}

// teacher <- alpha * teacher + (1 - alpha) * student
template <typename T>
void ema_update(SegmenterParams<T>& teacher, const SegmenterParams<T>& student, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("ema_update: alpha must be in [0, 1]");
  if (teacher.arch != student.arch) throw ShapeError("ema_update: architectures differ");
  const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
  for (std::size_t i = 0; i < teacher.layers.size(); ++i) {
    auto blend = [&](Tensor<T>& t, const Tensor<T>& s) {
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = a * t[j] + b * s[j];
    };
    blend(teacher.layers[i].kernel, student.layers[i].kernel);
    blend(teacher.layers[i].bias, student.layers[i].bias);
  }
}

template <typename T>
struct StudentTeacher {
  SegmenterParams<T> student;
  SegmenterParams<T> teacher;
  double alpha = 0.99;

  static StudentTeacher from_init(SegmenterParams<T> init, double alpha) {
    return {init, init, alpha};
  }

  void ema_step() { ema_update(teacher, student, alpha); }
};

struct AdamConfig {
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-5;
  double poly_power = 0.9;
};

// Polynomial decay: lr * (1 - t / t_max)^power.
inline double poly_lr(double base, std::size_t t, std::size_t t_max, double power) {
  if (t_max == 0) return base;
  const double frac = std::min(1.0, static_cast<double>(t) / static_cast<double>(t_max));
  return base * std::pow(1.0 - frac, power);
}

template <typename T>
struct AdamState {
  SegmenterParams<T> m;
  SegmenterParams<T> v;
  std::uint64_t steps = 0;

  static AdamState for_params(const SegmenterParams<T>& p) {
    return {SegmenterParams<T>::zeros(p.arch), SegmenterParams<T>::zeros(p.arch), 0};
  }
};

// One Adam step with L2 weight decay folded into the gradient.
template <typename T>
void adam_step(SegmenterParams<T>& params, const SegmenterGrads<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg, double lr) {
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  const double step = lr / bc1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  auto update = [&](Tensor<T>& p, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + cfg.weight_decay * static_cast<double>(p[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(static_cast<double>(p[j]) - step * mj / (std::sqrt(vj / bc2) + cfg.eps));
    }
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].kernel, grads.layers[i].kernel, state.m.layers[i].kernel, state.v.layers[i].kernel);
    update(params.layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias, state.v.layers[i].bias);
  }
}

// FNV-1a over the raw bytes of every parameter tensor.
template <typename T>
std::uint64_t params_digest(const SegmenterParams<T>& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  p.for_each_tensor([&](const Tensor<T>& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

}  // namespace camix
