#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "camix/camx_io.hpp"
#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/tensor.hpp"

namespace camix {

// Per-location class distribution counted over source labels, (C, H, W).
struct SpatialPrior {
  Tensor<double> q;
  double smoothing_eps = 1.0;
  std::size_t source_count = 0;

  std::size_t num_classes() const { return q.dim(0); }
  std::size_t height() const { return q.dim(1); }
  std::size_t width() const { return q.dim(2); }
};

// q(c,h,w) = (count + eps) / (valid + C * eps); pixels with no valid observation
// (all ignore, eps = 0) fall back to uniform.
inline SpatialPrior build_spatial_prior(std::span<const LabelMap> labels, std::size_t num_classes,
                                        double smoothing_eps = 1.0) {
  if (labels.empty()) throw ArgumentError("build_spatial_prior: empty label sequence");
  if (num_classes < 1 || num_classes > kIgnoreId) throw ArgumentError("build_spatial_prior: bad class count");
  if (!(smoothing_eps >= 0.0)) throw ArgumentError("build_spatial_prior: eps must be >= 0");
  const std::size_t H = labels[0].height, W = labels[0].width, n = H * W, C = num_classes;
  std::vector<std::uint64_t> counts(C * n, 0), valid(n, 0);
  for (const auto& lab : labels) {
    if (!lab.same_size(H, W)) throw ShapeError("build_spatial_prior: label maps differ in size");
    require_labels_below(lab, C, "build_spatial_prior");
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = lab[i];
      if (id == kIgnoreId) continue;
      ++counts[id * n + i];
      ++valid[i];
    }
  }
  SpatialPrior p{Tensor<double>({C, H, W}), smoothing_eps, labels.size()};
  for (std::size_t i = 0; i < n; ++i) {
    const double denom = static_cast<double>(valid[i]) + static_cast<double>(C) * smoothing_eps;
    for (std::size_t c = 0; c < C; ++c)
      p.q[c * n + i] = denom > 0.0 ? (static_cast<double>(counts[c * n + i]) + smoothing_eps) / denom
                                   : 1.0 / static_cast<double>(C);
  }
  return p;
}

// Elementwise q * probs, left unnormalized (only its argmax is consumed).
template <typename T>
Tensor<T> modulate(const Tensor<T>& probs, const SpatialPrior& prior) {
  require_same_shape(probs.shape(), prior.q.shape(), "modulate");
  Tensor<T> out(probs.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(prior.q[i] * static_cast<double>(probs[i]));
  return out;
}

inline void save_spatial_prior(const std::filesystem::path& dir, const SpatialPrior& p) {
  write_camx(dir / "spatial_prior.camx", p.q);
  std::ofstream f(dir / "spatial_prior.json", std::ios::trunc);
  if (!f) throw IoError("cannot write " + (dir / "spatial_prior.json").string());
  nlohmann::ordered_json j;
  j["num_classes"] = p.num_classes();
  j["eps"] = p.smoothing_eps;
  j["source_count"] = p.source_count;
  f << j.dump(2) << '\n';
}

inline SpatialPrior load_spatial_prior(const std::filesystem::path& dir) {
  SpatialPrior p;
  p.q = read_camx<double>(dir / "spatial_prior.camx");
  p.q.require_ndim(3, "spatial prior");
  std::ifstream f(dir / "spatial_prior.json");
  if (!f) throw IoError("cannot open " + (dir / "spatial_prior.json").string());
  try {
    const auto j = nlohmann::json::parse(f);
    if (j.at("num_classes").get<std::size_t>() != p.q.dim(0))
      throw DataError("spatial prior sidecar disagrees with tensor class count");
    p.smoothing_eps = j.at("eps").get<double>();
    p.source_count = j.at("source_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("spatial prior sidecar: ") + e.what());
  }
  return p;
}

}  // namespace camix
