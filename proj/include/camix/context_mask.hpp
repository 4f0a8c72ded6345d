#pragma once

// Contextual mask generation: spatially modulated pseudo-label, random half of
// the present classes, closure over meta-class groups, rasterization.

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "camix/grid.hpp"
#include "camix/kernels.hpp"
#include "camix/rng.hpp"
#include "camix/scene.hpp"
#include "camix/spatial_prior.hpp"
#include "camix/tensor.hpp"

namespace camix {

using ClassList = std::vector<std::uint8_t>;

struct ContextualMask {
  BinaryGrid m;
  ClassList selected_classes;
};

template <typename T>
LabelMap spatially_modulated_pseudolabel(const Tensor<T>& teacher_probs, const SpatialPrior& prior) {
  return argmax_channels(modulate(teacher_probs, prior));
}

// Sorted distinct non-ignore ids.
inline ClassList present_classes(const LabelMap& labels) {
  std::vector<bool> seen(256, false);
  for (auto id : labels.cells) seen[id] = true;
  ClassList out;
  for (int c = 0; c < 256; ++c)
    if (seen[c] && c != kIgnoreId) out.push_back(static_cast<std::uint8_t>(c));
  return out;
}

// ceil(|present| / 2) classes drawn uniformly without replacement by a partial
// Fisher-Yates shuffle of the ascending list, in draw order.
inline ClassList pick_half(const ClassList& present, SeededRng& rng) {
  ClassList pool = present;
  std::sort(pool.begin(), pool.end());
  const std::size_t k = (pool.size() + 1) / 2;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

// Appends, for each picked class that belongs to a meta group, the other group
// members that are present. Groups are disjoint so one pass is a closure.
inline ClassList close_over_groups(const ClassList& picked, const ClassList& present,
                                   const MetaClassList& meta) {
  ClassList c = picked;
  for (const auto k : picked) {
    const int g = meta.group_of(k);
    if (g < 0) continue;
    for (const auto related : meta.groups[static_cast<std::size_t>(g)]) {
      if (related == k) continue;
      const bool in_image = std::find(present.begin(), present.end(), related) != present.end();
      if (in_image && std::find(c.begin(), c.end(), related) == c.end()) c.push_back(related);
    }
  }
  return c;
}

inline ClassList select_classes(const ClassList& present, const MetaClassList& meta, SeededRng& rng) {
  if (present.empty()) return {};
  return close_over_groups(pick_half(present, rng), present, meta);
}

// M(i,j) = 1 iff pseudo(i,j) is a selected class. Ignore-valued pixels map to 0.
inline BinaryGrid rasterize_mask(const LabelMap& pseudo, const ClassList& selected) {
  std::array<bool, 256> on{};
  for (auto c : selected) on[c] = true;
  on[kIgnoreId] = false;
  BinaryGrid m(pseudo.height, pseudo.width, 0);
  for (std::size_t i = 0; i < pseudo.size(); ++i) m[i] = on[pseudo[i]] ? 1 : 0;
  return m;
}

template <typename T>
ContextualMask generate_contextual_mask(const Tensor<T>& teacher_probs, const SpatialPrior& prior,
                                        const MetaClassList& meta, SeededRng& rng) {
  meta.validate(teacher_probs.dim(0));
  const LabelMap pseudo = spatially_modulated_pseudolabel(teacher_probs, prior);
  ClassList selected = select_classes(present_classes(pseudo), meta, rng);
  return {rasterize_mask(pseudo, selected), std::move(selected)};
}

// Baseline class-mix mask: random half of the classes in a plain argmax, no prior, no groups.
inline ContextualMask generate_classmix_mask(const LabelMap& pseudo, SeededRng& rng) {
  const ClassList present = present_classes(pseudo);
  ClassList selected = present.empty() ? ClassList{} : pick_half(present, rng);
  return {rasterize_mask(pseudo, selected), std::move(selected)};
}

}  // namespace camix
