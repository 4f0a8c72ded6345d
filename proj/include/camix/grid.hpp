#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "camix/errors.hpp"

namespace camix {

inline constexpr std::uint8_t kIgnoreId = 255;

// H x W grid of small integers. Base for label maps and binary masks.
template <typename V>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<V> cells;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, V fill = V{}) : height(h), width(w), cells(h * w, fill) {
    if (h == 0 || w == 0) throw ShapeError("grid dimensions must be positive");
  }
  Grid(std::size_t h, std::size_t w, std::vector<V> values)
      : height(h), width(w), cells(std::move(values)) {
    if (h == 0 || w == 0) throw ShapeError("grid dimensions must be positive");
    if (cells.size() != h * w) throw ShapeError("grid data length does not match H*W");
  }

  std::size_t size() const noexcept { return cells.size(); }
  V& operator()(std::size_t y, std::size_t x) { return cells[y * width + x]; }
  const V& operator()(std::size_t y, std::size_t x) const { return cells[y * width + x]; }
  V& operator[](std::size_t i) { return cells[i]; }
  const V& operator[](std::size_t i) const { return cells[i]; }

  bool same_size(std::size_t h, std::size_t w) const { return height == h && width == w; }
  template <typename U>
  bool same_size(const Grid<U>& o) const {
    return height == o.height && width == o.width;
  }

  bool operator==(const Grid&) const = default;
};

// Class ids per pixel; kIgnoreId marks pixels excluded from losses and metrics.
using LabelMap = Grid<std::uint8_t>;
// Values restricted to {0, 1}.
using BinaryGrid = Grid<std::uint8_t>;

template <typename A, typename B>
void require_same_grid(const Grid<A>& a, const Grid<B>& b, const char* context) {
  if (!a.same_size(b))
    throw ShapeError(std::string(context) + ": grid size mismatch " + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
}

inline void require_labels_below(const LabelMap& labels, std::size_t num_classes,
                                 const char* context) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto id = labels[i];
    if (id != kIgnoreId && id >= num_classes)
      throw DataError(std::string(context) + ": label id " + std::to_string(id) +
                      " out of range for " + std::to_string(num_classes) + " classes at pixel " +
                      std::to_string(i));
  }
}

}  // namespace camix
