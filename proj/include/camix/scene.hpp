#pragma once

// Procedural street-like scenes with two appearance domains.
//
// Layout rules (both domains, identical for a given seed):
//   sky (0)       rows [0, 0.4H), above a per-segment building skyline
//   building (3)  between the skyline and the ground line g = ceil(0.6H)
//   road (1)      rows [g, H), a trapezoid widening towards the bottom
//   sidewalk (2)  the remainder of each ground row, so every sidewalk run
//                 touches road on the same row
//   pole (4)      vertical bars standing on the ground line
//   sign (5)      plates attached to the side of a pole
//   vehicle (6)   boxes strictly inside the road
//   rider (7)     small boxes sitting on top of a vehicle, inside the road
//
// Target-domain images additionally get a hue rotation, a brightness offset and
// extra Gaussian texture noise. Labels never depend on the domain.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/netpbm.hpp"
#include "camix/rng.hpp"
#include "camix/tensor.hpp"

namespace camix {

namespace cls {
inline constexpr std::uint8_t sky = 0, road = 1, sidewalk = 2, building = 3, pole = 4, sign = 5,
                              vehicle = 6, rider = 7;
}

inline constexpr std::size_t kSceneClasses = 8;

inline const std::array<const char*, kSceneClasses>& class_names() {
  static const std::array<const char*, kSceneClasses> names{
      "sky", "road", "sidewalk", "building", "pole", "sign", "vehicle", "rider"};
  return names;
}

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ArgumentError("unknown domain '" + s + "' (expected source or target)");
}

struct Rgb {
  double r, g, b;
};

struct DomainShift {
  double brightness_delta = 0.0;
  double hue_rotation = 0.0;        // degrees, rotation about the grey axis
  double texture_noise_sigma = 0.0;

  bool is_zero() const { return brightness_delta == 0.0 && hue_rotation == 0.0 && texture_noise_sigma == 0.0; }
};

inline std::vector<Rgb> default_palette() {
  return {
      {0.55, 0.72, 0.92},  // sky
      {0.32, 0.32, 0.36},  // road
      {0.72, 0.62, 0.52},  // sidewalk
      {0.58, 0.34, 0.28},  // building
      {0.86, 0.82, 0.30},  // pole
      {0.90, 0.28, 0.24},  // sign
      {0.22, 0.34, 0.78},  // vehicle
      {0.26, 0.74, 0.36},  // rider
  };
}

inline DomainShift default_target_shift() { return {-0.05, 15.0, 0.25}; }

struct SceneSpec {
  Domain domain = Domain::source;
  std::size_t num_classes = kSceneClasses;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<Rgb> palette = default_palette();
  DomainShift shift{};
  // Per-instance colour jitter and per-pixel texture noise shared by both domains.
  double instance_jitter = 0.06;
  double base_texture_sigma = 0.03;

  static SceneSpec for_domain(Domain d, std::size_t h, std::size_t w) {
    SceneSpec s;
    s.domain = d;
    s.height = h;
    s.width = w;
    if (d == Domain::target) s.shift = default_target_shift();
    return s;
  }

  void validate() const {
    if (height < 32 || width < 32) throw ArgumentError("scene size must be at least 32x32");
    if (num_classes != kSceneClasses)
      throw ArgumentError("scene generator supports exactly " + std::to_string(kSceneClasses) + " classes");
    if (palette.size() != num_classes) throw ArgumentError("palette must have one entry per class");
    if (domain == Domain::source && !shift.is_zero())
      throw ArgumentError("source-domain scenes cannot carry a domain shift");
    if (shift.texture_noise_sigma < 0.0 || base_texture_sigma < 0.0 || instance_jitter < 0.0)
      throw ArgumentError("noise parameters must be non-negative");
  }
};

// Groups of classes that must be pasted together.
struct MetaClassList {
  std::vector<std::vector<std::uint8_t>> groups;

  // Group index of `id`, or -1.
  int group_of(std::uint8_t id) const {
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (std::find(groups[g].begin(), groups[g].end(), id) != groups[g].end()) return static_cast<int>(g);
    return -1;
  }

  void validate(std::size_t num_classes) const {
    std::vector<bool> seen(256, false);
    for (const auto& g : groups)
      for (auto id : g) {
        if (id >= num_classes) throw ArgumentError("meta-class id out of range");
        if (seen[id]) throw ArgumentError("meta-class groups must be disjoint");
        seen[id] = true;
      }
  }

  static MetaClassList scene_default() { return {{{cls::pole, cls::sign}, {cls::vehicle, cls::rider}}}; }
};

struct Scene {
  Tensor<float> image;  // (3, H, W) in [0, 1]
  LabelMap labels;
};

namespace detail {

struct Box {
  int y0, y1, x0, x1;  // half-open
};

inline void paint(LabelMap& lab, std::vector<int>& inst, const Box& b, std::uint8_t id, int instance) {
  for (int y = std::max(0, b.y0); y < std::min<int>(static_cast<int>(lab.height), b.y1); ++y)
    for (int x = std::max(0, b.x0); x < std::min<int>(static_cast<int>(lab.width), b.x1); ++x) {
      lab(y, x) = id;
      inst[y * lab.width + x] = instance;
    }
}

inline bool box_only_over(const LabelMap& lab, const Box& b, std::initializer_list<std::uint8_t> allowed) {
  if (b.y0 < 0 || b.x0 < 0 || b.y1 > static_cast<int>(lab.height) || b.x1 > static_cast<int>(lab.width))
    return false;
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x)
      if (std::find(allowed.begin(), allowed.end(), lab(y, x)) == allowed.end()) return false;
  return true;
}

// Rotation about the (1,1,1) axis in RGB space (Rodrigues).
inline std::array<double, 9> hue_rotation_matrix(double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a), k = 1.0 / std::sqrt(3.0), t = 1.0 - c;
  const double d = c + t * k * k, o1 = t * k * k - s * k, o2 = t * k * k + s * k;
  return {d, o1, o2, o2, d, o1, o1, o2, d};
}

}  // namespace detail

inline int ground_row(std::size_t H) { return static_cast<int>(std::ceil(0.6 * static_cast<double>(H))); }
inline int sky_limit_row(std::size_t H) { return static_cast<int>(std::floor(0.4 * static_cast<double>(H))); }

// Layout stream = fork(0), appearance = fork(1), domain-shift noise = fork(2), so
// the same rng yields identical labels in both domains.
inline Scene generate_scene(const SceneSpec& spec, const SeededRng& rng) {
  spec.validate();
  const int H = static_cast<int>(spec.height), W = static_cast<int>(spec.width);
  SeededRng layout = rng.fork(0);
  SeededRng look = rng.fork(1);
  SeededRng shift_rng = rng.fork(2);

  LabelMap lab(spec.height, spec.width, cls::building);
  std::vector<int> inst(spec.height * spec.width, 0);
  int next_instance = 1;

  const int g = ground_row(spec.height);
  const int sky_lim = sky_limit_row(spec.height);

  // Skyline: consecutive building segments with their own roof rows.
  for (int x = 0; x < W;) {
    const int seg = layout.between(std::max(3, W / 8), std::max(4, W / 3));
    const int roof = layout.between(H / 10, sky_lim);
    const int instance = next_instance++;
    for (int xx = x; xx < std::min(W, x + seg); ++xx)
      for (int y = 0; y < g; ++y) {
        lab(y, xx) = y < roof ? cls::sky : cls::building;
        inst[y * W + xx] = y < roof ? 0 : instance;
      }
    x += seg;
  }

  // Road trapezoid; sidewalk fills the rest of each ground row.
  const double cx = layout.uniform(0.35, 0.65) * W;
  const double top_half = layout.uniform(0.10, 0.18) * W;
  const double bottom_half = layout.uniform(0.38, 0.60) * W;
  std::vector<int> road_l(H, 0), road_r(H, 0);
  const int road_instance = next_instance++, walk_instance = next_instance++;
  for (int y = g; y < H; ++y) {
    const double f = H - 1 == g ? 1.0 : static_cast<double>(y - g) / (H - 1 - g);
    const double hw = top_half + f * (bottom_half - top_half);
    road_l[y] = std::clamp(static_cast<int>(std::lround(cx - hw)), 0, W - 1);
    road_r[y] = std::clamp(static_cast<int>(std::lround(cx + hw)), road_l[y] + 1, W);
    for (int x = 0; x < W; ++x) {
      const bool on_road = x >= road_l[y] && x < road_r[y];
      lab(y, x) = on_road ? cls::road : cls::sidewalk;
      inst[y * W + x] = on_road ? road_instance : walk_instance;
    }
  }

  // Vehicles (inside the road with a one-pixel margin), optionally with a rider on top.
  const int n_vehicles = layout.between(1, 3);
  for (int v = 0; v < n_vehicles; ++v) {
    const int vh = layout.between(std::max(3, H / 11), std::max(4, H / 6));
    const int vw = layout.between(std::max(4, W / 9), std::max(5, W / 4));
    const bool wants_rider = layout.bernoulli(0.6);
    const int rh = std::max(3, H / 11), rw = std::max(2, W / 16);
    for (int attempt = 0; attempt < 8; ++attempt) {
      const int top_min = g + (wants_rider ? rh : 0);
      if (top_min + vh > H) break;
      const int vy0 = layout.between(top_min, H - vh);
      const int lo = road_l[vy0] + 1, hi = road_r[vy0] - 1 - vw;
      if (hi < lo) continue;
      const int vx0 = layout.between(lo, hi);
      const detail::Box vb{vy0, vy0 + vh, vx0, vx0 + vw};
      if (!detail::box_only_over(lab, vb, {cls::road, cls::vehicle, cls::rider})) continue;
      detail::paint(lab, inst, vb, cls::vehicle, next_instance++);
      if (wants_rider) {
        const int rx0 = layout.between(vx0, vx0 + vw - rw);
        const detail::Box rb{vy0 - rh, vy0, rx0, rx0 + rw};
        // The rider must stay on road pixels (or other movers) with a margin so that
        // sidewalk runs keep touching road.
        const detail::Box margin{rb.y0, rb.y1, rb.x0 - 1, rb.x1 + 1};
        if (detail::box_only_over(lab, margin, {cls::road, cls::vehicle, cls::rider}))
          detail::paint(lab, inst, rb, cls::rider, next_instance++);
      }
      break;
    }
  }

  // Poles standing on the ground line, each carrying a sign on one side.
  const int n_poles = layout.between(1, 2);
  for (int p = 0; p < n_poles; ++p) {
    const int pw = std::max(1, W / 32);
    const int sh = std::max(3, H / 12), sw = std::max(3, W / 12);
    for (int attempt = 0; attempt < 8; ++attempt) {
      const int pt = layout.between(H / 6, static_cast<int>(0.32 * H));
      const int px = layout.between(sw, W - pw - sw);
      const bool left = layout.bernoulli(0.5);
      const detail::Box pb{pt, g, px, px + pw};
      const int sy0 = pt;
      const detail::Box sb = left ? detail::Box{sy0, sy0 + sh, px - sw, px} : detail::Box{sy0, sy0 + sh, px + pw, px + pw + sw};
      const detail::Box pad{pb.y0 - 1, pb.y1, std::min(pb.x0, sb.x0) - 1, std::max(pb.x1, sb.x1) + 1};
      const detail::Box clipped{std::max(0, pad.y0), pad.y1, std::max(0, pad.x0), std::min(W, pad.x1)};
      if (!detail::box_only_over(lab, clipped, {cls::sky, cls::building})) continue;
      detail::paint(lab, inst, pb, cls::pole, next_instance++);
      detail::paint(lab, inst, sb, cls::sign, next_instance++);
      break;
    }
  }

  // Appearance: per-instance colour, then per-pixel texture.
  std::vector<Rgb> instance_color(static_cast<std::size_t>(next_instance) * kSceneClasses);
  std::vector<bool> have(instance_color.size(), false);
  Tensor<float> img({3, spec.height, spec.width});
  const std::size_t n = spec.height * spec.width;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = lab[i];
    const std::size_t key = static_cast<std::size_t>(inst[i]) * kSceneClasses + id;
    if (!have[key]) {
      const Rgb& base = spec.palette[id];
      instance_color[key] = {base.r + look.uniform(-1, 1) * spec.instance_jitter,
                             base.g + look.uniform(-1, 1) * spec.instance_jitter,
                             base.b + look.uniform(-1, 1) * spec.instance_jitter};
      have[key] = true;
    }
    const Rgb& c = instance_color[key];
    img[i] = static_cast<float>(c.r + spec.base_texture_sigma * look.normal());
    img[n + i] = static_cast<float>(c.g + spec.base_texture_sigma * look.normal());
    img[2 * n + i] = static_cast<float>(c.b + spec.base_texture_sigma * look.normal());
  }

  if (spec.domain == Domain::target) {
    const auto m = detail::hue_rotation_matrix(spec.shift.hue_rotation);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = img[i], gg = img[n + i], b = img[2 * n + i];
      const double out[3] = {m[0] * r + m[1] * gg + m[2] * b, m[3] * r + m[4] * gg + m[5] * b,
                             m[6] * r + m[7] * gg + m[8] * b};
      for (std::size_t c = 0; c < 3; ++c)
        img[c * n + i] = static_cast<float>(out[c] + spec.shift.brightness_delta +
                                            spec.shift.texture_noise_sigma * shift_rng.normal());
    }
  }
  for (auto& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
  return {std::move(img), std::move(lab)};
}

// Label map rendered with one colour per class; ignore pixels are black.
inline Rgb8Image render_labels(const LabelMap& labels, const std::vector<Rgb>& palette) {
  Rgb8Image img{labels.height, labels.width, std::vector<std::uint8_t>(labels.size() * 3, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= palette.size()) continue;
    const Rgb& c = palette[labels[i]];
    img.rgb[i * 3 + 0] = static_cast<std::uint8_t>(std::lround(std::clamp(c.r, 0.0, 1.0) * 255.0));
    img.rgb[i * 3 + 1] = static_cast<std::uint8_t>(std::lround(std::clamp(c.g, 0.0, 1.0) * 255.0));
    img.rgb[i * 3 + 2] = static_cast<std::uint8_t>(std::lround(std::clamp(c.b, 0.0, 1.0) * 255.0));
  }
  return img;
}

}  // namespace camix
