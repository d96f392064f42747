#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "segxfer/image.hpp"
#include "segxfer/rng.hpp"

namespace segxfer::datagen {

enum class ShapeKind : int { disk = 0, triangle = 1, rectangle = 2, cross = 3, ring = 4 };
inline constexpr std::size_t kNumKinds = 5;
inline constexpr std::array<const char*, kNumKinds> kKindNames = {"disk", "triangle", "rectangle",
                                                                  "cross", "ring"};

inline const char* kind_name(ShapeKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

inline ShapeKind parse_kind(const std::string& s) {
  for (std::size_t i = 0; i < kNumKinds; ++i) {
    if (s == kKindNames[i]) return static_cast<ShapeKind>(i);
  }
  fail("datagen", "unknown_kind", "unknown shape kind '" + s + "'");
}

using Color = std::array<float, 3>;

struct SceneObject {
  ShapeKind kind = ShapeKind::disk;
  double cx = 0, cy = 0;  // centre in pixels
  double radius = 1;      // circumscribed radius in pixels
  double rotation = 0;    // radians
  Color color{};
};

/// Background noise field plus objects in painting order (later objects
/// occlude earlier ones).
struct ShapeScene {
  std::size_t size = 0;
  std::uint64_t background_seed = 0;
  Color tint{};
  std::vector<SceneObject> objects;
};

struct RenderedScene {
  Image image;                               // 3 x size x size
  std::array<Image, kNumKinds> kind_masks;   // pixels owned by each kind
};

/// True when pixel-centre (px, py) lies inside the object.
inline bool contains(const SceneObject& o, double px, double py) {
  const double dx = px - o.cx, dy = py - o.cy;
  const double c = std::cos(-o.rotation), s = std::sin(-o.rotation);
  const double u = (c * dx - s * dy) / o.radius;
  const double v = (s * dx + c * dy) / o.radius;
  switch (o.kind) {
    case ShapeKind::disk:
      return u * u + v * v <= 1.0;
    case ShapeKind::ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case ShapeKind::rectangle:
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.6;
    case ShapeKind::cross:
      return (std::abs(u) <= 1.0 && std::abs(v) <= 0.3) ||
             (std::abs(v) <= 1.0 && std::abs(u) <= 0.3);
    case ShapeKind::triangle: {
      // equilateral, circumradius 1, inradius 0.5
      constexpr double kPi = std::numbers::pi;
      for (double a : {1.5 * kPi, kPi / 6.0, 5.0 * kPi / 6.0}) {
        if (u * std::cos(a) + v * std::sin(a) > 0.5) return false;
      }
      return true;
    }
  }
  return false;
}

namespace detail {

inline double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

/// Low-frequency value noise on a coarse lattice, one field per channel.
inline void paint_background(Image& img, std::uint64_t seed, const Color& tint) {
  constexpr std::size_t kLattice = 5;
  Rng rng(seed);
  std::array<std::array<double, kLattice * kLattice>, 3> lattice{};
  for (auto& ch : lattice) {
    for (auto& v : ch) v = uniform(rng, 0.0, 1.0);
  }
  const double step = static_cast<double>(img.width) / static_cast<double>(kLattice - 1);
  for (std::size_t y = 0; y < img.height; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) / step;
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), kLattice - 2);
    const double ty = smooth(std::clamp(fy - static_cast<double>(y0), 0.0, 1.0));
    for (std::size_t x = 0; x < img.width; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / step;
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), kLattice - 2);
      const double tx = smooth(std::clamp(fx - static_cast<double>(x0), 0.0, 1.0));
      for (std::size_t c = 0; c < 3; ++c) {
        const auto& L = lattice[c];
        const double a = L[y0 * kLattice + x0], b = L[y0 * kLattice + x0 + 1];
        const double d = L[(y0 + 1) * kLattice + x0], e = L[(y0 + 1) * kLattice + x0 + 1];
        const double n = (a * (1 - tx) + b * tx) * (1 - ty) + (d * (1 - tx) + e * tx) * ty;
        img.at(c, y, x) = static_cast<float>(0.15 + 0.35 * n + 0.35 * tint[c]);
      }
    }
  }
}

}  // namespace detail

/// Paints the scene and records which kind owns each pixel after occlusion.
inline RenderedScene render(const ShapeScene& scene) {
  RenderedScene out;
  out.image = Image(3, scene.size, scene.size);
  detail::paint_background(out.image, scene.background_seed, scene.tint);
  for (auto& m : out.kind_masks) m = Image(1, scene.size, scene.size, 0.0f);
  std::vector<int> owner(scene.size * scene.size, -1);
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& o = scene.objects[k];
    const double r = o.radius + 1.0;
    const auto lo_y = static_cast<std::ptrdiff_t>(std::floor(o.cy - r));
    const auto hi_y = static_cast<std::ptrdiff_t>(std::ceil(o.cy + r));
    const auto lo_x = static_cast<std::ptrdiff_t>(std::floor(o.cx - r));
    const auto hi_x = static_cast<std::ptrdiff_t>(std::ceil(o.cx + r));
    const auto S = static_cast<std::ptrdiff_t>(scene.size);
    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, lo_y); y < std::min(S, hi_y); ++y) {
      for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, lo_x); x < std::min(S, hi_x); ++x) {
        if (contains(o, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          owner[static_cast<std::size_t>(y * S + x)] = static_cast<int>(k);
        }
      }
    }
  }
  const std::size_t P = scene.size * scene.size;
  for (std::size_t i = 0; i < P; ++i) {
    if (owner[i] < 0) continue;
    const auto& o = scene.objects[static_cast<std::size_t>(owner[i])];
    for (std::size_t c = 0; c < 3; ++c) out.image.data[c * P + i] = o.color[c];
    out.kind_masks[static_cast<std::size_t>(o.kind)].data[i] = 1.0f;
  }
  quantize_8bit(out.image);
  return out;
}

/// Draws one object of `kind` with radius relative to `scale_ref` pixels.
inline SceneObject random_object(ShapeKind kind, std::size_t scene_size, double scale_ref,
                                 const std::vector<Color>& palette, Rng& rng) {
  SceneObject o;
  o.kind = kind;
  o.radius = uniform(rng, 0.15, 0.32) * scale_ref;
  const double margin = 0.5 * o.radius;
  o.cx = uniform(rng, margin, static_cast<double>(scene_size) - margin);
  o.cy = uniform(rng, margin, static_cast<double>(scene_size) - margin);
  o.rotation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  if (palette.empty()) {
    for (auto& c : o.color) c = static_cast<float>(uniform(rng, 0.05, 0.95));
  } else {
    o.color = palette[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(palette.size()) - 1))];
  }
  return o;
}

}  // namespace segxfer::datagen
