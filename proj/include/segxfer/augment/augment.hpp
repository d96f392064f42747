#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "segxfer/image.hpp"
#include "segxfer/rng.hpp"

namespace segxfer::augment {

struct AugmentConfig {
  double flip_prob = 0.5;
  double crop_min_area = 0.5;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  std::size_t mask_count = 4;
  double mask_area_fraction = 0.25;
  bool target_b_jittered = true;

  void validate() const {
    if (!(crop_min_area > 0.0 && crop_min_area <= 1.0)) {
      fail("augment", "config", "crop_min_area must be in (0, 1]");
    }
    if (!(aspect_min <= 1.0 && aspect_max >= 1.0 && aspect_min > 0.0)) {
      fail("augment", "config", "aspect range must contain 1");
    }
    if (!(mask_area_fraction >= 0.0 && mask_area_fraction < 1.0)) {
      fail("augment", "config", "mask_area_fraction must be in [0, 1)");
    }
    if (flip_prob < 0.0 || flip_prob > 1.0) fail("augment", "config", "flip_prob outside [0,1]");
    if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5) {
      fail("augment", "config", "jitter strengths must be >= 0 (hue <= 0.5)");
    }
  }
};

// ---------------------------------------------------------------- resizing

/// Bilinear resampling with half-pixel centres. Same-size input is copied.
inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (src.height == out_h && src.width == out_w) return src;
  Image dst(src.channels, out_h, out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
        const double bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return dst;
}

/// Nearest-neighbour resampling followed by re-binarisation (> 0.5).
inline Image resize_nearest_mask(const Image& src, std::size_t out_h, std::size_t out_w) {
  Image dst(src.channels, out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(src.height - 1, y * src.height / out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(src.width - 1, x * src.width / out_w);
      for (std::size_t c = 0; c < src.channels; ++c) {
        dst.at(c, y, x) = src.at(c, sy, sx) > 0.5f ? 1.0f : 0.0f;
      }
    }
  }
  return dst;
}

/// Aspect-preserving resize so the longer side equals `target`, centred on a
/// zero-padded square canvas. Masks use nearest-neighbour sampling.
inline Image resize_with_pad(const Image& image, std::size_t target, bool is_mask = false) {
  if (image.height == 0 || image.width == 0 || image.channels == 0) {
    fail("augment", "empty_image", "resize_with_pad: zero-area image");
  }
  if (target == 0) fail("augment", "config", "resize_with_pad: target size must be positive");
  const double scale =
      static_cast<double>(target) / static_cast<double>(std::max(image.height, image.width));
  const std::size_t nh = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(image.height * scale)), 1, target);
  const std::size_t nw = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(image.width * scale)), 1, target);
  const Image resized =
      is_mask ? resize_nearest_mask(image, nh, nw) : resize_bilinear(image, nh, nw);
  Image out(image.channels, target, target, 0.0f);
  const std::size_t oy = (target - nh) / 2, ox = (target - nw) / 2;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < nh; ++y) {
      for (std::size_t x = 0; x < nw; ++x) out.at(c, oy + y, ox + x) = resized.at(c, y, x);
    }
  }
  return out;
}

// ------------------------------------------------------------ flip / crop

struct CropBox {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;
  bool operator==(const CropBox&) const = default;
};

struct FlipCropRecord {
  bool flipped = false;
  CropBox box;
};

inline Image hflip(const Image& img) {
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
      }
    }
  }
  return out;
}

inline Image crop(const Image& img, const CropBox& box) {
  Image out(img.channels, box.height, box.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < box.height; ++y) {
      for (std::size_t x = 0; x < box.width; ++x) {
        out.at(c, y, x) = img.at(c, box.y0 + y, box.x0 + x);
      }
    }
  }
  return out;
}

/// Draws a flip decision and a crop box satisfying the area and aspect
/// constraints, by rejection sampling; falls back to the full frame after 10
/// rejected draws.
inline FlipCropRecord sample_flip_crop(std::size_t height, std::size_t width,
                                       const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  FlipCropRecord rec;
  rec.flipped = coin(rng, cfg.flip_prob);
  rec.box = {0, 0, width, height};
  const double full = static_cast<double>(height * width);
  const double base_aspect = static_cast<double>(width) / static_cast<double>(height);
  const double la = std::log(cfg.aspect_min), lb = std::log(cfg.aspect_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = uniform(rng, cfg.crop_min_area, 1.0) * full;
    const double ratio = std::exp(la < lb ? uniform(rng, la, lb) : la) * base_aspect;
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(area * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(area / ratio)));
    if (w < 1 || h < 1 || w > width || h > height) continue;
    if (static_cast<double>(w * h) < cfg.crop_min_area * full) continue;
    const double rel = (static_cast<double>(w) / static_cast<double>(h)) / base_aspect;
    if (rel < cfg.aspect_min || rel > cfg.aspect_max) continue;
    rec.box.width = w;
    rec.box.height = h;
    rec.box.x0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(width - w)));
    rec.box.y0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(height - h)));
    return rec;
  }
  return rec;
}

/// Applies a recorded flip/crop and resizes back to the input size.
inline Image apply_flip_crop(const Image& img, const FlipCropRecord& rec, bool is_mask) {
  const Image flipped = rec.flipped ? hflip(img) : img;
  const Image cropped = crop(flipped, rec.box);
  return is_mask ? resize_nearest_mask(cropped, img.height, img.width)
                 : resize_bilinear(cropped, img.height, img.width);
}

struct FlipCropResult {
  Image image;
  std::optional<Image> mask;
  FlipCropRecord record;
};

inline FlipCropResult random_flip_crop(const Image& image, const Image* mask,
                                       const AugmentConfig& cfg, Rng& rng) {
  if (mask && (mask->height != image.height || mask->width != image.width)) {
    fail("augment", "shape", "random_flip_crop: mask and image sizes differ");
  }
  FlipCropResult out;
  out.record = sample_flip_crop(image.height, image.width, cfg, rng);
  out.image = apply_flip_crop(image, out.record, false);
  if (mask) out.mask = apply_flip_crop(*mask, out.record, true);
  return out;
}

// ----------------------------------------------------------- colour jitter

enum class JitterOp : int { brightness = 0, contrast = 1, saturation = 2, hue = 3 };

/// Factors of one jitter draw. A factor of exactly 1 (shift 0 for hue) means
/// the stage is skipped.
struct JitterRecord {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.1;
  std::array<JitterOp, 4> order = {JitterOp::brightness, JitterOp::contrast,
                                   JitterOp::saturation, JitterOp::hue};
};

namespace detail {

inline void require_rgb(const Image& img) {
  if (img.channels != 3) {
    fail("augment", "not_rgb", "color_jitter: expected 3 channels, got " +
                                   std::to_string(img.channels));
  }
}

inline double luma(const Image& img, std::size_t i) {
  const std::size_t P = img.plane();
  return 0.299 * img.data[i] + 0.587 * img.data[P + i] + 0.114 * img.data[2 * P + i];
}

inline void clamp01(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

inline double jitter_factor(Rng& rng, double strength) {
  if (strength <= 0.0) return 1.0;
  return uniform(rng, std::max(0.0, 1.0 - strength), 1.0 + strength);
}

}  // namespace detail

inline JitterRecord sample_jitter(const AugmentConfig& cfg, Rng& rng) {
  JitterRecord rec;
  rec.brightness = detail::jitter_factor(rng, cfg.brightness);
  rec.contrast = detail::jitter_factor(rng, cfg.contrast);
  rec.saturation = detail::jitter_factor(rng, cfg.saturation);
  rec.hue = cfg.hue > 0.0 ? uniform(rng, -cfg.hue, cfg.hue) : 0.0;
  std::shuffle(rec.order.begin(), rec.order.end(), rng);
  return rec;
}

/// Applies the recorded jitter stages in order, clamping to [0, 1] after each.
inline Image apply_jitter(const Image& image, const JitterRecord& rec) {
  detail::require_rgb(image);
  Image img = image;
  const std::size_t P = img.plane();
  for (JitterOp op : rec.order) {
    switch (op) {
      case JitterOp::brightness:
        if (rec.brightness == 1.0) break;
        for (auto& v : img.data) v = static_cast<float>(v * rec.brightness);
        detail::clamp01(img);
        break;
      case JitterOp::contrast: {
        if (rec.contrast == 1.0) break;
        double m = 0;
        for (std::size_t i = 0; i < P; ++i) m += detail::luma(img, i);
        m /= static_cast<double>(P);
        for (auto& v : img.data) v = static_cast<float>((v - m) * rec.contrast + m);
        detail::clamp01(img);
        break;
      }
      case JitterOp::saturation:
        if (rec.saturation == 1.0) break;
        for (std::size_t i = 0; i < P; ++i) {
          const double g = detail::luma(img, i);
          for (std::size_t c = 0; c < 3; ++c) {
            float& v = img.data[c * P + i];
            v = static_cast<float>(g + (v - g) * rec.saturation);
          }
        }
        detail::clamp01(img);
        break;
      case JitterOp::hue: {
        if (rec.hue == 0.0) break;
        // rotate the chroma plane of YIQ
        const double a = 2.0 * std::numbers::pi * rec.hue;
        const double cs = std::cos(a), sn = std::sin(a);
        for (std::size_t i = 0; i < P; ++i) {
          const double r = img.data[i], g = img.data[P + i], b = img.data[2 * P + i];
          const double y = 0.299 * r + 0.587 * g + 0.114 * b;
          const double ii = 0.596 * r - 0.274 * g - 0.322 * b;
          const double q = 0.211 * r - 0.523 * g + 0.312 * b;
          const double i2 = ii * cs - q * sn, q2 = ii * sn + q * cs;
          img.data[i] = static_cast<float>(y + 0.956 * i2 + 0.621 * q2);
          img.data[P + i] = static_cast<float>(y - 0.272 * i2 - 0.647 * q2);
          img.data[2 * P + i] = static_cast<float>(y - 1.106 * i2 + 1.703 * q2);
        }
        detail::clamp01(img);
        break;
      }
    }
  }
  return img;
}

struct JitterResult {
  Image image;
  JitterRecord record;
};

inline JitterResult color_jitter(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  detail::require_rgb(image);
  JitterResult out;
  out.record = sample_jitter(cfg, rng);
  out.image = apply_jitter(image, out.record);
  return out;
}

// ----------------------------------------------------------------- masking

struct MaskResult {
  Image masked;
  Image map;  // 1 inside masked rectangles
};

/// Blacks out `mask_count` axis-aligned rectangles that together cover about
/// `mask_area_fraction` of the image. Rectangles avoid overlapping when a
/// free spot is found within 20 placements.
inline MaskResult apply_masks(const Image& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t H = image.height, W = image.width;
  MaskResult out{image, Image(1, H, W, 0.0f)};
  if (cfg.mask_count == 0 || cfg.mask_area_fraction <= 0.0) return out;
  const double each = cfg.mask_area_fraction * static_cast<double>(H * W) /
                      static_cast<double>(cfg.mask_count);
  std::vector<CropBox> placed;
  auto overlaps = [&](const CropBox& b) {
    return std::any_of(placed.begin(), placed.end(), [&](const CropBox& o) {
      return b.x0 < o.x0 + o.width && o.x0 < b.x0 + b.width && b.y0 < o.y0 + o.height &&
             o.y0 < b.y0 + b.height;
    });
  };
  for (std::size_t k = 0; k < cfg.mask_count; ++k) {
    const double r = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
    CropBox box;
    box.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(each * r))),
                                        1, W);
    box.height = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(std::sqrt(each / r))), 1, H);
    for (int attempt = 0; attempt < 20; ++attempt) {
      box.x0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(W - box.width)));
      box.y0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(H - box.height)));
      if (!overlaps(box)) break;
    }
    placed.push_back(box);
    for (std::size_t y = box.y0; y < box.y0 + box.height; ++y) {
      for (std::size_t x = box.x0; x < box.x0 + box.width; ++x) out.map.at(0, y, x) = 1.0f;
    }
  }
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) {
      out.masked.data[c * H * W + i] = image.data[c * H * W + i] * (1.0f - out.map.data[i]);
    }
  }
  return out;
}

// ------------------------------------------------------- ConRec batches

/// One augmented view and its four reconstruction targets.
struct ReconTargets {
  Image input_view;  // jittered, then masked
  Image target_b;    // jittered view without masks
  Image target_c;    // un-jittered view without masks
  Image target_d;    // binary map of masked regions
  Image target_e;    // jittered view, masked regions black
};

struct ViewRecord {
  FlipCropRecord geometry;
  JitterRecord jitter;
};

inline ReconTargets make_view(const Image& image, const AugmentConfig& cfg, Rng& rng,
                              ViewRecord* record = nullptr) {
  auto fc = random_flip_crop(image, nullptr, cfg, rng);
  auto jit = color_jitter(fc.image, cfg, rng);
  auto masked = apply_masks(jit.image, cfg, rng);
  ReconTargets t;
  t.target_c = fc.image;
  t.target_b = cfg.target_b_jittered ? jit.image : fc.image;
  t.target_d = masked.map;
  t.target_e = masked.masked;
  t.input_view = std::move(masked.masked);
  if (record) *record = {fc.record, jit.record};
  return t;
}

/// Two independently augmented views per source image, in order
/// (img0/view0, img0/view1, img1/view0, ...). Each image gets its own stream
/// derived from one draw of `rng`.
inline std::vector<ReconTargets> make_conrec_batch(const std::vector<const Image*>& images,
                                                   const AugmentConfig& cfg, Rng& rng) {
  if (images.empty()) fail("augment", "empty_batch", "make_conrec_batch: empty batch");
  cfg.validate();
  std::vector<ReconTargets> out;
  out.reserve(images.size() * 2);
  for (const Image* img : images) {
    const std::uint64_t stream = rng();
    for (std::uint64_t v = 0; v < 2; ++v) {
      Rng view_rng(derive_seed(stream, v));
      out.push_back(make_view(*img, cfg, view_rng));
    }
  }
  return out;
}

}  // namespace segxfer::augment
