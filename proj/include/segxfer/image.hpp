#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "segxfer/error.hpp"
#include "segxfer/tensor/tensor.hpp"

namespace segxfer {

/// Planar CHW float image. Colour images have values in [0, 1]; masks have
/// one channel with values in {0, 1}.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t plane() const { return height * width; }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  bool operator==(const Image&) const = default;
};

inline double mask_fraction(const Image& mask) {
  if (mask.empty()) return 0.0;
  double s = 0;
  for (float v : mask.data) s += v;
  return s / static_cast<double>(mask.data.size());
}

inline std::size_t mask_count(const Image& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data.begin(), mask.data.end(), [](float v) { return v > 0.5f; }));
}

/// Rounds every value to the nearest 8-bit level k/255 so images survive a
/// PPM/PGM round trip unchanged.
inline void quantize_8bit(Image& img) {
  for (auto& v : img.data) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    v = static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
  }
}

/// Stacks same-sized images into an NCHW tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) fail("augment", "empty_batch", "cannot batch zero images");
  const Image& first = *images.front();
  Tensor<T> out(Shape{images.size(), first.channels, first.height, first.width});
  auto d = out.data();
  const std::size_t per = first.data.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = *images[n];
    if (im.channels != first.channels || im.height != first.height || im.width != first.width) {
      fail("augment", "shape", "batch images differ in shape");
    }
    std::transform(im.data.begin(), im.data.end(), d.begin() + n * per,
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename T>
Tensor<T> to_batch(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return to_batch<T>(ptrs);
}

}  // namespace segxfer
