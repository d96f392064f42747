#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "expect_error.hpp"
#include "segxfer/augment/augment.hpp"

using namespace segxfer;
using namespace segxfer::augment;
using check::expect_error;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Image img(c, h, w);
  for (auto& v : img.data) v = static_cast<float>(uniform(rng, 0, 1));
  return img;
}

Image disk_mask(std::size_t h, std::size_t w, double cx, double cy, double r) {
  Image m(1, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) m.at(0, y, x) = 1.0f;
    }
  }
  return m;
}

AugmentConfig no_photometric() {
  AugmentConfig c;
  c.brightness = c.contrast = c.saturation = c.hue = 0.0;
  c.mask_count = 0;
  return c;
}

bool in_unit_range(const Image& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

}  // namespace

TEST(ResizeWithPad, SquareTargetSizeUnchanged) {
  Rng rng(1);
  auto img = random_image(3, 16, 16, rng);
  EXPECT_EQ(resize_with_pad(img, 16), img);
}

TEST(ResizeWithPad, WideInputIsCentredWithZeroRows) {
  Image img(3, 8, 16, 0.6f);
  auto out = resize_with_pad(img, 32);
  ASSERT_EQ(out.height, 32u);
  ASSERT_EQ(out.width, 32u);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        const bool content = y >= 8 && y < 24;
        if (content) {
          EXPECT_NEAR(out.at(c, y, x), 0.6f, 1e-6);
        } else {
          EXPECT_EQ(out.at(c, y, x), 0.0f);
        }
      }
    }
  }
}

TEST(ResizeWithPad, MaskAreaScales) {
  // centred disk of radius 10 on 40x40, resized to 64: area scales by (64/40)^2
  auto m = disk_mask(40, 40, 20, 20, 10);
  auto out = resize_with_pad(m, 64, true);
  const double expected = std::numbers::pi * 16.0 * 16.0;
  EXPECT_NEAR(static_cast<double>(mask_count(out)), expected, 0.10 * expected);
  for (float v : out.data) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(ResizeWithPad, Errors) {
  expect_error([] { resize_with_pad(Image(3, 0, 4), 8); }, "augment", "empty_image");
}

TEST(FlipCrop, DoubleFlipIsIdentity) {
  Rng rng(2);
  auto img = random_image(3, 12, 12, rng);
  EXPECT_EQ(hflip(hflip(img)), img);
  EXPECT_NE(hflip(img), img);
}

TEST(FlipCrop, AreaAndAspectConstraintsHold) {
  AugmentConfig cfg;
  double min_area = 1.0, min_aspect = 10, max_aspect = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    auto rec = sample_flip_crop(64, 64, cfg, rng);
    const double area = static_cast<double>(rec.box.width * rec.box.height) / (64.0 * 64.0);
    const double aspect = static_cast<double>(rec.box.width) / static_cast<double>(rec.box.height);
    min_area = std::min(min_area, area);
    min_aspect = std::min(min_aspect, aspect);
    max_aspect = std::max(max_aspect, aspect);
    EXPECT_LE(rec.box.x0 + rec.box.width, 64u);
    EXPECT_LE(rec.box.y0 + rec.box.height, 64u);
  }
  EXPECT_GE(min_area, 0.5);
  EXPECT_GE(min_aspect, 0.75);
  EXPECT_LE(max_aspect, 1.3334);
}

TEST(FlipCrop, MaskFollowsImageGeometry) {
  Rng src(3);
  auto img = random_image(3, 32, 32, src);
  auto mask = disk_mask(32, 32, 10, 14, 6);
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto r = random_flip_crop(img, &mask, cfg, rng);
    ASSERT_TRUE(r.mask.has_value());
    EXPECT_EQ(*r.mask, apply_flip_crop(mask, r.record, true));
    EXPECT_EQ(r.image, apply_flip_crop(img, r.record, false));
    EXPECT_EQ(r.image.height, 32u);
    EXPECT_TRUE(in_unit_range(r.image));
    for (float v : r.mask->data) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  }
}

TEST(FlipCrop, TransformThenExtractEqualsExtractThenTransform) {
  // full-frame crops keep the comparison exact: the image channel carrying the
  // mask and the mask itself must move together
  AugmentConfig cfg;
  cfg.crop_min_area = 1.0;
  auto mask = disk_mask(16, 16, 4, 7, 3);
  Image img(3, 16, 16, 0.2f);
  std::copy(mask.data.begin(), mask.data.end(), img.data.begin());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto r = random_flip_crop(img, &mask, cfg, rng);
    Image channel0(1, 16, 16);
    std::copy(r.image.data.begin(), r.image.data.begin() + 256, channel0.data.begin());
    EXPECT_EQ(channel0, *r.mask);
  }
}

TEST(FlipCrop, MismatchedMaskRejected) {
  Rng rng(4);
  auto img = random_image(3, 8, 8, rng);
  Image mask(1, 8, 9);
  expect_error([&] { random_flip_crop(img, &mask, AugmentConfig{}, rng); }, "augment", "shape");
}

TEST(Config, Validation) {
  AugmentConfig c;
  c.crop_min_area = 0.0;
  expect_error([&] { c.validate(); }, "augment", "config");
  c = AugmentConfig{};
  c.aspect_min = 1.1;
  expect_error([&] { c.validate(); }, "augment", "config");
  c = AugmentConfig{};
  c.mask_area_fraction = 1.0;
  expect_error([&] { c.validate(); }, "augment", "config");
}

TEST(Jitter, ZeroStrengthIsIdentity) {
  Rng src(5);
  auto img = random_image(3, 8, 8, src);
  auto cfg = no_photometric();
  Rng rng(6);
  EXPECT_EQ(color_jitter(img, cfg, rng).image, img);
}

TEST(Jitter, BrightnessDoublesGray) {
  Image gray(3, 4, 4, 0.25f);
  JitterRecord rec;
  rec.brightness = 2.0;
  auto out = apply_jitter(gray, rec);
  for (float v : out.data) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Jitter, DefaultStrengthsChangeImages) {
  Rng src(7);
  auto img = random_image(3, 16, 16, src);
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto out = color_jitter(img, cfg, rng).image;
    std::size_t changed = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i) changed += out.data[i] != img.data[i];
    EXPECT_GE(static_cast<double>(changed), 0.01 * static_cast<double>(img.data.size())) << seed;
    EXPECT_TRUE(in_unit_range(out));
  }
}

TEST(Jitter, RecordReplaysTheDraw) {
  Rng src(8);
  auto img = random_image(3, 8, 8, src);
  AugmentConfig cfg;
  cfg.hue = 0.1;
  Rng rng(9);
  auto r = color_jitter(img, cfg, rng);
  EXPECT_EQ(apply_jitter(img, r.record), r.image);
}

TEST(Jitter, RequiresRgb) {
  Rng rng(10);
  expect_error([&] { color_jitter(Image(1, 4, 4), AugmentConfig{}, rng); }, "augment", "not_rgb");
}

TEST(Masks, ZeroCountLeavesImage) {
  Rng src(11);
  auto img = random_image(3, 16, 16, src);
  AugmentConfig cfg;
  cfg.mask_count = 0;
  Rng rng(12);
  auto r = apply_masks(img, cfg, rng);
  EXPECT_EQ(r.masked, img);
  EXPECT_EQ(mask_count(r.map), 0u);
}

TEST(Masks, MaskedEqualsImageTimesComplement) {
  Rng src(13);
  auto img = random_image(3, 32, 32, src);
  Rng rng(14);
  auto r = apply_masks(img, AugmentConfig{}, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 1024; ++i) {
      EXPECT_EQ(r.masked.data[c * 1024 + i], img.data[c * 1024 + i] * (1.0f - r.map.data[i]));
    }
  }
  for (float v : r.map.data) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(Masks, CoverageNearConfiguredFraction) {
  AugmentConfig cfg;
  Image img(3, 64, 64, 0.5f);
  double total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const double f = mask_fraction(apply_masks(img, cfg, rng).map);
    EXPECT_GE(f, 0.8 * cfg.mask_area_fraction) << seed;
    EXPECT_LE(f, 1.2 * cfg.mask_area_fraction) << seed;
    total += f;
  }
  const double mean = total / 100.0;
  EXPECT_GE(mean, 0.8 * cfg.mask_area_fraction);
  EXPECT_LE(mean, 1.2 * cfg.mask_area_fraction);
}

TEST(ConRecBatch, DegenerateConfigCollapsesTargets) {
  Rng src(15);
  auto a = random_image(3, 16, 16, src), b = random_image(3, 16, 16, src);
  auto cfg = no_photometric();
  Rng rng(16);
  auto views = make_conrec_batch({&a, &b}, cfg, rng);
  ASSERT_EQ(views.size(), 4u);
  for (const auto& v : views) {
    EXPECT_EQ(v.target_b, v.target_c);
    EXPECT_EQ(v.target_e, v.target_c);
    EXPECT_EQ(v.input_view, v.target_c);
    EXPECT_EQ(mask_count(v.target_d), 0u);
  }
}

TEST(ConRecBatch, TargetInvariants) {
  Rng src(17);
  auto a = random_image(3, 32, 32, src), b = random_image(3, 32, 32, src);
  Rng rng(18);
  auto views = make_conrec_batch({&a, &b}, AugmentConfig{}, rng);
  ASSERT_EQ(views.size(), 4u);
  for (const auto& v : views) {
    const std::size_t P = 32 * 32;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < P; ++i) {
        const float e = v.target_e.data[c * P + i];
        if (v.target_d.data[i] > 0.5f) {
          EXPECT_EQ(e, 0.0f);
        } else {
          EXPECT_EQ(e, v.target_b.data[c * P + i]);
        }
      }
    }
    EXPECT_EQ(v.input_view, v.target_e);
    for (float d : v.target_d.data) EXPECT_TRUE(d == 0.0f || d == 1.0f);
    EXPECT_TRUE(in_unit_range(v.target_b));
    EXPECT_TRUE(in_unit_range(v.target_c));
  }
  // the two views of one image come from independent draws
  EXPECT_NE(views[0].target_c, views[1].target_c);
}

TEST(ConRecBatch, UnjitteredTargetBOption) {
  Rng src(19);
  auto a = random_image(3, 16, 16, src);
  AugmentConfig cfg;
  cfg.target_b_jittered = false;
  Rng rng(20);
  for (const auto& v : make_conrec_batch({&a}, cfg, rng)) EXPECT_EQ(v.target_b, v.target_c);
}

TEST(ConRecBatch, FixedSeedReproducible) {
  Rng src(21);
  auto a = random_image(3, 16, 16, src);
  Rng r1(22), r2(22);
  auto x = make_conrec_batch({&a}, AugmentConfig{}, r1);
  auto y = make_conrec_batch({&a}, AugmentConfig{}, r2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].input_view, y[i].input_view);
    EXPECT_EQ(x[i].target_b, y[i].target_b);
    EXPECT_EQ(x[i].target_c, y[i].target_c);
    EXPECT_EQ(x[i].target_d, y[i].target_d);
    EXPECT_EQ(x[i].target_e, y[i].target_e);
  }
  Rng r3(0);
  expect_error([&] { make_conrec_batch({}, AugmentConfig{}, r3); }, "augment", "empty_batch");
}
