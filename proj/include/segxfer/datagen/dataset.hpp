#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "segxfer/datagen/scene.hpp"

namespace segxfer::datagen {

enum class TaskKind { segmentation, classification, multiclass };

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "segmentation") return TaskKind::segmentation;
  if (s == "classification") return TaskKind::classification;
  if (s == "multiclass") return TaskKind::multiclass;
  fail("datagen", "unknown_task", "unknown dataset task '" + s + "'");
}

inline const char* task_kind_name(TaskKind t) {
  switch (t) {
    case TaskKind::segmentation: return "segmentation";
    case TaskKind::classification: return "classification";
    case TaskKind::multiclass: return "multiclass";
  }
  return "?";
}

struct DatasetSpec {
  std::size_t n_samples = 200;
  std::size_t image_size = 64;
  TaskKind task = TaskKind::segmentation;
  ShapeKind kind = ShapeKind::disk;   // target for segmentation / classification
  std::vector<ShapeKind> kinds;       // classes for multiclass
  std::vector<Color> palette;         // empty: random object colours
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  double positive_fraction = 0.20;    // classification: minimum target-pixel share
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples < 1) fail("datagen", "spec", "n_samples must be >= 1");
    if (image_size < 8) fail("datagen", "spec", "image_size must be >= 8");
    if (min_objects < 1 || max_objects < min_objects) {
      fail("datagen", "spec", "object count range is empty");
    }
    if (task == TaskKind::multiclass && kinds.size() < 2) {
      fail("datagen", "spec", "multiclass needs at least two kinds");
    }
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      for (std::size_t j = i + 1; j < kinds.size(); ++j) {
        if (kinds[i] == kinds[j]) fail("datagen", "spec", "duplicate kind in multiclass list");
      }
    }
  }
};

enum class Split { none, train, eval };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::eval: return "eval";
    case Split::none: return "none";
  }
  return "none";
}

struct Sample {
  Image image;
  Image mask;   // 1 x H x W; target-kind pixels (label kind for multiclass)
  int label = -1;
  Split split = Split::none;

  bool operator==(const Sample&) const = default;
};

/// Scene for sample `index`; `attempt` advances the stream when a drawn scene
/// has to be rejected.
inline ShapeScene generate_scene(const DatasetSpec& spec, std::size_t index,
                                 std::size_t attempt = 0) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, index, attempt + 1));
  ShapeScene scene;
  const double ref = static_cast<double>(spec.image_size);
  scene.size = spec.task == TaskKind::classification ? 2 * spec.image_size : spec.image_size;
  scene.background_seed = rng();
  for (auto& c : scene.tint) c = static_cast<float>(uniform(rng, 0.0, 1.0));
  auto count = [&](std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(uniform_int(rng, static_cast<int>(lo), static_cast<int>(hi)));
  };
  auto any_kind = [&] { return static_cast<ShapeKind>(uniform_int(rng, 0, static_cast<int>(kNumKinds) - 1)); };

  switch (spec.task) {
    case TaskKind::segmentation: {
      const std::size_t n = count(spec.min_objects, spec.max_objects);
      scene.objects.push_back(random_object(spec.kind, scene.size, ref, spec.palette, rng));
      for (std::size_t k = 1; k < n; ++k) {
        scene.objects.push_back(random_object(any_kind(), scene.size, ref, spec.palette, rng));
      }
      // random painting order: the target is not always the most occluded
      std::shuffle(scene.objects.begin(), scene.objects.end(), rng);
      break;
    }
    case TaskKind::classification: {
      // positive/negative is decided per sample; the canvas is populated with
      // a couple of target objects either way so negatives are real crops of
      // scenes that do contain the target elsewhere.
      const std::size_t n = count(spec.min_objects + 2, spec.max_objects + 4);
      const std::size_t targets = count(1, 2);
      for (std::size_t k = 0; k < n; ++k) {
        const ShapeKind kind = k < targets ? spec.kind : any_kind();
        scene.objects.push_back(random_object(kind, scene.size, ref, spec.palette, rng));
      }
      std::shuffle(scene.objects.begin(), scene.objects.end(), rng);
      break;
    }
    case TaskKind::multiclass: {
      const auto label = static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(spec.kinds.size()) - 1));
      std::vector<ShapeKind> distractors;
      for (std::size_t k = 0; k < kNumKinds; ++k) {
        const auto sk = static_cast<ShapeKind>(k);
        if (std::find(spec.kinds.begin(), spec.kinds.end(), sk) == spec.kinds.end()) {
          distractors.push_back(sk);
        }
      }
      const std::size_t primary = count(1, 2);
      const std::size_t extra = distractors.empty() ? 0 : count(1, 2);
      for (std::size_t k = 0; k < primary; ++k) {
        scene.objects.push_back(random_object(spec.kinds[label], scene.size, ref, spec.palette, rng));
      }
      for (std::size_t k = 0; k < extra; ++k) {
        const auto d = distractors[static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<int>(distractors.size()) - 1))];
        scene.objects.push_back(random_object(d, scene.size, ref, spec.palette, rng));
      }
      std::shuffle(scene.objects.begin(), scene.objects.end(), rng);
      break;
    }
  }
  return scene;
}

/// Label of a multiclass scene: index in spec.kinds of its class kind.
inline int multiclass_label(const DatasetSpec& spec, const ShapeScene& scene) {
  for (const auto& o : scene.objects) {
    auto it = std::find(spec.kinds.begin(), spec.kinds.end(), o.kind);
    if (it != spec.kinds.end()) return static_cast<int>(it - spec.kinds.begin());
  }
  return -1;
}

namespace detail {

inline Image crop_square(const Image& img, std::size_t x0, std::size_t y0, std::size_t size) {
  Image out(img.channels, size, size);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    }
  }
  return out;
}

inline Sample make_segmentation_sample(const DatasetSpec& spec, std::size_t index) {
  for (std::size_t attempt = 0;; ++attempt) {
    auto scene = generate_scene(spec, index, attempt);
    auto r = render(scene);
    auto& mask = r.kind_masks[static_cast<std::size_t>(spec.kind)];
    if (mask_count(mask) == 0) continue;
    return Sample{std::move(r.image), std::move(mask), -1, Split::none};
  }
}

/// Coin flip decides the label, then crops are drawn until one has no target
/// pixels (negative) or at least `positive_fraction` target pixels
/// (positive). After 100 failed crops the scene is regenerated.
inline Sample make_classification_sample(const DatasetSpec& spec, std::size_t index) {
  Rng label_rng(derive_seed(spec.seed, index, 0));
  const bool positive = coin(label_rng);
  const std::size_t S = spec.image_size;
  const double needed = spec.positive_fraction * static_cast<double>(S * S);
  for (std::size_t attempt = 0;; ++attempt) {
    auto scene = generate_scene(spec, index, attempt);
    auto r = render(scene);
    const Image& full_mask = r.kind_masks[static_cast<std::size_t>(spec.kind)];
    Rng crop_rng(derive_seed(spec.seed ^ 0x5a5a5a5aULL, index, attempt));
    for (int tries = 0; tries < 100; ++tries) {
      const auto x0 = static_cast<std::size_t>(uniform_int(crop_rng, 0, static_cast<int>(scene.size - S)));
      const auto y0 = static_cast<std::size_t>(uniform_int(crop_rng, 0, static_cast<int>(scene.size - S)));
      Image m = crop_square(full_mask, x0, y0, S);
      const auto cnt = static_cast<double>(mask_count(m));
      if ((positive && cnt >= needed) || (!positive && cnt == 0.0)) {
        return Sample{crop_square(r.image, x0, y0, S), std::move(m), positive ? 1 : 0, Split::none};
      }
    }
  }
}

inline Sample make_multiclass_sample(const DatasetSpec& spec, std::size_t index) {
  for (std::size_t attempt = 0;; ++attempt) {
    auto scene = generate_scene(spec, index, attempt);
    const int label = multiclass_label(spec, scene);
    auto r = render(scene);
    auto& mask = r.kind_masks[static_cast<std::size_t>(spec.kinds[static_cast<std::size_t>(label)])];
    if (mask_count(mask) == 0) continue;
    return Sample{std::move(r.image), std::move(mask), label, Split::none};
  }
}

}  // namespace detail

inline Sample make_sample(const DatasetSpec& spec, std::size_t index) {
  switch (spec.task) {
    case TaskKind::segmentation: return detail::make_segmentation_sample(spec, index);
    case TaskKind::classification: return detail::make_classification_sample(spec, index);
    case TaskKind::multiclass: return detail::make_multiclass_sample(spec, index);
  }
  fail("datagen", "unknown_task", "unhandled task");
}

/// All samples of a spec; a pure function of the spec.
inline std::vector<Sample> make_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) out.push_back(make_sample(spec, i));
  return out;
}

/// Segmentation view of labelled scenes: keeps samples where `kind` is
/// visible and swaps in that kind's mask by re-rendering the scene.
inline std::vector<Sample> select_segmentation(const DatasetSpec& spec, ShapeKind kind) {
  if (spec.task != TaskKind::multiclass) {
    fail("datagen", "spec", "select_segmentation expects a multiclass spec");
  }
  std::vector<Sample> out;
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    for (std::size_t attempt = 0;; ++attempt) {
      auto scene = generate_scene(spec, i, attempt);
      const int label = multiclass_label(spec, scene);
      auto r = render(scene);
      const auto& label_mask =
          r.kind_masks[static_cast<std::size_t>(spec.kinds[static_cast<std::size_t>(label)])];
      if (mask_count(label_mask) == 0) continue;
      auto& mask = r.kind_masks[static_cast<std::size_t>(kind)];
      if (mask_count(mask) > 0) out.push_back(Sample{std::move(r.image), std::move(mask), label, Split::none});
      break;
    }
  }
  return out;
}

struct SplitSizes {
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  bool operator==(const SplitSizes&) const = default;
};

/// n_train = round-half-away-from-zero(n_total * fraction).
inline SplitSizes split_fraction(std::size_t n_total, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    fail("datagen", "fraction", "train fraction must be in (0, 1), got " + std::to_string(fraction));
  }
  const auto n_train = static_cast<std::size_t>(std::lround(static_cast<double>(n_total) * fraction));
  if (n_train == 0) {
    fail("datagen", "empty_train", "fraction " + std::to_string(fraction) + " of " +
                                       std::to_string(n_total) + " samples leaves no training data");
  }
  if (n_train >= n_total) {
    fail("datagen", "empty_eval", "fraction " + std::to_string(fraction) + " of " +
                                      std::to_string(n_total) + " samples leaves no evaluation data");
  }
  return {n_train, n_total - n_train};
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// Seeded shuffle, first n_train indices train; both lists returned sorted.
inline SplitIndices split_indices(std::size_t n_total, double fraction, std::uint64_t seed) {
  const auto sizes = split_fraction(n_total, fraction);
  std::vector<std::size_t> idx(n_total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(sizes.n_train));
  out.eval.assign(idx.begin() + static_cast<std::ptrdiff_t>(sizes.n_train), idx.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.eval.begin(), out.eval.end());
  return out;
}

inline void assign_splits(std::vector<Sample>& samples, const SplitIndices& split) {
  for (auto& s : samples) s.split = Split::none;
  for (auto i : split.train) samples.at(i).split = Split::train;
  for (auto i : split.eval) samples.at(i).split = Split::eval;
}

}  // namespace segxfer::datagen
