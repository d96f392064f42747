#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "segxfer/augment/augment.hpp"
#include "segxfer/datagen/dataset.hpp"
#include "segxfer/harness/runlog.hpp"
#include "segxfer/losses.hpp"
#include "segxfer/tensor/optim.hpp"
#include "segxfer/unet/unet.hpp"

namespace segxfer::harness {

enum class PretextTask { simclr, recon, conrec, cls, seg };

inline constexpr std::array<const char*, 5> kPretextNames = {"simclr", "recon", "conrec", "cls", "seg"};

inline const char* pretext_name(PretextTask t) { return kPretextNames[static_cast<std::size_t>(t)]; }

inline PretextTask parse_pretext(const std::string& s) {
  for (std::size_t i = 0; i < kPretextNames.size(); ++i) {
    if (s == kPretextNames[i]) return static_cast<PretextTask>(i);
  }
  fail("harness", "unknown_task", "unknown pretext task '" + s + "'");
}

struct TrainSettings {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  std::size_t eval_period = 2;
  std::size_t eval_batch = 64;
  AdamConfig optim;
  double temperature = 0.5;
  double dice_eps = 1.0;
  losses::ConRecWeights conrec;
  augment::AugmentConfig augment;
  bool supervised_augment = true;  // flip/crop in seg, cls and finetune training steps
  bool wallclock = true;

  void validate() const {
    if (epochs == 0) fail("harness", "config", "epochs must be >= 1");
    if (batch_size < 2) fail("harness", "config", "batch_size must be >= 2 (batch norm)");
    if (eval_period == 0) fail("harness", "config", "eval_period must be >= 1");
    if (eval_batch == 0) fail("harness", "config", "eval_batch must be >= 1");
    if (!(temperature > 0)) fail("harness", "config", "temperature must be positive");
    if (!(dice_eps > 0)) fail("harness", "config", "dice_eps must be positive");
    if (!(optim.lr > 0)) fail("harness", "config", "learning rate must be positive");
    conrec.validate();
    augment.validate();
  }
};

/// Subtrees that receive gradient updates for a pretext objective.
inline std::vector<std::string> trained_prefixes(PretextTask t, const losses::ConRecWeights& w = {}) {
  switch (t) {
    case PretextTask::seg: return {"encoder/", "decoder/", "heads/seg/"};
    case PretextTask::cls: return {"encoder/", "heads/cls/"};
    case PretextTask::simclr: return {"encoder/", "heads/proj/"};
    case PretextTask::recon: return {"encoder/", "decoder/", "heads/recon_b/"};
    case PretextTask::conrec: {
      std::vector<std::string> out = {"encoder/"};
      if (w.lambda_contrastive > 0) out.push_back("heads/proj/");
      bool shared_decoder = false;
      for (std::size_t h = 0; h < 4; ++h) {
        if (w.head[h] <= 0) continue;
        shared_decoder = true;
        out.push_back(std::string("heads/recon_") + unet::kReconHeads[h] + "/");
      }
      if (shared_decoder) out.insert(out.begin() + 1, "decoder/");
      return out;
    }
  }
  return {};
}

/// Parameters of `tree` under any of `prefixes`, sorted.
inline std::vector<std::string> params_under(const ParamTree<float>& tree,
                                             const std::vector<std::string>& prefixes) {
  std::vector<std::string> out;
  for (const auto& [name, t] : tree.params) {
    for (const auto& p : prefixes) {
      if (has_prefix(name, p)) {
        out.push_back(name);
        break;
      }
    }
  }
  return out;
}

/// A conrec run with head b switched off never touches the last decoder
/// block; such names are dropped from the optimizer after the first step.
inline std::vector<std::string> drop_unreached(const ParamTree<float>& tree,
                                               std::vector<std::string> names) {
  std::erase_if(names, [&](const std::string& n) { return !tree.param(n).has_grad(); });
  return names;
}

/// Shuffled minibatches of indices into [0, n). A trailing batch of one
/// example is dropped because batch norm needs two.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    const std::size_t stop = std::min(n, i + batch);
    if (stop - i < 2) break;
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (out.empty()) fail("harness", "too_few_samples", "need at least 2 training samples per batch");
  return out;
}

/// Train and eval partitions of a dataset, by split tag.
struct Partition {
  std::vector<const datagen::Sample*> train;
  std::vector<const datagen::Sample*> eval;
};

inline Partition partition(const std::vector<datagen::Sample>& samples) {
  Partition p;
  for (const auto& s : samples) {
    if (s.split == datagen::Split::train) p.train.push_back(&s);
    if (s.split == datagen::Split::eval) p.eval.push_back(&s);
  }
  if (p.train.empty()) fail("harness", "empty_split", "dataset has no train samples");
  if (p.eval.empty()) fail("harness", "empty_split", "dataset has no eval samples");
  return p;
}

/// Fails when the same sample object, or an identical image, sits in both splits.
inline void assert_disjoint(const std::vector<const datagen::Sample*>& train,
                            const std::vector<const datagen::Sample*>& eval) {
  std::set<const datagen::Sample*> ptrs(train.begin(), train.end());
  std::set<std::vector<float>> images;
  for (const auto* s : train) images.insert(s->image.data);
  for (const auto* s : eval) {
    if (ptrs.count(s) || images.count(s->image.data)) {
      fail("harness", "split_overlap", "an evaluation sample also appears in the training split");
    }
  }
}

namespace detail {

inline std::vector<const Image*> images_of(const std::vector<const datagen::Sample*>& batch) {
  std::vector<const Image*> out;
  for (const auto* s : batch) out.push_back(&s->image);
  return out;
}

inline std::vector<const Image*> masks_of(const std::vector<const datagen::Sample*>& batch) {
  std::vector<const Image*> out;
  for (const auto* s : batch) {
    if (s->mask.empty()) fail("harness", "missing_mask", "segmentation needs masks");
    out.push_back(&s->mask);
  }
  return out;
}

/// Supervised batch after the training-time flip and crop. The same crop is
/// applied to image and mask.
struct SupervisedBatch {
  std::vector<Image> images;
  std::vector<Image> masks;
};

inline SupervisedBatch flip_crop_batch(const std::vector<const datagen::Sample*>& batch,
                                       const augment::AugmentConfig& cfg, Rng& rng, bool with_masks) {
  SupervisedBatch out;
  for (const auto* s : batch) {
    if (with_masks && s->mask.empty()) fail("harness", "missing_mask", "segmentation needs masks");
    auto r = augment::random_flip_crop(s->image, with_masks ? &s->mask : nullptr, cfg, rng);
    out.images.push_back(std::move(r.image));
    if (with_masks) out.masks.push_back(std::move(*r.mask));
  }
  return out;
}

/// Two flip/crop + jitter views per image, paired as rows (2k, 2k+1).
inline std::vector<Image> simclr_views(const std::vector<const Image*>& images,
                                       const augment::AugmentConfig& cfg, Rng& rng) {
  std::vector<Image> out;
  for (const Image* img : images) {
    const std::uint64_t stream = rng();
    for (std::uint64_t v = 0; v < 2; ++v) {
      Rng view_rng(derive_seed(stream, v));
      auto fc = augment::random_flip_crop(*img, nullptr, cfg, view_rng);
      out.push_back(augment::color_jitter(fc.image, cfg, view_rng).image);
    }
  }
  return out;
}

class Clock {
 public:
  explicit Clock(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

/// Remembers recent finite losses for the NaN diagnostic.
class LossWatch {
 public:
  void check(double loss, std::size_t epoch, std::size_t step) {
    if (!std::isfinite(loss)) {
      std::string recent;
      for (double v : recent_) recent += " " + std::to_string(v);
      if (recent.empty()) recent = " none";
      fail("harness", "nan_loss", "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                      std::to_string(step) + "; last finite losses:" + recent);
    }
    recent_.push_back(loss);
    if (recent_.size() > 5) recent_.pop_front();
  }

 private:
  std::deque<double> recent_;
};

}  // namespace detail

/// Loss of one pretext batch. `rng` feeds augmentation.
inline Tensor<float> pretext_loss(PretextTask task, const unet::UNetConfig& cfg,
                                  ParamTree<float>& p, Tape<float>& tape,
                                  const std::vector<const datagen::Sample*>& batch,
                                  const TrainSettings& s, Rng& rng, Mode mode) {
  const auto images = detail::images_of(batch);
  const auto tau = static_cast<float>(s.temperature);
  switch (task) {
    case PretextTask::seg: {
      if (mode == Mode::train && s.supervised_augment) {
        const auto aug = detail::flip_crop_batch(batch, s.augment, rng, true);
        auto pred = unet::forward_segmentation(cfg, p, tape, to_batch<float>(aug.images), mode);
        return losses::dice_loss(tape, pred, to_batch<float>(aug.masks), static_cast<float>(s.dice_eps));
      }
      auto pred = unet::forward_segmentation(cfg, p, tape, to_batch<float>(images), mode);
      return losses::dice_loss(tape, pred, to_batch<float>(detail::masks_of(batch)),
                               static_cast<float>(s.dice_eps));
    }
    case PretextTask::cls: {
      std::vector<int> labels;
      for (const auto* smp : batch) {
        if (smp->label < 0) fail("harness", "missing_label", "classification needs labels");
        labels.push_back(smp->label);
      }
      if (mode == Mode::train && s.supervised_augment) {
        const auto aug = detail::flip_crop_batch(batch, s.augment, rng, false);
        auto logits = unet::forward_classification(cfg, p, tape, to_batch<float>(aug.images), mode);
        return softmax_cross_entropy(tape, logits, labels);
      }
      auto logits = unet::forward_classification(cfg, p, tape, to_batch<float>(images), mode);
      return softmax_cross_entropy(tape, logits, labels);
    }
    case PretextTask::simclr: {
      auto views = detail::simclr_views(images, s.augment, rng);
      auto emb = unet::forward_embedding(cfg, p, tape, to_batch<float>(views), mode);
      return losses::ntxent_loss(tape, emb, tau);
    }
    case PretextTask::recon: {
      std::vector<Image> inputs, targets;
      for (const Image* img : images) {
        Rng view_rng(rng());
        auto v = augment::make_view(*img, s.augment, view_rng);
        inputs.push_back(std::move(v.input_view));
        targets.push_back(std::move(v.target_c));
      }
      auto pred = unet::forward_reconstruction(cfg, p, tape, to_batch<float>(inputs), mode);
      return losses::recon_loss(tape, pred, to_batch<float>(targets));
    }
    case PretextTask::conrec: {
      auto views = augment::make_conrec_batch(images, s.augment, rng);
      std::vector<const Image*> in, tb, tc, td, te;
      for (const auto& v : views) {
        in.push_back(&v.input_view);
        tb.push_back(&v.target_b);
        tc.push_back(&v.target_c);
        td.push_back(&v.target_d);
        te.push_back(&v.target_e);
      }
      auto out = unet::forward_conrec(cfg, p, tape, to_batch<float>(in), mode);
      const std::array<Tensor<float>, 4> targets = {to_batch<float>(tb), to_batch<float>(tc),
                                                    to_batch<float>(td), to_batch<float>(te)};
      return losses::conrec_loss(tape, out.embed, out.recon, targets, s.conrec, tau);
    }
  }
  fail("harness", "unknown_task", "unhandled pretext");
}

/// Sample-weighted mean pretext loss over `eval` in eval mode. Augmented
/// views come from a fixed stream so successive evaluations are comparable.
inline double pretext_eval_loss(PretextTask task, const unet::UNetConfig& cfg,
                                ParamTree<float>& p, const std::vector<const datagen::Sample*>& eval,
                                const TrainSettings& s, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "eval-views"));
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < eval.size(); i += s.eval_batch) {
    const std::vector<const datagen::Sample*> batch(
        eval.begin() + static_cast<std::ptrdiff_t>(i),
        eval.begin() + static_cast<std::ptrdiff_t>(std::min(eval.size(), i + s.eval_batch)));
    Tape<float> tape(false);
    const double l = pretext_loss(task, cfg, p, tape, batch, s, rng, Mode::eval).item();
    total += l * static_cast<double>(batch.size());
    count += batch.size();
  }
  return total / static_cast<double>(count);
}

struct DiceEval {
  double soft = 0;
  double thr = 0;
};

/// Mean per-sample soft and thresholded (0.5) dice in eval mode.
inline DiceEval evaluate_dice(const unet::UNetConfig& cfg, ParamTree<float>& p,
                              const std::vector<const datagen::Sample*>& eval, double eps,
                              std::size_t batch_size = 64) {
  DiceEval out;
  for (std::size_t i = 0; i < eval.size(); i += batch_size) {
    const std::vector<const datagen::Sample*> batch(
        eval.begin() + static_cast<std::ptrdiff_t>(i),
        eval.begin() + static_cast<std::ptrdiff_t>(std::min(eval.size(), i + batch_size)));
    Tape<float> tape(false);
    auto pred = unet::forward_segmentation(cfg, p, tape, to_batch<float>(detail::images_of(batch)),
                                           Mode::eval);
    auto target = to_batch<float>(detail::masks_of(batch));
    for (double d : losses::dice_scores(pred, target, eps)) out.soft += d;
    for (double d : losses::dice_scores(pred, target, eps, 0.5)) out.thr += d;
  }
  out.soft /= static_cast<double>(eval.size());
  out.thr /= static_cast<double>(eval.size());
  return out;
}

struct PretrainOutcome {
  ParamTree<float> model;  // weights of the best evaluation epoch
  std::vector<PretrainRecord> log;
  std::size_t best_epoch = 0;
  double best_eval_loss = std::numeric_limits<double>::infinity();
  std::vector<std::string> trained;        // prefixes
  std::vector<std::string> optimized;      // parameter names held by the optimizer
};

inline bool is_eval_epoch(std::size_t epoch, const TrainSettings& s) {
  return epoch % s.eval_period == 0 || epoch == s.epochs;
}

/// Trains one pretext objective from a fresh model and keeps the weights of
/// the epoch with the lowest evaluation loss.
inline PretrainOutcome pretrain(const unet::UNetConfig& cfg, PretextTask task,
                                const std::vector<const datagen::Sample*>& train,
                                const std::vector<const datagen::Sample*>& eval,
                                const TrainSettings& s, std::uint64_t seed) {
  s.validate();
  assert_disjoint(train, eval);
  PretrainOutcome out;
  ParamTree<float> p = unet::build<float>(cfg, derive_seed(seed, "init"));
  out.trained = trained_prefixes(task, s.conrec);
  out.optimized = params_under(p, out.trained);
  std::optional<OptimizerState<float>> opt;
  detail::Clock clock(s.wallclock);
  detail::LossWatch watch;
  for (std::size_t epoch = 1; epoch <= s.epochs; ++epoch) {
    Rng order(derive_seed(seed, "order", epoch));
    Rng aug(derive_seed(seed, "augment", epoch));
    double sum = 0;
    std::size_t seen = 0, step = 0;
    for (const auto& idx : minibatches(train.size(), s.batch_size, order)) {
      std::vector<const datagen::Sample*> batch;
      for (auto i : idx) batch.push_back(train[i]);
      Tape<float> tape;
      auto loss = pretext_loss(task, cfg, p, tape, batch, s, aug, Mode::train);
      watch.check(loss.item(), epoch, ++step);
      tape.backward(loss);
      if (!opt) {
        if (task == PretextTask::conrec) out.optimized = drop_unreached(p, out.optimized);
        opt.emplace(p, out.optimized, s.optim);
      }
      adam_step(p, *opt);
      sum += loss.item() * static_cast<double>(batch.size());
      seen += batch.size();
    }
    if (!is_eval_epoch(epoch, s)) continue;
    const double eval_loss = pretext_eval_loss(task, cfg, p, eval, s, seed);
    watch.check(eval_loss, epoch, 0);
    out.log.push_back({seed, epoch, sum / static_cast<double>(seen), eval_loss, clock.seconds()});
    if (eval_loss < out.best_eval_loss) {
      out.best_eval_loss = eval_loss;
      out.best_epoch = epoch;
      out.model = p.clone();
    }
  }
  return out;
}

struct FinetuneOutcome {
  ParamTree<float> model;  // final-epoch weights
  std::vector<RunRecord> log;
  DiceEval final_dice;
};

/// Dice finetuning of a prepared starting tree; reports the final epoch.
inline FinetuneOutcome finetune(const unet::UNetConfig& cfg, const ParamTree<float>& init,
                                const std::vector<const datagen::Sample*>& train,
                                const std::vector<const datagen::Sample*>& eval,
                                const TrainSettings& s, std::uint64_t seed) {
  s.validate();
  assert_disjoint(train, eval);
  FinetuneOutcome out;
  out.model = init.clone();
  ParamTree<float>& p = out.model;
  OptimizerState<float> opt(p, params_under(p, trained_prefixes(PretextTask::seg)), s.optim);
  detail::Clock clock(s.wallclock);
  detail::LossWatch watch;
  const auto eps = static_cast<float>(s.dice_eps);
  for (std::size_t epoch = 1; epoch <= s.epochs; ++epoch) {
    Rng order(derive_seed(seed, "finetune-order", epoch));
    Rng aug(derive_seed(seed, "augment", epoch));
    double sum = 0;
    std::size_t seen = 0, step = 0;
    for (const auto& idx : minibatches(train.size(), s.batch_size, order)) {
      std::vector<const datagen::Sample*> batch;
      for (auto i : idx) batch.push_back(train[i]);
      Tape<float> tape;
      Tensor<float> pred, target;
      if (s.supervised_augment) {
        const auto views = detail::flip_crop_batch(batch, s.augment, aug, true);
        pred = unet::forward_segmentation(cfg, p, tape, to_batch<float>(views.images), Mode::train);
        target = to_batch<float>(views.masks);
      } else {
        pred = unet::forward_segmentation(cfg, p, tape, to_batch<float>(detail::images_of(batch)),
                                          Mode::train);
        target = to_batch<float>(detail::masks_of(batch));
      }
      auto loss = losses::dice_loss(tape, pred, target, eps);
      watch.check(loss.item(), epoch, ++step);
      tape.backward(loss);
      adam_step(p, opt);
      sum += loss.item() * static_cast<double>(batch.size());
      seen += batch.size();
    }
    if (!is_eval_epoch(epoch, s)) continue;
    const auto d = evaluate_dice(cfg, p, eval, s.dice_eps, s.eval_batch);
    out.log.push_back({seed, epoch, sum / static_cast<double>(seen), d.soft, d.thr, clock.seconds()});
    out.final_dice = d;
  }
  return out;
}

}  // namespace segxfer::harness
