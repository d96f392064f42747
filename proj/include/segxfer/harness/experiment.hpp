#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "segxfer/cka.hpp"
#include "segxfer/datagen/io.hpp"
#include "segxfer/harness/config.hpp"
#include "segxfer/harness/report.hpp"
#include "segxfer/harness/training.hpp"
#include "segxfer/transfer/checkpoint.hpp"
#include "segxfer/transfer/scenario.hpp"

namespace segxfer::harness {

namespace fs = std::filesystem;

/// `unet.*` keys. Input size and class count default to what the dataset holds.
inline unet::UNetConfig unet_from(const Config& c, std::size_t image_size, std::size_t classes = 2) {
  unet::UNetConfig u;
  u.depth = c.get_uint("unet.depth", u.depth);
  u.base_channels = c.get_uint("unet.base_channels", u.base_channels);
  u.embed_dim = c.get_uint("unet.embed_dim", u.embed_dim);
  u.num_classes = c.get_uint("unet.num_classes", classes);
  u.input_size = c.get_uint("unet.input_size", image_size);
  u.validate();
  return u;
}

inline augment::AugmentConfig augment_from(const Config& c) {
  augment::AugmentConfig a;
  a.flip_prob = c.get_double("augment.flip_prob", a.flip_prob);
  a.crop_min_area = c.get_double("augment.crop_min_area", a.crop_min_area);
  a.aspect_min = c.get_double("augment.aspect_min", a.aspect_min);
  a.aspect_max = c.get_double("augment.aspect_max", a.aspect_max);
  a.brightness = c.get_double("augment.brightness", a.brightness);
  a.contrast = c.get_double("augment.contrast", a.contrast);
  a.saturation = c.get_double("augment.saturation", a.saturation);
  a.hue = c.get_double("augment.hue", a.hue);
  a.mask_count = c.get_uint("augment.mask_count", a.mask_count);
  a.mask_area_fraction = c.get_double("augment.mask_area_fraction", a.mask_area_fraction);
  a.target_b_jittered = c.get_bool("augment.target_b_jittered", a.target_b_jittered);
  a.validate();
  return a;
}

/// `train.*`, `optim.*`, `loss.*`, `conrec.*` and `augment.*` keys.
inline TrainSettings train_from(const Config& c) {
  TrainSettings s;
  s.epochs = c.get_uint("train.epochs", s.epochs);
  s.batch_size = c.get_uint("train.batch_size", s.batch_size);
  s.eval_period = c.get_uint("train.eval_period", s.eval_period);
  s.eval_batch = c.get_uint("train.eval_batch", s.eval_batch);
  s.wallclock = c.get_bool("train.wallclock", s.wallclock);
  s.supervised_augment = c.get_bool("augment.supervised", s.supervised_augment);
  s.optim.lr = c.get_double("optim.lr", s.optim.lr);
  s.optim.beta1 = c.get_double("optim.beta1", s.optim.beta1);
  s.optim.beta2 = c.get_double("optim.beta2", s.optim.beta2);
  s.optim.eps = c.get_double("optim.eps", s.optim.eps);
  s.temperature = c.get_double("loss.temperature", s.temperature);
  s.dice_eps = c.get_double("loss.dice_eps", s.dice_eps);
  s.conrec.lambda_contrastive = c.get_double("conrec.lambda", s.conrec.lambda_contrastive);
  for (std::size_t h = 0; h < 4; ++h) {
    const std::string key = std::string("conrec.weight_") + unet::kReconHeads[h];
    s.conrec.head[h] = c.get_double(key, s.conrec.head[h]);
  }
  s.augment = augment_from(c);
  s.validate();
  return s;
}

/// `dataset.*` keys; `--seed` replaces dataset.seed.
inline datagen::DatasetSpec dataset_from(const Config& c, std::optional<std::uint64_t> seed) {
  datagen::DatasetSpec d;
  d.task = datagen::parse_task_kind(c.get("dataset.task", "segmentation"));
  d.kind = datagen::parse_kind(c.get("dataset.kind", "disk"));
  for (const auto& k : c.get_list("dataset.kinds", {})) d.kinds.push_back(datagen::parse_kind(k));
  d.n_samples = c.get_uint("dataset.n_samples", d.n_samples);
  d.image_size = c.get_uint("dataset.image_size", d.image_size);
  d.min_objects = c.get_uint("dataset.min_objects", d.min_objects);
  d.max_objects = c.get_uint("dataset.max_objects", d.max_objects);
  d.positive_fraction = c.get_double("dataset.positive_fraction", d.positive_fraction);
  d.seed = seed.value_or(c.get_uint("dataset.seed", d.seed));
  d.validate();
  return d;
}

/// Re-splits `samples` when `split.train_fraction` is set; the stored split
/// tags are used otherwise.
inline void resplit_from(const Config& c, std::vector<datagen::Sample>& samples) {
  if (!c.has("split.train_fraction")) return;
  const double fraction = c.get_double("split.train_fraction", 0.0);
  datagen::assign_splits(samples,
                         datagen::split_indices(samples.size(), fraction, c.get_uint("split.seed", 0)));
}

/// Eval partition capped to `split.max_eval` samples (0 keeps all).
inline Partition partition_from(const Config& c, const std::vector<datagen::Sample>& samples) {
  Partition p = partition(samples);
  const std::size_t cap = c.get_uint("split.max_eval", 0);
  if (cap > 0 && p.eval.size() > cap) p.eval.resize(cap);
  return p;
}

inline std::size_t image_size_of(const std::vector<datagen::Sample>& samples) {
  if (samples.empty()) fail("harness", "empty_dataset", "dataset has no samples");
  return samples.front().image.height;
}

inline std::size_t label_count(const std::vector<datagen::Sample>& samples) {
  int top = 1;
  for (const auto& s : samples) top = std::max(top, s.label);
  return static_cast<std::size_t>(top) + 1;
}

inline std::vector<datagen::Sample> load_data(const Config& c, const std::string& key) {
  return datagen::load_dataset(fs::path(c.require(key)));
}

// Commands. Each reads its keys, rejects unknown ones, writes under `out`
// and prints a short human summary to `log`.

struct DatagenResult {
  std::size_t n_samples = 0;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  std::size_t n_positive = 0;  // classification only
};

inline DatagenResult cmd_datagen(const Config& c, std::optional<std::uint64_t> seed, const fs::path& out,
                                 std::ostream& log) {
  const auto spec = dataset_from(c, seed);
  const std::string select = c.get("dataset.select", "");
  std::vector<datagen::Sample> data =
      select.empty() ? datagen::make_dataset(spec)
                     : datagen::select_segmentation(spec, datagen::parse_kind(select));
  const double fraction = c.get_double("split.train_fraction", 0.8);
  const std::uint64_t split_seed = c.get_uint("split.seed", spec.seed);
  c.check_all_used();
  datagen::assign_splits(data, datagen::split_indices(data.size(), fraction, split_seed));
  datagen::save_dataset(data, out);
  DatagenResult r;
  r.n_samples = data.size();
  for (const auto& s : data) {
    r.n_train += s.split == datagen::Split::train;
    r.n_eval += s.split == datagen::Split::eval;
    r.n_positive += s.label == 1;
  }
  log << "datagen: " << r.n_samples << " " << datagen::task_kind_name(spec.task) << " samples ("
      << r.n_train << " train, " << r.n_eval << " eval)";
  if (spec.task == datagen::TaskKind::classification) log << ", " << r.n_positive << " positive";
  log << " -> " << out.string() << "\n";
  return r;
}

inline PretrainOutcome cmd_pretrain(const Config& c, std::optional<std::uint64_t> seed, const fs::path& out,
                                    std::ostream& log) {
  const auto task = parse_pretext(c.require("task"));
  auto data = load_data(c, "data");
  resplit_from(c, data);
  const auto ucfg = unet_from(c, image_size_of(data), label_count(data));
  const auto settings = train_from(c);
  const std::uint64_t run_seed = seed.value_or(c.get_uint("seed", 0));
  const auto part = partition_from(c, data);
  c.check_all_used();
  auto result = pretrain(ucfg, task, part.train, part.eval, settings, run_seed);
  transfer::save_checkpoint(result.model, out / "checkpoint.sxl", pretext_name(task), c.echo(),
                            result.trained);
  write_text(out / "pretrain_log.csv", pretrain_log_csv(result.log));
  char buf[128];
  std::snprintf(buf, sizeof(buf), "best epoch %zu, eval loss %.6f", result.best_epoch,
                result.best_eval_loss);
  log << "pretrain " << pretext_name(task) << " seed " << run_seed << ": " << buf << " -> "
      << (out / "checkpoint.sxl").string() << "\n";
  return result;
}

struct FinetuneResult {
  std::vector<RunRecord> log;
  std::vector<DiceEval> finals;  // per seed
  MeanStd thr;
  MeanStd soft;
};

inline FinetuneResult cmd_finetune(const Config& c, std::optional<std::uint64_t> seed, const fs::path& out,
                                   std::ostream& log, std::ostream& warn) {
  const auto scenario = transfer::parse_scenario(c.require("scenario"));
  transfer::ScenarioOptions opt;
  opt.reuse_seg_head = c.get_bool("scenario.reuse_seg_head", false);
  const std::string ck_path = c.get("checkpoint", "");
  auto data = load_data(c, "data");
  resplit_from(c, data);
  const auto ucfg = unet_from(c, image_size_of(data));
  const auto settings = train_from(c);
  const auto seeds = seed ? std::vector<std::uint64_t>{*seed} : c.get_uint_list("seeds", {0});
  const auto part = partition_from(c, data);
  c.check_all_used();
  if (seeds.empty()) fail("harness", "config", "seeds must not be empty");

  transfer::Checkpoint ck;
  if (scenario == transfer::Scenario::random_init) {
    if (!ck_path.empty()) {
      warn << "WARN harness:ignored_checkpoint random-init ignores checkpoint " << ck_path << "\n";
    }
  } else {
    if (ck_path.empty()) {
      fail("harness", "config_missing_key",
           std::string("scenario ") + transfer::scenario_name(scenario) + " needs 'checkpoint'");
    }
    ck = transfer::load_checkpoint(ck_path);
  }

  FinetuneResult r;
  std::vector<double> thr, soft;
  for (auto s : seeds) {
    const auto base = unet::build<float>(ucfg, derive_seed(s, "init"));
    const auto init = transfer::apply_scenario(base, ck, scenario, derive_seed(s, "reinit"), opt);
    auto ft = finetune(ucfg, init, part.train, part.eval, settings, s);
    r.log.insert(r.log.end(), ft.log.begin(), ft.log.end());
    r.finals.push_back(ft.final_dice);
    thr.push_back(ft.final_dice.thr);
    soft.push_back(ft.final_dice.soft);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "seed %llu: thr dice %.4f, soft dice %.4f\n",
                  static_cast<unsigned long long>(s), ft.final_dice.thr, ft.final_dice.soft);
    log << buf;
  }
  r.thr = mean_std(thr);
  r.soft = mean_std(soft);
  write_text(out / "runlog.csv", runlog_csv(r.log));
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s: thr dice %.4f +- %.4f, soft dice %.4f +- %.4f over %zu seed(s)\n",
                transfer::scenario_name(scenario), r.thr.mean, r.thr.std, r.soft.mean, r.soft.std,
                r.thr.n);
  log << buf;
  return r;
}

inline cka::SimilarityMatrix cmd_cka(const Config& c, const fs::path& out, std::ostream& log) {
  const auto models = c.get_list("models", {});
  auto names = c.get_list("names", {});
  auto probe_data = load_data(c, "probe");
  const std::string which = c.get("probe.split", "eval");
  const std::size_t count = c.get_uint("probe.count", 0);
  const auto ucfg = unet_from(c, image_size_of(probe_data));
  c.check_all_used();
  if (models.size() < 2) fail("cka", "too_few_models", "need at least 2 entries in 'models'");
  if (names.empty()) {
    for (const auto& m : models) names.push_back(fs::path(m).parent_path().filename().string());
  }
  if (names.size() != models.size()) fail("harness", "config", "'names' and 'models' differ in length");
  if (which != "eval" && which != "train" && which != "all") {
    fail("harness", "config_value", "probe.split must be eval, train or all");
  }

  std::vector<const Image*> probe;
  for (const auto& s : probe_data) {
    if (which == "all" || datagen::split_name(s.split) == which) probe.push_back(&s.image);
  }
  if (count > 0 && probe.size() > count) probe.resize(count);

  std::vector<cka::FeatureMatrix> features;
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto tree = unet::build<float>(ucfg, 0);
    transfer::load_subtrees(tree, transfer::load_checkpoint(models[i]), {"encoder/"});
    features.push_back(cka::extract_features(ucfg, tree, probe, 32, names[i], c.get("probe", "")));
  }
  auto sim = cka::similarity_matrix(features);
  write_text(out / "cka.csv", cka::to_csv(sim));
  log << "cka: " << models.size() << " models on " << probe.size() << " probe images -> "
      << (out / "cka.csv").string() << "\n";
  return sim;
}

/// `runs` lists RunLog files or directories of them; each file is one
/// configuration named after its stem (directory name for `runlog.csv`).
inline std::vector<ConfigSummary> cmd_report(const Config& c, const fs::path& out, std::ostream& log) {
  const auto runs = c.get_list("runs", {});
  c.check_all_used();
  std::vector<std::pair<std::string, fs::path>> files;
  auto add = [&](const fs::path& p) {
    const std::string name = p.filename() == "runlog.csv" ? p.parent_path().filename().string()
                                                          : p.stem().string();
    files.emplace_back(name, p);
  };
  for (const auto& r : runs) {
    const fs::path p(r);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "runlog.csv") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      for (const auto& f : found) add(f);
    } else {
      add(p);
    }
  }
  if (files.empty()) fail("harness", "no_runlogs", "report needs at least one RunLog");
  std::vector<ConfigSummary> summaries;
  for (const auto& [name, path] : files) summaries.push_back(summarize(name, load_runlog(path)));
  write_text(out / "aggregate.csv", aggregate_csv(summaries));
  write_text(out / "curve.csv", curve_csv(summaries));
  log << format_table(summaries);
  return summaries;
}

}  // namespace segxfer::harness
