#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segxfer/transfer/checkpoint.hpp"
#include "segxfer/unet/unet.hpp"

namespace segxfer::transfer {

/// Which parts of a pretrained checkpoint reach the downstream model.
enum class Scenario { random_init, cls_enc, seg_enc_dec, seg_enc };

inline constexpr std::array<const char*, 4> kScenarioNames = {"random-init", "cls-enc",
                                                              "seg-enc-dec", "seg-enc"};

inline const char* scenario_name(Scenario s) { return kScenarioNames[static_cast<std::size_t>(s)]; }

inline Scenario parse_scenario(const std::string& s) {
  for (std::size_t i = 0; i < kScenarioNames.size(); ++i) {
    if (s == kScenarioNames[i]) return static_cast<Scenario>(i);
  }
  fail("transfer", "unknown_scenario", "unknown scenario '" + s + "'");
}

struct ScenarioOptions {
  /// Keep the pretext segmentation head when both pretext and downstream task
  /// are segmentation (seg-enc-dec only). Off by default.
  bool reuse_seg_head = false;
};

inline std::vector<std::string> loaded_prefixes(Scenario s, const ScenarioOptions& opt = {}) {
  switch (s) {
    case Scenario::random_init:
      return {};
    case Scenario::cls_enc:
    case Scenario::seg_enc:
      return {"encoder/"};
    case Scenario::seg_enc_dec:
      if (opt.reuse_seg_head) return {"encoder/", "decoder/", "heads/seg/"};
      return {"encoder/", "decoder/"};
  }
  return {};
}

/// Pretext tasks whose checkpoints each scenario accepts.
inline bool scenario_accepts(Scenario s, const std::string& task) {
  if (task.empty() || s == Scenario::random_init) return true;
  if (s == Scenario::cls_enc) return task == "cls" || task == "simclr";
  return task == "seg" || task == "recon" || task == "conrec";
}

/// Fresh initial values for every tensor under one of `prefixes`, drawn from
/// `seed` exactly as a newly built model would draw them.
template <typename T>
std::vector<std::string> reinitialize(ParamTree<T>& tree, const std::vector<std::string>& prefixes,
                                      std::uint64_t seed) {
  std::vector<std::string> names;
  auto visit = [&](std::map<std::string, Tensor<T>>& table, bool buffer) {
    for (auto& [name, t] : table) {
      const bool hit = std::any_of(prefixes.begin(), prefixes.end(),
                                   [&](const std::string& p) { return has_prefix(name, p); });
      if (!hit) continue;
      t = unet::init_tensor<T>(unet::TensorSpec{name, t.shape(), buffer}, seed);
      names.push_back(name);
    }
  };
  visit(tree.params, false);
  visit(tree.buffers, true);
  std::sort(names.begin(), names.end());
  return names;
}

/// Names that a scenario loads and names it re-initialises. Together they
/// cover the whole tree and never overlap.
struct ScenarioPlan {
  std::vector<std::string> loaded;
  std::vector<std::string> reinitialized;
};

template <typename T>
ScenarioPlan plan_scenario(const ParamTree<T>& model, Scenario s, const ScenarioOptions& opt = {}) {
  const auto prefixes = loaded_prefixes(s, opt);
  ScenarioPlan plan;
  auto visit = [&](const std::map<std::string, Tensor<T>>& table) {
    for (const auto& [name, t] : table) {
      const bool hit = std::any_of(prefixes.begin(), prefixes.end(),
                                   [&](const std::string& p) { return has_prefix(name, p); });
      (hit ? plan.loaded : plan.reinitialized).push_back(name);
    }
  };
  visit(model.params);
  visit(model.buffers);
  std::sort(plan.loaded.begin(), plan.loaded.end());
  std::sort(plan.reinitialized.begin(), plan.reinitialized.end());
  return plan;
}

/// Builds the downstream starting point: loaded prefixes copied bit-for-bit
/// from the checkpoint, everything else (heads, batch-norm statistics
/// included) freshly initialised from `reinit_seed`. The input is untouched.
template <typename T>
ParamTree<T> apply_scenario(const ParamTree<T>& model, const Checkpoint& ck, Scenario s,
                            std::uint64_t reinit_seed, const ScenarioOptions& opt = {}) {
  if (!scenario_accepts(s, ck.task)) {
    fail("transfer", "scenario_mismatch",
         std::string(scenario_name(s)) + " cannot use a '" + ck.task + "' checkpoint");
  }
  ParamTree<T> out = model.clone();
  reinitialize(out, {""}, reinit_seed);
  const auto prefixes = loaded_prefixes(s, opt);
  if (!prefixes.empty()) load_subtrees(out, ck, prefixes);
  return out;
}

}  // namespace segxfer::transfer
