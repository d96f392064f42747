#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "segxfer/error.hpp"
#include "segxfer/harness/runlog.hpp"

namespace segxfer::harness {

struct MeanStd {
  double mean = 0;
  double std = 0;  // population standard deviation
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double s = 0;
  for (double x : xs) s += x;
  out.mean = s / static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return out;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) fail("harness", "empty", "median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

/// Records grouped per seed, each group in epoch order.
inline std::map<std::uint64_t, std::vector<RunRecord>> by_seed(const std::vector<RunRecord>& log) {
  std::map<std::uint64_t, std::vector<RunRecord>> out;
  for (const auto& r : log) out[r.seed].push_back(r);
  for (auto& [seed, rs] : out) {
    std::sort(rs.begin(), rs.end(),
              [](const RunRecord& a, const RunRecord& b) { return a.epoch < b.epoch; });
  }
  return out;
}

/// First epoch whose thresholded dice reaches `fraction` of the run's final
/// thresholded dice. The final record always qualifies when final > 0.
inline std::size_t epochs_to_fraction(const std::vector<RunRecord>& curve, double fraction = 0.9) {
  if (curve.empty()) fail("harness", "empty", "epochs_to_fraction on an empty curve");
  const double goal = fraction * curve.back().thr_dice;
  for (const auto& r : curve) {
    if (r.thr_dice >= goal) return r.epoch;
  }
  return curve.back().epoch;
}

struct CurvePoint {
  std::size_t epoch = 0;
  std::size_t n = 0;
  double soft_dice = 0;
  double thr_dice = 0;
  double train_loss = 0;
};

struct ConfigSummary {
  std::string name;
  std::vector<CurvePoint> curve;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_thr;   // per seed, in seed order
  std::vector<double> final_soft;
  std::vector<double> epochs_to_90;
  MeanStd thr;
  MeanStd soft;
  double median_epochs_to_90 = 0;
};

inline ConfigSummary summarize(const std::string& name, const std::vector<RunRecord>& log) {
  if (log.empty()) fail("harness", "empty", "no records for configuration '" + name + "'");
  ConfigSummary s;
  s.name = name;
  std::map<std::size_t, CurvePoint> points;
  for (const auto& [seed, rs] : by_seed(log)) {
    s.seeds.push_back(seed);
    s.final_thr.push_back(rs.back().thr_dice);
    s.final_soft.push_back(rs.back().soft_dice);
    s.epochs_to_90.push_back(static_cast<double>(epochs_to_fraction(rs, 0.9)));
    for (const auto& r : rs) {
      auto& p = points[r.epoch];
      p.epoch = r.epoch;
      ++p.n;
      p.soft_dice += r.soft_dice;
      p.thr_dice += r.thr_dice;
      p.train_loss += r.train_loss;
    }
  }
  for (auto& [e, p] : points) {
    const auto n = static_cast<double>(p.n);
    p.soft_dice /= n;
    p.thr_dice /= n;
    p.train_loss /= n;
    s.curve.push_back(p);
  }
  s.thr = mean_std(s.final_thr);
  s.soft = mean_std(s.final_soft);
  s.median_epochs_to_90 = median(s.epochs_to_90);
  return s;
}

inline std::string curve_csv(const std::vector<ConfigSummary>& summaries) {
  std::string out = "config,epoch,n_seeds,train_loss,soft_dice,thr_dice\n";
  char buf[256];
  for (const auto& s : summaries) {
    for (const auto& p : s.curve) {
      std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.6f,%.6f,%.6f\n", s.name.c_str(), p.epoch, p.n,
                    p.train_loss, p.soft_dice, p.thr_dice);
      out += buf;
    }
  }
  return out;
}

inline std::string aggregate_csv(const std::vector<ConfigSummary>& summaries) {
  std::string out =
      "config,n_seeds,thr_dice_mean,thr_dice_std,soft_dice_mean,soft_dice_std,"
      "epochs_to_90_median\n";
  char buf[256];
  for (const auto& s : summaries) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.1f\n", s.name.c_str(), s.thr.n,
                  s.thr.mean, s.thr.std, s.soft.mean, s.soft.std, s.median_epochs_to_90);
    out += buf;
  }
  return out;
}

/// Human-readable `name: 0.812 ± 0.034 (n=5)` style lines.
inline std::string format_table(const std::vector<ConfigSummary>& summaries) {
  std::string out;
  char buf[256];
  for (const auto& s : summaries) {
    std::snprintf(buf, sizeof(buf), "%-24s thr dice %.4f +- %.4f  soft dice %.4f +- %.4f  n=%zu\n",
                  s.name.c_str(), s.thr.mean, s.thr.std, s.soft.mean, s.soft.std, s.thr.n);
    out += buf;
  }
  return out;
}

}  // namespace segxfer::harness
