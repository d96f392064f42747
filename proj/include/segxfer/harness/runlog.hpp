#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "segxfer/error.hpp"

namespace segxfer::harness {

/// One evaluation point of a finetuning run.
struct RunRecord {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double train_loss = 0;
  double soft_dice = 0;
  double thr_dice = 0;
  double seconds = 0;

  bool operator==(const RunRecord&) const = default;
};

/// One evaluation point of a pretext run; eval_loss drives model selection.
struct PretrainRecord {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double train_loss = 0;
  double eval_loss = 0;
  double seconds = 0;
};

inline constexpr const char* kRunLogHeader = "seed,epoch,train_loss,soft_dice,thr_dice,seconds";
inline constexpr const char* kPretrainLogHeader = "seed,epoch,train_loss,eval_loss,seconds";

inline std::string runlog_csv(const std::vector<RunRecord>& log) {
  std::string out = std::string(kRunLogHeader) + "\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%llu,%zu,%.8f,%.8f,%.8f,%.3f\n",
                  static_cast<unsigned long long>(r.seed), r.epoch, r.train_loss, r.soft_dice,
                  r.thr_dice, r.seconds);
    out += buf;
  }
  return out;
}

inline std::string pretrain_log_csv(const std::vector<PretrainRecord>& log) {
  std::string out = std::string(kPretrainLogHeader) + "\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%llu,%zu,%.8f,%.8f,%.3f\n",
                  static_cast<unsigned long long>(r.seed), r.epoch, r.train_loss, r.eval_loss,
                  r.seconds);
    out += buf;
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("harness", "io", "cannot write " + path.string());
  out << text;
  if (!out) fail("harness", "io", "short write to " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("harness", "io", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses a RunLog CSV and checks that epochs increase per seed and that dice
/// values lie in [0, 1].
inline std::vector<RunRecord> parse_runlog(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRunLogHeader) {
    fail("harness", "bad_runlog", where + ": missing header '" + kRunLogHeader + "'");
  }
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    RunRecord r;
    unsigned long long seed = 0;
    if (std::sscanf(line.c_str(), "%llu,%zu,%lf,%lf,%lf,%lf", &seed, &r.epoch, &r.train_loss,
                    &r.soft_dice, &r.thr_dice, &r.seconds) != 6) {
      fail("harness", "bad_runlog", where + ":" + std::to_string(lineno) + ": malformed record");
    }
    r.seed = seed;
    if (r.soft_dice < 0 || r.soft_dice > 1 || r.thr_dice < 0 || r.thr_dice > 1) {
      fail("harness", "bad_runlog", where + ":" + std::to_string(lineno) + ": dice outside [0,1]");
    }
    for (auto it = out.rbegin(); it != out.rend(); ++it) {
      if (it->seed != r.seed) continue;
      if (it->epoch >= r.epoch) {
        fail("harness", "bad_runlog",
             where + ":" + std::to_string(lineno) + ": epochs not increasing for seed " +
                 std::to_string(seed));
      }
      break;
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<RunRecord> load_runlog(const std::filesystem::path& path) {
  return parse_runlog(read_text(path), path.string());
}

}  // namespace segxfer::harness
