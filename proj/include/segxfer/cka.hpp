#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segxfer/error.hpp"
#include "segxfer/image.hpp"
#include "segxfer/unet/unet.hpp"

namespace segxfer::cka {

/// One row per probe example, one column per flattened feature.
struct FeatureMatrix {
  Eigen::MatrixXd values;
  std::string model;
  std::string probe;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

inline void check_features(const FeatureMatrix& f) {
  if (f.rows() < 2) {
    fail("cka", "too_few_rows", "need at least 2 probe examples, got " + std::to_string(f.rows()));
  }
  if (!f.values.allFinite()) fail("cka", "non_finite", "feature matrix of '" + f.model + "' has NaN/inf");
}

/// Eval-mode bottleneck activations, flattened row-major (C, H, W) per image.
template <typename T>
FeatureMatrix extract_features(const unet::UNetConfig& config, const ParamTree<T>& model,
                               const std::vector<const Image*>& probe, std::size_t batch = 32,
                               std::string model_name = {}, std::string probe_name = {}) {
  if (probe.empty()) fail("cka", "too_few_rows", "empty probe set");
  ParamTree<T> p = model.clone();  // eval never mutates, but forwards take non-const trees
  FeatureMatrix out;
  out.model = std::move(model_name);
  out.probe = std::move(probe_name);
  const std::size_t width = config.bottleneck_channels() * config.bottleneck_size() *
                            config.bottleneck_size();
  out.values.resize(static_cast<Eigen::Index>(probe.size()), static_cast<Eigen::Index>(width));
  for (std::size_t start = 0; start < probe.size(); start += batch) {
    const std::size_t stop = std::min(probe.size(), start + batch);
    std::vector<const Image*> chunk(probe.begin() + static_cast<std::ptrdiff_t>(start),
                                    probe.begin() + static_cast<std::ptrdiff_t>(stop));
    Tape<T> tape(false);
    auto enc = unet::forward_encoder(config, p, tape, to_batch<T>(chunk), Mode::eval);
    auto d = enc.bottleneck.data();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        out.values(static_cast<Eigen::Index>(start + i), static_cast<Eigen::Index>(j)) =
            static_cast<double>(d[i * width + j]);
      }
    }
  }
  check_features(out);
  return out;
}

namespace detail {

/// Gram matrix of the column-centred features.
inline Eigen::MatrixXd centered_gram(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  return xc * xc.transpose();
}

inline double gram_cka(const Eigen::MatrixXd& k, const Eigen::MatrixXd& l) {
  const double kn = k.norm(), ln = l.norm();
  if (kn == 0.0 || ln == 0.0) return 0.0;
  // <K, L>_F equals ||Yc^T Xc||_F^2 and ||K||_F equals ||Xc^T Xc||_F.
  return std::clamp(k.cwiseProduct(l).sum() / (kn * ln), 0.0, 1.0);
}

}  // namespace detail

/// Linear CKA computed through n x n centred Gram matrices. Returns 0 when
/// either input is constant across examples.
inline double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    fail("cka", "n_mismatch", "row counts differ: " + std::to_string(x.rows()) + " vs " +
                                  std::to_string(y.rows()));
  }
  if (x.rows() < 2) fail("cka", "too_few_rows", "need at least 2 rows");
  return detail::gram_cka(detail::centered_gram(x), detail::centered_gram(y));
}

inline double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
  check_features(x);
  check_features(y);
  if (!x.probe.empty() && !y.probe.empty() && x.probe != y.probe) {
    fail("cka", "probe_mismatch", "features come from probe sets '" + x.probe + "' and '" +
                                      y.probe + "'");
  }
  return linear_cka(x.values, y.values);
}

struct SimilarityMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd values;
};

/// Pairwise CKA; each unordered pair is evaluated once and mirrored.
inline SimilarityMatrix similarity_matrix(const std::vector<FeatureMatrix>& features) {
  if (features.size() < 2) fail("cka", "too_few_models", "need at least 2 models");
  const auto m = static_cast<Eigen::Index>(features.size());
  std::vector<Eigen::MatrixXd> grams;
  for (const auto& f : features) {
    check_features(f);
    if (f.rows() != features.front().rows()) {
      fail("cka", "n_mismatch", "model '" + f.model + "' has a different probe count");
    }
    grams.push_back(detail::centered_gram(f.values));
  }
  SimilarityMatrix out;
  out.values.resize(m, m);
  for (const auto& f : features) out.names.push_back(f.model);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i; j < m; ++j) {
      const double v = detail::gram_cka(grams[static_cast<std::size_t>(i)],
                                        grams[static_cast<std::size_t>(j)]);
      out.values(i, j) = v;
      out.values(j, i) = v;
    }
  }
  return out;
}

/// Header `,name1,name2,...` then `name,v1,v2,...` rows with 6 decimals.
inline std::string to_csv(const SimilarityMatrix& s) {
  std::string out;
  for (const auto& n : s.names) out += "," + n;
  out += '\n';
  char buf[32];
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    out += s.names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < s.values.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), ",%.6f", s.values(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

inline SimilarityMatrix parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) fail("cka", "bad_csv", "empty similarity CSV");
  auto header = split(line);
  if (header.size() < 2) fail("cka", "bad_csv", "header has no model names");
  SimilarityMatrix s;
  s.names.assign(header.begin() + 1, header.end());
  const auto m = static_cast<Eigen::Index>(s.names.size());
  s.values.resize(m, m);
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (row >= m || static_cast<Eigen::Index>(cells.size()) != m + 1 ||
        cells[0] != s.names[static_cast<std::size_t>(row)]) {
      fail("cka", "bad_csv", "malformed row " + std::to_string(row + 1));
    }
    for (Eigen::Index j = 0; j < m; ++j) s.values(row, j) = std::stod(cells[static_cast<std::size_t>(j + 1)]);
    ++row;
  }
  if (row != m) fail("cka", "bad_csv", "expected " + std::to_string(m) + " rows");
  return s;
}

}  // namespace segxfer::cka
