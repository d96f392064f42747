#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "segxfer/tensor/ops.hpp"

namespace segxfer::losses {

namespace detail {

template <typename T>
void require_binary(const Tensor<T>& t, const char* what) {
  for (auto v : t.data()) {
    if (v != T{0} && v != T{1}) {
      fail("losses", "non_binary_target", std::string(what) + ": target contains value " +
                                              std::to_string(static_cast<double>(v)));
    }
  }
}

}  // namespace detail

/// Soft dice loss averaged over the batch:
///   1 - (2 * sum(p*t) + eps) / (sum(p) + sum(t) + eps), per sample.
template <typename T>
Tensor<T> dice_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target, T eps) {
  segxfer::detail::require_same(pred.shape(), target.shape(), "dice_loss");
  detail::require_binary(target, "dice_loss");
  const std::size_t N = pred.dim(0);
  const std::size_t M = pred.numel() / N;
  std::vector<T> inter(N, T{0}), denom(N, T{0});
  const T* p = pred.data().data();
  const T* t = target.data().data();
  T loss = 0;
  for (std::size_t n = 0; n < N; ++n) {
    T i_sum = 0, p_sum = 0, t_sum = 0;
    for (std::size_t k = 0; k < M; ++k) {
      i_sum += p[n * M + k] * t[n * M + k];
      p_sum += p[n * M + k];
      t_sum += t[n * M + k];
    }
    inter[n] = T{2} * i_sum + eps;
    denom[n] = p_sum + t_sum + eps;
    loss += T{1} - inter[n] / denom[n];
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(N));
  if (tape.wants({&pred})) {
    tape.record(out, [pred, target, out, inter = std::move(inter), denom = std::move(denom), N,
                      M]() mutable {
      auto gp = pred.grad_for_accumulation();
      const T* t = target.data().data();
      const T g = out.grad()[0] / static_cast<T>(N);
      for (std::size_t n = 0; n < N; ++n) {
        const T d2 = denom[n] * denom[n];
        for (std::size_t k = 0; k < M; ++k) {
          gp[n * M + k] -= g * (T{2} * t[n * M + k] * denom[n] - inter[n]) / d2;
        }
      }
    });
  }
  return out;
}

/// Per-sample dice coefficient for reporting. With `threshold` >= 0 the
/// prediction is binarised (p > threshold) first.
template <typename T>
std::vector<double> dice_scores(const Tensor<T>& pred, const Tensor<T>& target, double eps,
                                double threshold = -1.0) {
  segxfer::detail::require_same(pred.shape(), target.shape(), "dice_scores");
  const std::size_t N = pred.dim(0);
  const std::size_t M = pred.numel() / N;
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    double i_sum = 0, p_sum = 0, t_sum = 0;
    for (std::size_t k = 0; k < M; ++k) {
      double pv = static_cast<double>(pred.data()[n * M + k]);
      if (threshold >= 0.0) pv = pv > threshold ? 1.0 : 0.0;
      const double tv = static_cast<double>(target.data()[n * M + k]);
      i_sum += pv * tv;
      p_sum += pv;
      t_sum += tv;
    }
    out[n] = (2.0 * i_sum + eps) / (p_sum + t_sum + eps);
  }
  return out;
}

/// NT-Xent over 2N unit-norm embeddings where rows 2k and 2k+1 are the two
/// views of sample k. Similarities are dot products scaled by 1/temperature;
/// the self-pair is excluded from the denominator.
template <typename T>
Tensor<T> ntxent_loss(Tape<T>& tape, const Tensor<T>& embeds, T temperature) {
  segxfer::detail::require_rank(embeds.shape(), 2, "ntxent_loss");
  const std::size_t R = embeds.dim(0), D = embeds.dim(1);
  if (R < 2 || R % 2 != 0) {
    fail("losses", "shape", "ntxent_loss: need an even number of rows >= 2, got " +
                                std::to_string(R));
  }
  if (!(temperature > T{0})) fail("losses", "temperature", "ntxent_loss: temperature must be > 0");
  segxfer::detail::ConstMatMap<T> e(embeds.data().data(), R, D);
  for (std::size_t r = 0; r < R; ++r) {
    const double norm = static_cast<double>(e.row(r).norm());
    if (std::abs(norm - 1.0) > 1e-3) {
      fail("losses", "not_normalized", "ntxent_loss: row " + std::to_string(r) + " has norm " +
                                           std::to_string(norm));
    }
  }
  segxfer::detail::RowMat<T> sim = (e * e.transpose()) / temperature;
  segxfer::detail::RowMat<T> prob(R, R);
  T loss = 0;
  for (std::size_t i = 0; i < R; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < R; ++k) {
      if (k != i) mx = std::max(mx, sim(i, k));
    }
    T s = 0;
    for (std::size_t k = 0; k < R; ++k) {
      prob(i, k) = k == i ? T{0} : std::exp(sim(i, k) - mx);
      s += prob(i, k);
    }
    prob.row(i) /= s;
    const std::size_t pos = i ^ std::size_t{1};
    loss += -(sim(i, pos) - mx - std::log(s));
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(R));
  if (tape.wants({&embeds})) {
    tape.record(out, [embeds, out, prob = std::move(prob), R, D, temperature]() mutable {
      segxfer::detail::RowMat<T> g = prob;
      for (std::size_t i = 0; i < R; ++i) g(i, i ^ std::size_t{1}) -= T{1};
      g *= out.grad()[0] / static_cast<T>(R);
      segxfer::detail::ConstMatMap<T> e(embeds.data().data(), R, D);
      segxfer::detail::MatMap<T> ge(embeds.grad_for_accumulation().data(), R, D);
      ge.noalias() += ((g + g.transpose()) * e) / temperature;
    });
  }
  return out;
}

/// Mean squared reconstruction error.
template <typename T>
Tensor<T> recon_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target) {
  return mse(tape, pred, target);
}

struct ConRecWeights {
  double lambda_contrastive = 1.0;
  std::array<double, 4> head = {1.0, 1.0, 1.0, 1.0};  // b, c, d, e

  void validate() const {
    bool any = lambda_contrastive > 0;
    if (lambda_contrastive < 0) fail("losses", "weights", "lambda_contrastive must be >= 0");
    for (double w : head) {
      if (w < 0) fail("losses", "weights", "reconstruction weights must be >= 0");
      any = any || w > 0;
    }
    if (!any) fail("losses", "weights", "at least one ConRec weight must be positive");
  }
};

/// lambda * NT-Xent + sum_h w_h * MSE(pred_h, target_h). Zero-weight terms are
/// not evaluated.
template <typename T>
Tensor<T> conrec_loss(Tape<T>& tape, const Tensor<T>& embeds,
                      const std::array<Tensor<T>, 4>& recon_preds,
                      const std::array<Tensor<T>, 4>& targets, const ConRecWeights& weights,
                      T temperature) {
  weights.validate();
  Tensor<T> total;
  auto accumulate = [&](const Tensor<T>& term) {
    total = total.defined() ? add(tape, total, term) : term;
  };
  if (weights.lambda_contrastive > 0) {
    auto c = ntxent_loss(tape, embeds, temperature);
    accumulate(weights.lambda_contrastive == 1.0
                   ? c
                   : mul_scalar(tape, c, static_cast<T>(weights.lambda_contrastive)));
  }
  for (std::size_t h = 0; h < 4; ++h) {
    if (weights.head[h] <= 0) continue;
    auto r = recon_loss(tape, recon_preds[h], targets[h]);
    accumulate(weights.head[h] == 1.0 ? r : mul_scalar(tape, r, static_cast<T>(weights.head[h])));
  }
  return total;
}

}  // namespace segxfer::losses
