#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "segxfer/tensor/tensor.hpp"

namespace segxfer {

enum class Mode { train, eval };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    fail("tensor", "shape", std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    fail("tensor", "shape", std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
  }
}

/// Strided sum in index order, independent of buffer alignment.
template <typename T>
T ordered_sum(const T* p, std::size_t n, std::size_t stride) {
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += p[i * stride];
  return s;
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

/// Output columns [lo, hi) whose stride-1 tap at offset kj lands inside a
/// row of width W.
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t kj, std::size_t pad, std::size_t W,
                                                      std::size_t Wo) {
  const std::size_t lo = std::min(Wo, pad > kj ? pad - kj : 0);
  const std::size_t hi = std::max(lo, std::min(Wo, W + pad - kj));
  return {lo, hi};
}

/// Unfolds one CHW image into a (C*kh*kw) x (Ho*Wo) column matrix.
template <typename T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            T* col) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - ph;
          T* out = row + oy * Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(out, out + Wo, T{0});
            continue;
          }
          const T* in = img + (c * H + static_cast<std::size_t>(iy)) * W;
          if (stride == 1) {
            // valid ox satisfy 0 <= ox + kj - pad < W
            const auto [lo, hi] = valid_span(kj, pad, W, Wo);
            std::fill(out, out + lo, T{0});
            std::copy(in + lo + kj - pad, in + hi + kj - pad, out + lo);
            std::fill(out + hi, out + Wo, T{0});
            continue;
          }
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - ph;
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? T{0} : in[ix];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im_add(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho,
                std::size_t Wo, T* img) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - ph;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          T* dst = img + (c * H + static_cast<std::size_t>(iy)) * W;
          const T* src = row + oy * Wo;
          if (stride == 1) {
            const auto [lo, hi] = valid_span(kj, pad, W, Wo);
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox + kj - pad] += src[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - ph;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation, NCHW input, OIHW weight.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, std::size_t padding = 0) {
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) {
    fail("tensor", "shape", "conv2d: input channels " + std::to_string(C) +
                                " != weight in-channels " + std::to_string(w.dim(1)));
  }
  if (b.shape() != Shape{O}) {
    fail("tensor", "shape", "conv2d: bias shape " + shape_str(b.shape()) + " != (" +
                                std::to_string(O) + ")");
  }
  if (stride == 0) fail("tensor", "shape", "conv2d: stride must be positive");
  if (H + 2 * padding < kh || W + 2 * padding < kw) {
    fail("tensor", "shape", "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                " does not fit padded input " + std::to_string(H + 2 * padding) +
                                "x" + std::to_string(W + 2 * padding));
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  const std::size_t K = C * kh * kw, HWo = Ho * Wo;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  Tensor<T> out(Shape{N, O, Ho, Wo});
  {
    AlignedVector<T> col(direct ? 0 : K * HWo);
    detail::ConstMatMap<T> wm(w.data().data(), O, K);
    const T* bias = b.data().data();
    for (std::size_t n = 0; n < N; ++n) {
      const T* img = x.data().data() + n * C * H * W;
      if (!direct) detail::im2col(img, C, H, W, kh, kw, stride, padding, Ho, Wo, col.data());
      detail::ConstMatMap<T> cm(direct ? img : col.data(), K, HWo);
      detail::MatMap<T> om(out.data().data() + n * O * HWo, O, HWo);
      om.noalias() = wm * cm;
      for (std::size_t o = 0; o < O; ++o) om.row(o).array() += bias[o];
    }
  }

  if (tape.wants({&x, &w, &b})) {
    tape.record(out, [x, w, b, out, N, C, H, W, O, kh, kw, Ho, Wo, K, HWo, stride, padding,
                      direct]() mutable {
      const auto gout = std::span<const T>(out.grad());
      detail::ConstMatMap<T> wm(w.data().data(), O, K);
      AlignedVector<T> col(direct ? 0 : K * HWo);
      AlignedVector<T> dcol(x.requires_grad() && !direct ? K * HWo : 0);
      T* gw = w.requires_grad() ? w.grad_for_accumulation().data() : nullptr;
      T* gb = b.requires_grad() ? b.grad_for_accumulation().data() : nullptr;
      T* gx = x.requires_grad() ? x.grad_for_accumulation().data() : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        detail::ConstMatMap<T> go(gout.data() + n * O * HWo, O, HWo);
        const T* img = x.data().data() + n * C * H * W;
        if (gb) {
          for (std::size_t o = 0; o < O; ++o) gb[o] += detail::ordered_sum(gout.data() + (n * O + o) * HWo, HWo, 1);
        }
        if (gw) {
          if (!direct) detail::im2col(img, C, H, W, kh, kw, stride, padding, Ho, Wo, col.data());
          detail::ConstMatMap<T> cm(direct ? img : col.data(), K, HWo);
          detail::MatMap<T> gwm(gw, O, K);
          gwm.noalias() += go * cm.transpose();
        }
        if (gx) {
          T* gimg = gx + n * C * H * W;
          if (direct) {
            detail::MatMap<T> gxm(gimg, K, HWo);
            gxm.noalias() += wm.transpose() * go;
          } else {
            detail::MatMap<T> dc(dcol.data(), K, HWo);
            dc.noalias() = wm.transpose() * go;
            detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, padding, Ho, Wo, gimg);
          }
        }
      }
    });
  }
  return out;
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major order.
template <typename T>
Tensor<T> maxpool2(Tape<T>& tape, const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "maxpool2");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    fail("tensor", "odd_extent", "maxpool2: spatial extent " + std::to_string(H) + "x" +
                                     std::to_string(W) + " is not even");
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = in + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (2 * oy) * W + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (auto c : cand) {
          if (plane[c] > plane[best]) best = c;
        }
        const std::size_t oi = nc * Ho * Wo + oy * Wo + ox;
        o[oi] = plane[best];
        argmax[oi] = nc * H * W + best;
      }
    }
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, argmax = std::move(argmax)]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[argmax[i]] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2(Tape<T>& tape, const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "upsample_nearest2");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  const T* in = x.data().data();
  T* o = out.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const T* src = in + nc * H * W + (oy / 2) * W;
      T* dst = o + nc * Ho * Wo + oy * Wo;
      for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox] = src[ox / 2];
    }
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, N, C, H, W, Ho, Wo]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const T* src = go.data() + nc * Ho * Wo + oy * Wo;
          T* dst = gx.data() + nc * H * W + (oy / 2) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox / 2] += src[ox];
        }
      }
    });
  }
  return out;
}

/// Running statistics owned by one batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

template <typename T>
Tensor<T> batchnorm2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormState<T>& state, Mode mode) {
  detail::require_rank(x.shape(), 4, "batchnorm2d");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  detail::require_same(gamma.shape(), Shape{C}, "batchnorm2d gamma");
  detail::require_same(beta.shape(), Shape{C}, "batchnorm2d beta");
  detail::require_same(state.running_mean.shape(), Shape{C}, "batchnorm2d running_mean");
  detail::require_same(state.running_var.shape(), Shape{C}, "batchnorm2d running_var");
  if (mode == Mode::train && N < 2) {
    fail("tensor", "batch_too_small", "batchnorm2d: train mode needs batch >= 2, got " +
                                          std::to_string(N));
  }
  const T eps = state.eps;
  const std::size_t M = N * HW;
  std::vector<T> mean(C), inv_std(C);
  const T* in = x.data().data();
  if (mode == Mode::train) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      T s = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = in + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(M);
      T v = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = in + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = p[i] - mu;
          v += d * d;
        }
      }
      const T var = v / static_cast<T>(M);
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(var + eps);
      const T unbiased = M > 1 ? v / static_cast<T>(M - 1) : var;
      rm[c] = (T{1} - state.momentum) * rm[c] + state.momentum * mu;
      rv[c] = (T{1} - state.momentum) * rv[c] + state.momentum * unbiased;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T{1} / std::sqrt(rv[c] + eps);
    }
  }

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  const T* g = gamma.data().data();
  const T* bt = beta.data().data();
  T* o = out.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (in[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = xh;
        o[off + i] = g[c] * xh + bt[c];
      }
    }
  }

  if (tape.wants({&x, &gamma, &beta})) {
    tape.record(out, [x, gamma, beta, out, xhat = std::move(xhat), inv_std, N, C, HW, M,
                      mode]() mutable {
      auto go = out.grad();
      std::vector<T> sum_go(C, T{0}), sum_go_xhat(C, T{0});
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t off = (n * C + c) * HW;
          T s = 0, sx = 0;
          for (std::size_t i = 0; i < HW; ++i) {
            s += go[off + i];
            sx += go[off + i] * xhat[off + i];
          }
          sum_go[c] += s;
          sum_go_xhat[c] += sx;
        }
      }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad_for_accumulation();
        for (std::size_t c = 0; c < C; ++c) gg[c] += sum_go_xhat[c];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad_for_accumulation();
        for (std::size_t c = 0; c < C; ++c) gb[c] += sum_go[c];
      }
      if (x.requires_grad()) {
        auto gx = x.grad_for_accumulation();
        const T* g = gamma.data().data();
        const T inv_m = T{1} / static_cast<T>(M);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * HW;
            const T scale = g[c] * inv_std[c];
            if (mode == Mode::train) {
              const T mg = sum_go[c] * inv_m;
              const T mgx = sum_go_xhat[c] * inv_m;
              for (std::size_t i = 0; i < HW; ++i) {
                gx[off + i] += scale * (go[off + i] - mg - xhat[off + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < HW; ++i) gx[off + i] += scale * go[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
  if (tape.wants({&x})) {
    tape.record(out, [x, out]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      auto in = x.data();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (in[i] > T{0}) gx[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = T{1} / (T{1} + std::exp(-in[i]));
  if (tape.wants({&x})) {
    tape.record(out, [x, out]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      auto y = out.data();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (T{1} - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto go = std::span<const T>(out.grad());
      if (a.requires_grad()) detail::add_into(a.grad_for_accumulation(), go);
      if (b.requires_grad()) detail::add_into(b.grad_for_accumulation(), go);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * s;
  if (tape.wants({&x})) {
    tape.record(out, [x, out, s]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * s;
    });
  }
  return out;
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_for_accumulation();
        auto db = b.data();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * db[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_for_accumulation();
        auto da = a.data();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * da[i];
      }
    });
  }
  return out;
}

/// Concatenates NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require_rank(b.shape(), 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    fail("tensor", "shape", "concat_channels: incompatible " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
  T* o = out.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * Ca * HW, Ca * HW, o + n * (Ca + Cb) * HW);
    std::copy_n(b.data().data() + n * Cb * HW, Cb * HW, o + n * (Ca + Cb) * HW + Ca * HW);
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, N, Ca, Cb, HW]() mutable {
      const T* go = out.grad().data();
      if (a.requires_grad()) {
        T* ga = a.grad_for_accumulation().data();
        for (std::size_t n = 0; n < N; ++n) {
          const T* src = go + n * (Ca + Cb) * HW;
          for (std::size_t i = 0; i < Ca * HW; ++i) ga[n * Ca * HW + i] += src[i];
        }
      }
      if (b.requires_grad()) {
        T* gb = b.grad_for_accumulation().data();
        for (std::size_t n = 0; n < N; ++n) {
          const T* src = go + n * (Ca + Cb) * HW + Ca * HW;
          for (std::size_t i = 0; i < Cb * HW; ++i) gb[n * Cb * HW + i] += src[i];
        }
      }
    });
  }
  return out;
}

/// (N, ...) -> (N, prod(...)).
template <typename T>
Tensor<T> flatten(Tape<T>& tape, const Tensor<T>& x) {
  const std::size_t N = x.dim(0);
  Tensor<T> out(Shape{N, x.numel() / N}, x.data(), false);
  if (tape.wants({&x})) {
    tape.record(out, [x, out]() mutable {
      detail::add_into(x.grad_for_accumulation(), std::span<const T>(out.grad()));
    });
  }
  return out;
}

/// (N, C, H, W) -> (N, C) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C});
  const T* in = x.data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    T s = 0;
    for (std::size_t i = 0; i < HW; ++i) s += in[nc * HW + i];
    out.data()[nc] = s / static_cast<T>(HW);
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, N, C, HW]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      const T inv = T{1} / static_cast<T>(HW);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += go[nc] * inv;
      }
    });
  }
  return out;
}

/// Fully connected layer: x (N, F), weight (O, F), bias (O) -> (N, O).
template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x.shape(), 2, "dense input");
  detail::require_rank(w.shape(), 2, "dense weight");
  const std::size_t N = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (w.dim(1) != F) {
    fail("tensor", "shape", "dense: input features " + std::to_string(F) +
                                " != weight in-features " + std::to_string(w.dim(1)));
  }
  detail::require_same(b.shape(), Shape{O}, "dense bias");
  Tensor<T> out(Shape{N, O});
  detail::ConstMatMap<T> xm(x.data().data(), N, F);
  detail::ConstMatMap<T> wm(w.data().data(), O, F);
  detail::MatMap<T> om(out.data().data(), N, O);
  om.noalias() = xm * wm.transpose();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) om(n, o) += b.data()[o];
  }
  if (tape.wants({&x, &w, &b})) {
    tape.record(out, [x, w, b, out, N, F, O]() mutable {
      detail::ConstMatMap<T> go(out.grad().data(), N, O);
      if (x.requires_grad()) {
        detail::MatMap<T> gx(x.grad_for_accumulation().data(), N, F);
        gx.noalias() += go * detail::ConstMatMap<T>(w.data().data(), O, F);
      }
      if (w.requires_grad()) {
        detail::MatMap<T> gw(w.grad_for_accumulation().data(), O, F);
        gw.noalias() += go.transpose() * detail::ConstMatMap<T>(x.data().data(), N, F);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_for_accumulation();
        for (std::size_t o = 0; o < O; ++o) gb[o] += detail::ordered_sum(go.data() + o, N, O);
      }
    });
  }
  return out;
}

/// Row-wise L2 normalisation of an (N, D) matrix.
template <typename T>
Tensor<T> l2_normalize_rows(Tape<T>& tape, const Tensor<T>& x, T eps = T(1e-12)) {
  detail::require_rank(x.shape(), 2, "l2_normalize_rows");
  const std::size_t N = x.dim(0), D = x.dim(1);
  Tensor<T> out(x.shape());
  std::vector<T> norms(N);
  for (std::size_t n = 0; n < N; ++n) {
    T s = 0;
    for (std::size_t d = 0; d < D; ++d) s += x.data()[n * D + d] * x.data()[n * D + d];
    norms[n] = std::max(std::sqrt(s), eps);
    for (std::size_t d = 0; d < D; ++d) out.data()[n * D + d] = x.data()[n * D + d] / norms[n];
  }
  if (tape.wants({&x})) {
    tape.record(out, [x, out, norms = std::move(norms), N, D]() mutable {
      auto gx = x.grad_for_accumulation();
      auto go = out.grad();
      auto y = out.data();
      for (std::size_t n = 0; n < N; ++n) {
        T dot = 0;
        for (std::size_t d = 0; d < D; ++d) dot += go[n * D + d] * y[n * D + d];
        for (std::size_t d = 0; d < D; ++d) {
          gx[n * D + d] += (go[n * D + d] - y[n * D + d] * dot) / norms[n];
        }
      }
    });
  }
  return out;
}

/// Mean softmax cross-entropy of (N, K) logits against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) {
    fail("tensor", "shape", "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(N) + " rows");
  }
  std::vector<T> prob(N * K);
  T loss = 0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) {
      fail("tensor", "label", "softmax_cross_entropy: label " + std::to_string(labels[n]) +
                                  " outside [0," + std::to_string(K) + ")");
    }
    const T* z = logits.data().data() + n * K;
    T mx = *std::max_element(z, z + K);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) {
      prob[n * K + k] = std::exp(z[k] - mx);
      s += prob[n * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) prob[n * K + k] /= s;
    loss += -(z[labels[n]] - mx - std::log(s));
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(N));
  if (tape.wants({&logits})) {
    tape.record(out, [logits, out, prob = std::move(prob), labels, N, K]() mutable {
      auto gl = logits.grad_for_accumulation();
      const T g = out.grad()[0] / static_cast<T>(N);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          const T target = static_cast<std::size_t>(labels[n]) == k ? T{1} : T{0};
          gl[n * K + k] += g * (prob[n * K + k] - target);
        }
      }
    });
  }
  return out;
}

/// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mse");
  const std::size_t n = a.numel();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(n));
  if (tape.wants({&a, &b})) {
    tape.record(out, [a, b, out, n]() mutable {
      const T g = out.grad()[0] * T{2} / static_cast<T>(n);
      if (a.requires_grad()) {
        auto ga = a.grad_for_accumulation();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g * (a.data()[i] - b.data()[i]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_for_accumulation();
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g * (a.data()[i] - b.data()[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  const std::size_t n = x.numel();
  Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(n));
  if (tape.wants({&x})) {
    tape.record(out, [x, out, n]() mutable {
      auto gx = x.grad_for_accumulation();
      const T g = out.grad()[0] / static_cast<T>(n);
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

}  // namespace segxfer
