#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "segxfer/losses.hpp"
#include "segxfer/tensor/ops.hpp"
#include "segxfer/unet/unet.hpp"

namespace segxfer::check {

/// One finite-difference scenario: an op, the shapes it runs on, and the
/// inputs to perturb.
struct GradCase {
  std::string op;
  std::string shape;
  ScalarFn fn;
  std::vector<Tensor64> inputs;
};

/// Reduces an arbitrary output to a scalar through fixed random weights, so
/// every output element carries a distinct upstream gradient.
inline Tensor64 project(Tape64& tape, const Tensor64& out, const Tensor64& weights) {
  return mean(tape, mul(tape, out, weights));
}

inline Tensor64 fixed_weights(const Shape& s, Rng& rng) { return random_tensor(s, rng, -1, 1, false); }

/// Values bounded away from zero (for relu kinks).
inline Tensor64 away_from_zero(const Shape& shape, Rng& rng) {
  Tensor64 t(shape, true);
  for (auto& v : t.data()) v = (coin(rng) ? 1 : -1) * uniform(rng, 0.05, 1.0);
  return t;
}

inline std::vector<GradCase> all_grad_cases(std::uint64_t seed = 7) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto add_case = [&](std::string op, const Shape& in_shape, ScalarFn fn, std::vector<Tensor64> in) {
    cases.push_back({std::move(op), shape_str(in_shape), std::move(fn), std::move(in)});
  };

  struct ConvShape { std::size_t n, c, h, w, o, k, stride, pad; };
  const ConvShape convs[] = {{2, 3, 8, 8, 4, 3, 1, 1}, {1, 1, 5, 5, 2, 3, 1, 0}, {2, 2, 6, 7, 3, 3, 2, 1},
                             {1, 4, 4, 4, 2, 1, 1, 0}, {3, 2, 5, 4, 2, 2, 2, 0}, {1, 2, 7, 7, 1, 5, 1, 2}};
  for (const auto& s : convs) {
    const std::size_t ho = (s.h + 2 * s.pad - s.k) / s.stride + 1;
    const std::size_t wo = (s.w + 2 * s.pad - s.k) / s.stride + 1;
    auto r = fixed_weights({s.n, s.o, ho, wo}, rng);
    add_case("conv2d", {s.n, s.c, s.h, s.w},
             [r, s](Tape64& t, std::vector<Tensor64>& in) {
               return project(t, conv2d(t, in[0], in[1], in[2], s.stride, s.pad), r);
             },
             {random_tensor({s.n, s.c, s.h, s.w}, rng), random_tensor({s.o, s.c, s.k, s.k}, rng),
              random_tensor({s.o}, rng)});
  }

  const Shape images[] = {{1, 1, 2, 2}, {2, 3, 4, 4}, {1, 2, 6, 4}, {3, 1, 4, 8}, {2, 2, 8, 6}};
  for (const auto& sh : images) {
    Shape half = {sh[0], sh[1], sh[2] / 2, sh[3] / 2};
    Shape twice = {sh[0], sh[1], sh[2] * 2, sh[3] * 2};
    auto rh = fixed_weights(half, rng);
    add_case("maxpool2", sh, [rh](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, maxpool2(t, in[0]), rh);
    }, {random_tensor(sh, rng)});
    auto rt = fixed_weights(twice, rng);
    add_case("upsample_nearest2", sh, [rt](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, upsample_nearest2(t, in[0]), rt);
    }, {random_tensor(sh, rng)});
    auto rs = fixed_weights(sh, rng);
    add_case("upsample_nearest2(maxpool2)", sh, [rs](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, upsample_nearest2(t, maxpool2(t, in[0])), rs);
    }, {random_tensor(sh, rng)});
  }

  const Shape bn_shapes[] = {{2, 1, 2, 2}, {2, 3, 4, 4}, {3, 2, 3, 5}, {4, 1, 1, 1}, {2, 4, 2, 3}};
  for (const auto& sh : bn_shapes) {
    const std::size_t c = sh[1];
    auto r = fixed_weights(sh, rng);
    for (Mode mode : {Mode::train, Mode::eval}) {
      auto state = std::make_shared<BatchNormState<double>>(BatchNormState<double>{
          Tensor64(Shape{c}), Tensor64::full(Shape{c}, 1.0)});
      for (auto& v : state->running_mean.data()) v = uniform(rng, -0.5, 0.5);
      for (auto& v : state->running_var.data()) v = uniform(rng, 0.5, 1.5);
      add_case(mode == Mode::train ? "batchnorm2d(train)" : "batchnorm2d(eval)", sh,
               [r, state, mode](Tape64& t, std::vector<Tensor64>& in) {
                 return project(t, batchnorm2d(t, in[0], in[1], in[2], *state, mode), r);
               },
               {random_tensor(sh, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)});
    }
  }

  const Shape flat[] = {{1}, {4}, {2, 3}, {2, 2, 3}, {1, 3, 2, 2}};
  for (const auto& sh : flat) {
    auto r = fixed_weights(sh, rng);
    add_case("relu", sh, [r](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, relu(t, in[0]), r);
    }, {away_from_zero(sh, rng)});
    add_case("sigmoid", sh, [r](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, sigmoid(t, in[0]), r);
    }, {random_tensor(sh, rng, -3, 3)});
    add_case("add", sh, [r](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, add(t, in[0], in[1]), r);
    }, {random_tensor(sh, rng), random_tensor(sh, rng)});
    const double k = uniform(rng, -2, 2);
    add_case("mul_scalar", sh, [r, k](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, mul_scalar(t, in[0], k), r);
    }, {random_tensor(sh, rng)});
    add_case("mul", sh, [r](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, mul(t, in[0], in[1]), r);
    }, {random_tensor(sh, rng), random_tensor(sh, rng)});
    add_case("mean", sh, [](Tape64& t, std::vector<Tensor64>& in) { return mean(t, in[0]); },
             {random_tensor(sh, rng)});
    add_case("mse", sh, [](Tape64& t, std::vector<Tensor64>& in) { return mse(t, in[0], in[1]); },
             {random_tensor(sh, rng), random_tensor(sh, rng)});
  }

  struct CatShape { std::size_t n, ca, cb, h, w; };
  const CatShape cats[] = {{1, 1, 1, 2, 2}, {2, 2, 3, 3, 3}, {1, 4, 1, 2, 5}, {3, 1, 2, 1, 1}, {2, 3, 3, 4, 2}};
  for (const auto& s : cats) {
    auto r = fixed_weights({s.n, s.ca + s.cb, s.h, s.w}, rng);
    add_case("concat_channels", {s.n, s.ca + s.cb, s.h, s.w},
             [r](Tape64& t, std::vector<Tensor64>& in) {
               return project(t, concat_channels(t, in[0], in[1]), r);
             },
             {random_tensor({s.n, s.ca, s.h, s.w}, rng), random_tensor({s.n, s.cb, s.h, s.w}, rng)});
    const Shape sh{s.n, s.ca, s.h, s.w};
    auto rf = fixed_weights({s.n, s.ca * s.h * s.w}, rng);
    add_case("flatten", sh, [rf](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, flatten(t, in[0]), rf);
    }, {random_tensor(sh, rng)});
    auto rg = fixed_weights({s.n, s.ca}, rng);
    add_case("global_avg_pool", sh, [rg](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, global_avg_pool(t, in[0]), rg);
    }, {random_tensor(sh, rng)});
  }

  struct DenseShape { std::size_t n, f, o; };
  const DenseShape dens[] = {{1, 1, 1}, {2, 3, 4}, {4, 5, 2}, {3, 8, 3}, {5, 2, 6}};
  for (const auto& s : dens) {
    auto r = fixed_weights({s.n, s.o}, rng);
    add_case("dense", {s.n, s.f}, [r](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, dense(t, in[0], in[1], in[2]), r);
    }, {random_tensor({s.n, s.f}, rng), random_tensor({s.o, s.f}, rng), random_tensor({s.o}, rng)});
    auto rn = fixed_weights({s.n, s.f}, rng);
    add_case("l2_normalize_rows", {s.n, s.f}, [rn](Tape64& t, std::vector<Tensor64>& in) {
      return project(t, l2_normalize_rows(t, in[0]), rn);
    }, {random_tensor({s.n, s.f}, rng, 0.1, 1.0)});
    std::vector<int> labels;
    for (std::size_t i = 0; i < s.n; ++i) labels.push_back(uniform_int(rng, 0, static_cast<int>(s.o) - 1));
    add_case("softmax_cross_entropy", {s.n, s.o}, [labels](Tape64& t, std::vector<Tensor64>& in) {
      return softmax_cross_entropy(t, in[0], labels);
    }, {random_tensor({s.n, s.o}, rng, -2, 2)});
  }

  const Shape masks[] = {{1, 1, 2, 2}, {2, 1, 3, 3}, {3, 1, 4, 2}, {1, 1, 5, 5}, {4, 1, 2, 3}};
  for (const auto& sh : masks) {
    Tensor64 target(sh);
    for (auto& v : target.data()) v = coin(rng) ? 1.0 : 0.0;
    const double eps = uniform(rng, 0.1, 1.0);
    add_case("dice_loss", sh, [target, eps](Tape64& t, std::vector<Tensor64>& in) {
      return losses::dice_loss(t, sigmoid(t, in[0]), target, eps);
    }, {random_tensor(sh, rng, -2, 2)});
  }

  struct PairShape { std::size_t pairs, d; double tau; };
  const PairShape pairs[] = {{1, 2, 1.0}, {2, 2, 0.5}, {2, 4, 0.3}, {3, 3, 0.5}, {4, 5, 1.0}};
  for (const auto& s : pairs) {
    add_case("ntxent_loss", {2 * s.pairs, s.d}, [s](Tape64& t, std::vector<Tensor64>& in) {
      return losses::ntxent_loss(t, l2_normalize_rows(t, in[0]), s.tau);
    }, {random_tensor({2 * s.pairs, s.d}, rng, 0.1, 1.0)});
  }

  // The joint objective over random predictions, all four heads weighted.
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t n = 2 * static_cast<std::size_t>(1 + rep % 2), d = 3, hw = 2 + rep % 2;
    std::array<Tensor64, 4> targets;
    for (std::size_t h = 0; h < 4; ++h) {
      targets[h] = random_tensor({n, h == 2 ? std::size_t{1} : std::size_t{3}, hw, hw}, rng, 0, 1, false);
    }
    losses::ConRecWeights w;
    w.lambda_contrastive = uniform(rng, 0.2, 1.5);
    for (auto& x : w.head) x = uniform(rng, 0.2, 1.5);
    std::vector<Tensor64> in = {random_tensor({n, d}, rng, 0.1, 1.0)};
    for (std::size_t h = 0; h < 4; ++h) in.push_back(random_tensor(targets[h].shape(), rng, -2, 2));
    add_case("conrec_loss", {n, d}, [targets, w](Tape64& t, std::vector<Tensor64>& in) {
      std::array<Tensor64, 4> preds;
      for (std::size_t h = 0; h < 4; ++h) preds[h] = sigmoid(t, in[h + 1]);
      return losses::conrec_loss(t, l2_normalize_rows(t, in[0]), preds, targets, w, 0.5);
    }, std::move(in));
  }
  return cases;
}

}  // namespace segxfer::check
