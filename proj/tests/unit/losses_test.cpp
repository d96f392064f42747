#include <gtest/gtest.h>

#include <cmath>

#include "expect_error.hpp"
#include "gradcheck.hpp"
#include "segxfer/losses.hpp"

using namespace segxfer;
using check::expect_error;
using check::Tape64;
using check::Tensor64;

namespace {

Tensor64 unit_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t d = rows[0].size();
  std::vector<double> v;
  for (const auto& r : rows) {
    double n = 0;
    for (double x : r) n += x * x;
    for (double x : r) v.push_back(x / std::sqrt(n));
  }
  return Tensor64(Shape{rows.size(), d}, v);
}

Tensor64 random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& r : rows) {
    for (auto& x : r) x = uniform(rng, -1, 1);
  }
  return unit_rows(rows);
}

double ntxent(const Tensor64& e, double tau) {
  Tape64 tape(false);
  return losses::ntxent_loss(tape, e, tau).item();
}

Tensor64 binary_mask(const Shape& s, Rng& rng) {
  Tensor64 t(s);
  for (auto& v : t.data()) v = coin(rng) ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(Dice, ExactMatchIsZero) {
  Rng rng(1);
  auto t = binary_mask({3, 1, 8, 8}, rng);
  Tape64 tape(false);
  EXPECT_EQ(losses::dice_loss(tape, t, t, 1.0).item(), 0.0);
}

TEST(Dice, DisjointHandValue) {
  // eight predicted pixels, eight different target pixels
  Tensor64 p(Shape{1, 1, 4, 4}), t(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 8; ++i) p.data()[i] = 1.0;
  for (std::size_t i = 8; i < 16; ++i) t.data()[i] = 1.0;
  Tape64 tape(false);
  EXPECT_NEAR(losses::dice_loss(tape, p, t, 1.0).item(), 1.0 - 1.0 / 17.0, 1e-15);
}

TEST(Dice, HalfPredictionOnFullTarget) {
  auto p = Tensor64::full(Shape{2, 1, 5, 5}, 0.5);
  auto t = Tensor64::full(Shape{2, 1, 5, 5}, 1.0);
  Tape64 tape(false);
  EXPECT_NEAR(losses::dice_loss(tape, p, t, 0.0).item(), 1.0 / 3.0, 1e-15);
}

TEST(Dice, PerSampleThenAveraged) {
  // sample 0 perfect, sample 1 disjoint: mean of 0 and 1 - eps/(16+eps)
  Tensor64 p(Shape{2, 1, 4, 4}), t(Shape{2, 1, 4, 4});
  for (std::size_t i = 0; i < 8; ++i) p.data()[i] = t.data()[i] = 1.0;
  for (std::size_t i = 0; i < 8; ++i) p.data()[16 + i] = 1.0;
  for (std::size_t i = 8; i < 16; ++i) t.data()[16 + i] = 1.0;
  Tape64 tape(false);
  EXPECT_NEAR(losses::dice_loss(tape, p, t, 1.0).item(), 0.5 * (1.0 - 1.0 / 17.0), 1e-15);
}

TEST(Dice, RangeAndMonotoneTowardTarget) {
  Rng rng(2);
  auto t = binary_mask({1, 1, 6, 6}, rng);
  t.data()[0] = 1.0;
  Tensor64 p(t.shape());
  for (auto& v : p.data()) v = uniform(rng, 0, 1);
  double prev = 2.0;
  for (int step = 0; step <= 10; ++step) {
    Tensor64 q(t.shape());
    const double a = step / 10.0;
    for (std::size_t i = 0; i < q.numel(); ++i) q.data()[i] = (1 - a) * p.data()[i] + a * t.data()[i];
    Tape64 tape(false);
    const double l = losses::dice_loss(tape, q, t, 1.0).item();
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 1.0);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Dice, Errors) {
  Tape64 tape(false);
  expect_error([&] { losses::dice_loss(tape, Tensor64(Shape{1, 1, 2, 2}), Tensor64(Shape{1, 1, 2, 3}), 1.0); },
               "tensor", "shape");
  auto bad = Tensor64::full(Shape{1, 1, 2, 2}, 0.5);
  expect_error([&] { losses::dice_loss(tape, bad, bad, 1.0); }, "losses", "non_binary_target");
}

TEST(Dice, ScoresThresholded) {
  Tensor64 p(Shape{1, 1, 1, 4}, {0.9, 0.6, 0.4, 0.1});
  Tensor64 t(Shape{1, 1, 1, 4}, {1, 0, 1, 0});
  // thresholded: {1,1,0,0} vs {1,0,1,0}: 2*1 / (2+2)
  EXPECT_NEAR(losses::dice_scores(p, t, 0.0, 0.5)[0], 0.5, 1e-15);
  // soft: 2*(0.9+0.4) / (2.0 + 2)
  EXPECT_NEAR(losses::dice_scores(p, t, 0.0)[0], 2.6 / 4.0, 1e-15);
}

TEST(NtXent, OrthogonalPairsHandValue) {
  auto e = unit_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  EXPECT_NEAR(ntxent(e, 1.0), std::log(1.0 + 2.0 * std::exp(-1.0)), 1e-6);
  EXPECT_NEAR(ntxent(e, 1.0), 0.551444713932051, 1e-6);
}

TEST(NtXent, SampleOrderInvariant) {
  Rng rng(3);
  auto e = random_unit_rows(8, 5, rng);
  // swap samples 0 and 2 (rows 0,1 with rows 4,5)
  Tensor64 f = e.clone();
  for (std::size_t j = 0; j < 5; ++j) {
    std::swap(f.data()[0 * 5 + j], f.data()[4 * 5 + j]);
    std::swap(f.data()[1 * 5 + j], f.data()[5 * 5 + j]);
  }
  EXPECT_NEAR(ntxent(e, 0.5), ntxent(f, 0.5), 1e-12);
  // and swapping the two views of one sample
  Tensor64 g = e.clone();
  for (std::size_t j = 0; j < 5; ++j) std::swap(g.data()[2 * 5 + j], g.data()[3 * 5 + j]);
  EXPECT_NEAR(ntxent(e, 0.5), ntxent(g, 0.5), 1e-12);
}

TEST(NtXent, MatchedPositivesBeatShuffled) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    // views of one sample are close; shuffling second views breaks the pairing
    const std::size_t n = 6, d = 8;
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> base(d);
      for (auto& x : base) x = uniform(rng, -1, 1);
      auto v2 = base;
      for (auto& x : v2) x += uniform(rng, -0.1, 0.1);
      rows.push_back(base);
      rows.push_back(v2);
    }
    auto matched = unit_rows(rows);
    auto shuffled_rows = rows;
    for (std::size_t k = 0; k < n; ++k) shuffled_rows[2 * k + 1] = rows[2 * ((k + 1) % n) + 1];
    EXPECT_LE(ntxent(matched, 0.5), ntxent(unit_rows(shuffled_rows), 0.5));
  }
}

TEST(NtXent, RotationInvariant) {
  Rng rng(5);
  auto e = random_unit_rows(6, 2, rng);
  const double a = 0.7;
  Tensor64 r(e.shape());
  for (std::size_t i = 0; i < 6; ++i) {
    const double x = e.data()[2 * i], y = e.data()[2 * i + 1];
    r.data()[2 * i] = std::cos(a) * x - std::sin(a) * y;
    r.data()[2 * i + 1] = std::sin(a) * x + std::cos(a) * y;
  }
  EXPECT_NEAR(ntxent(e, 0.3), ntxent(r, 0.3), 1e-12);
}

TEST(NtXent, Errors) {
  Tape64 tape(false);
  expect_error([&] { losses::ntxent_loss(tape, Tensor64(Shape{4, 2}, {1, 0, 2, 0, 0, 1, 0, 1}), 1.0); },
               "losses", "not_normalized");
  expect_error([&] { losses::ntxent_loss(tape, unit_rows({{1, 0}, {0, 1}, {1, 1}}), 1.0); },
               "losses", "shape");
  expect_error([&] { losses::ntxent_loss(tape, unit_rows({{1, 0}, {0, 1}}), 0.0); },
               "losses", "temperature");
}

TEST(Recon, Values) {
  Rng rng(6);
  auto a = check::random_tensor({2, 3, 4, 4}, rng, 0, 1, false);
  Tape64 tape(false);
  EXPECT_EQ(losses::recon_loss(tape, a, a).item(), 0.0);
  Tensor64 b(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) b.data()[i] = a.data()[i] + 1.0;
  EXPECT_NEAR(losses::recon_loss(tape, b, a).item(), 1.0, 1e-12);
  auto c = check::random_tensor(a.shape(), rng, 0, 1, false);
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a.data()[i] - c.data()[i]) * (a.data()[i] - c.data()[i]);
  EXPECT_NEAR(losses::recon_loss(tape, a, c).item(), s / static_cast<double>(a.numel()), 1e-14);
}

namespace {

struct ConRecCase {
  Tensor64 embed;
  std::array<Tensor64, 4> pred, target;
};

ConRecCase conrec_case(std::uint64_t seed) {
  Rng rng(seed);
  ConRecCase c;
  c.embed = random_unit_rows(4, 3, rng);
  for (std::size_t h = 0; h < 4; ++h) {
    const std::size_t ch = h == 2 ? 1 : 3;
    c.pred[h] = check::random_tensor({4, ch, 4, 4}, rng, 0, 1, false);
    c.target[h] = h == 2 ? binary_mask({4, 1, 4, 4}, rng) : check::random_tensor({4, ch, 4, 4}, rng, 0, 1, false);
  }
  return c;
}

double conrec(const ConRecCase& c, const losses::ConRecWeights& w, double tau = 0.5) {
  Tape64 tape(false);
  return losses::conrec_loss(tape, c.embed, c.pred, c.target, w, tau).item();
}

}  // namespace

TEST(ConRec, ContrastiveOnly) {
  auto c = conrec_case(7);
  losses::ConRecWeights w;
  w.head = {0, 0, 0, 0};
  EXPECT_EQ(conrec(c, w), ntxent(c.embed, 0.5));
}

TEST(ConRec, PerfectSingleHeadIsZero) {
  auto c = conrec_case(8);
  c.pred[0] = c.target[0];
  losses::ConRecWeights w;
  w.lambda_contrastive = 0;
  w.head = {1, 0, 0, 0};
  EXPECT_EQ(conrec(c, w), 0.0);
}

TEST(ConRec, EqualsHandAssembledSum) {
  auto c = conrec_case(9);
  losses::ConRecWeights w;
  w.lambda_contrastive = 0.7;
  w.head = {1.0, 0.5, 2.0, 0.25};
  double expected = 0.7 * ntxent(c.embed, 0.5);
  for (std::size_t h = 0; h < 4; ++h) {
    Tape64 tape(false);
    expected += w.head[h] * losses::recon_loss(tape, c.pred[h], c.target[h]).item();
  }
  EXPECT_NEAR(conrec(c, w), expected, 1e-12);
}

TEST(ConRec, LinearInEachWeight) {
  auto c = conrec_case(10);
  losses::ConRecWeights w;
  w.head = {0.3, 0.6, 0.9, 1.2};
  for (std::size_t h = 0; h < 4; ++h) {
    auto w1 = w, w2 = w, w3 = w;
    w1.head[h] = 1.0;
    w2.head[h] = 2.0;
    w3.head[h] = 3.0;
    EXPECT_NEAR(conrec(c, w2) - conrec(c, w1), conrec(c, w3) - conrec(c, w2), 1e-12);
  }
  auto l1 = w, l2 = w, l3 = w;
  l1.lambda_contrastive = 0.5;
  l2.lambda_contrastive = 1.0;
  l3.lambda_contrastive = 1.5;
  EXPECT_NEAR(conrec(c, l2) - conrec(c, l1), conrec(c, l3) - conrec(c, l2), 1e-12);
}

TEST(ConRec, WeightValidation) {
  auto c = conrec_case(11);
  losses::ConRecWeights w;
  w.lambda_contrastive = 0;
  w.head = {0, 0, 0, 0};
  expect_error([&] { conrec(c, w); }, "losses", "weights");
  w.head = {1, -1, 0, 0};
  expect_error([&] { conrec(c, w); }, "losses", "weights");
}

TEST(ConRec, GradientMatchesFiniteDifferences) {
  auto c = conrec_case(12);
  losses::ConRecWeights w;
  w.lambda_contrastive = 0.8;
  w.head = {1.0, 0.5, 2.0, 0.25};
  std::vector<Tensor64> inputs = {c.pred[0], c.pred[1], c.pred[2], c.pred[3]};
  for (auto& t : inputs) t.set_requires_grad(true);
  Rng rng(13);
  auto raw = check::random_tensor({4, 3}, rng);
  inputs.push_back(raw);
  auto rep = check::gradcheck(
      [&](Tape64& tape, std::vector<Tensor64>& in) {
        auto e = l2_normalize_rows(tape, in[4]);
        return losses::conrec_loss(tape, e, {in[0], in[1], in[2], in[3]}, c.target, w, 0.5);
      },
      inputs);
  EXPECT_TRUE(rep.ok) << rep.where;
}

TEST(CrossEntropy, HandValues) {
  Tape64 tape(false);
  EXPECT_NEAR(softmax_cross_entropy(tape, Tensor64(Shape{1, 2}, {0, 0}), {1}).item(), std::log(2.0), 1e-15);
  // logits (log 3, 0): p(class 0) = 3/4
  const double ce = softmax_cross_entropy(tape, Tensor64(Shape{2, 2}, {std::log(3.0), 0, std::log(3.0), 0}), {0, 1}).item();
  EXPECT_NEAR(ce, 0.5 * (-std::log(0.75) - std::log(0.25)), 1e-14);
}
