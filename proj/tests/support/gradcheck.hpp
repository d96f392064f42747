#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "segxfer/rng.hpp"
#include "segxfer/tensor/tensor.hpp"

namespace segxfer::check {

using Tensor64 = Tensor<double>;
using Tape64 = Tape<double>;

/// Builds a scalar from the inputs on a fresh tape.
using ScalarFn = std::function<Tensor64(Tape64&, std::vector<Tensor64>&)>;

struct GradCheckReport {
  bool ok = true;
  double worst_rel = 0;
  double worst_abs = 0;
  std::string where;
};

inline Tensor64 random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = true) {
  Tensor64 t(shape, requires_grad);
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

/// Central finite differences against autodiff for every element of every
/// input that requires a gradient. An element passes when its absolute error
/// is within `abs_floor` or its relative error is below `rel_tol`.
inline GradCheckReport gradcheck(const ScalarFn& f, std::vector<Tensor64> inputs,
                                 double step = 1e-6, double rel_tol = 1e-4,
                                 double abs_floor = 1e-6) {
  GradCheckReport rep;
  for (auto& t : inputs) t.clear_grad();
  {
    Tape64 tape;
    auto y = f(tape, inputs);
    tape.backward(y);
  }
  auto eval = [&]() {
    Tape64 tape(false);
    return f(tape, inputs).item();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      analytic.assign(g.begin(), g.end());
    }
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double keep = d[i];
      d[i] = keep + step;
      const double up = eval();
      d[i] = keep - step;
      const double down = eval();
      d[i] = keep;
      const double numeric = (up - down) / (2 * step);
      const double abs_err = std::abs(numeric - analytic[i]);
      const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
      const double rel = scale > 0 ? abs_err / scale : 0.0;
      const bool pass = abs_err <= abs_floor || rel < rel_tol;
      if (!pass && (rep.ok || rel > rep.worst_rel)) {
        rep.where = "input " + std::to_string(k) + " element " + std::to_string(i) +
                    ": autodiff " + std::to_string(analytic[i]) + " vs numeric " +
                    std::to_string(numeric);
      }
      if (abs_err > abs_floor) rep.worst_rel = std::max(rep.worst_rel, rel);
      rep.worst_abs = std::max(rep.worst_abs, abs_err);
      rep.ok = rep.ok && pass;
    }
  }
  return rep;
}

}  // namespace segxfer::check
