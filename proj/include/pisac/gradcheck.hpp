#pragma once

// Central-difference gradient checking for graphs built with pisac::ad.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "pisac/ops.hpp"
#include "pisac/rng.hpp"

namespace pisac::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

namespace detail {

// Non-scalar outputs are reduced with fixed weights in [0.5, 1.5] so every
// output coordinate contributes with a distinct multiplier.
inline Var reduce_to_scalar(Tape& tape, const Var& out) {
  if (out.value().size() == 1) return reshape(out, {});
  Rng rng(0x9e3779b9ULL + out.value().size());
  Tensor w(out.shape());
  for (auto& x : w.values) x = rng.uniform(0.5, 1.5);
  return sum(mul(out, tape.constant(std::move(w))));
}

inline double eval_scalar(const GraphFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return reduce_to_scalar(tape, f(tape, vars)).item();
}

}  // namespace detail

/// Worst coordinate-wise relative error between reverse-mode and central
/// difference gradients, |a - n| / max(|a|, |n|, floor). The floor is
/// `floor_rel` times the largest analytic gradient entry (plus a tiny absolute
/// term) so coordinates whose true gradient is ~0 are judged against the
/// gradient's overall scale rather than against finite-difference noise.
inline GradCheckResult check_gradient(const GraphFn& f, const std::vector<Tensor>& inputs, double step = 1e-6,
                                      double floor_rel = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  const Var root = detail::reduce_to_scalar(tape, f(tape, vars));
  tape.backward(root);

  double gmax = 0.0;
  std::vector<Tensor> analytic;
  for (const Var& v : vars) {
    analytic.push_back(v.grad());
    for (double g : analytic.back().values) gmax = std::max(gmax, std::abs(g));
  }
  const double floor = std::max(floor_rel * gmax, 1e-300);

  GradCheckResult res;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      probe[i][j] = x0 + step;
      const double fp = detail::eval_scalar(f, probe);
      probe[i][j] = x0 - step;
      const double fm = detail::eval_scalar(f, probe);
      probe[i][j] = x0;
      const double num = (fp - fm) / (2.0 * step);
      const double a = analytic[i][j];
      const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      if (err > res.max_rel_error || (i == 0 && j == 0)) {
        res = {err, i, j, a, num};
      }
    }
  }
  return res;
}

}  // namespace pisac::ad
