#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "metatune/autodiff/tape.hpp"

namespace metatune {

/// Builds a scalar loss on `tape` from the given parameter handles.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

inline double evaluate_loss(const LossBuilder& loss_fn, const std::vector<Tensor>& params) {
  // Leaves rather than constants: the builder may itself take gradients.
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.leaf(p));
  const double v = loss_fn(tape, vars).item();
  if (!std::isfinite(v)) throw NonFiniteError("finite_diff_check", "loss is not finite");
  return v;
}

/// Compares reverse-mode gradients of `loss_fn` at `params` against central
/// differences with step `eps`. Returns the largest per-coordinate
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12); 0 for no params.
inline double finite_diff_check(const LossBuilder& loss_fn, const std::vector<Tensor>& params,
                                double eps) {
  if (!(eps > 0.0)) throw ValueError("finite_diff_check", "eps must be positive");
  if (params.empty()) return 0.0;

  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
  const Var loss = loss_fn(tape, leaves);
  if (!std::isfinite(loss.item())) throw NonFiniteError("finite_diff_check", "loss is not finite");
  const std::vector<Var> grads = tape.grad(loss, leaves, false);

  double worst = 0.0;
  std::vector<Tensor> probe = params;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Tensor& analytic = grads[t].value();
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double orig = params[t][i];
      probe[t][i] = orig + eps;
      const double up = evaluate_loss(loss_fn, probe);
      probe[t][i] = orig - eps;
      const double down = evaluate_loss(loss_fn, probe);
      probe[t][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace metatune
