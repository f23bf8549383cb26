#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "metatune/metatune.hpp"
#include "metatune/synthdata.hpp"
#include "test_support.hpp"

namespace metatune::testing::oracles {

// Independent pixel counter for the oracle comparison.
inline double brute_dice(const LabelMap& a, const LabelMap& b, std::uint8_t c) {
  long both = 0, na = 0, nb = 0;
  for (std::size_t y = 0; y < a.height; ++y) {
    for (std::size_t x = 0; x < a.width; ++x) {
      const bool pa = a(y, x) == c, pb = b(y, x) == c;
      if (pa) ++na;
      if (pb) ++nb;
      if (pa && pb) ++both;
    }
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// L(theta; c) = 1/2 (theta - c)^T A (theta - c), A symmetric.
struct Quadratic {
  std::vector<double> c;
  std::vector<double> a;  // row-major n x n
};

inline Var quadratic_loss(std::span<const Var> theta, const Quadratic& q) {
  Tape& tape = theta[0].tape();
  const std::size_t n = q.c.size();
  const Var d = sub(theta[0], tape.constant(Tensor(Shape{n}, q.c)));
  const Var ad = reshape(matmul(tape.constant(Tensor(Shape{n, n}, q.a)), reshape(d, {n, 1})), {n});
  return scale(sum(mul(d, ad)), 0.5);
}

// L(theta; c) = c . theta (zero Hessian).
inline Var linear_loss(std::span<const Var> theta, const Quadratic& q) {
  return sum(mul(theta[0], theta[0].tape().constant(Tensor(Shape{q.c.size()}, q.c))));
}

inline std::vector<double> matvec(const std::vector<double>& a, const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i] += a[i * n + j] * x[j];
  }
  return y;
}

// Closed-form meta-gradient for one pair: theta' = theta - alpha^k A(theta-c)
// steps, g = (I - alpha A)^k A (theta' - c') (second order) or A(theta' - c').
inline std::vector<double> quadratic_meta_grad(const std::vector<double>& theta, const Quadratic& in,
                                        const Quadratic& out, double alpha, std::size_t steps,
                                        bool second_order) {
  const std::size_t n = theta.size();
  std::vector<double> t = theta;
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = t[i] - in.c[i];
    const auto g = matvec(in.a, d);
    for (std::size_t i = 0; i < n; ++i) t[i] -= alpha * g[i];
  }
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = t[i] - out.c[i];
  std::vector<double> g = matvec(out.a, r);
  if (second_order) {
    for (std::size_t s = 0; s < steps; ++s) {
      const auto ag = matvec(in.a, g);  // A symmetric, so (I - aA)^T = I - aA
      for (std::size_t i = 0; i < n; ++i) g[i] -= alpha * ag[i];
    }
  }
  return g;
}

inline Quadratic random_quadratic(Rng& rng, std::size_t n, const std::vector<double>& a) {
  Quadratic q{std::vector<double>(n), a};
  for (double& v : q.c) v = rng.uniform(-3.0, 3.0);
  return q;
}

inline std::vector<double> random_spd(Rng& rng, std::size_t n) {
  std::vector<double> b(n * n), a(n * n, 0.0);
  for (double& v : b) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) a[i * n + j] += b[i * n + k] * b[j * n + k];
    }
    a[i * n + i] += 0.5;
  }
  return a;
}

// Tiny net with positive biases. Near-dead units leave gradients around
// 1e-7, where central differences are mostly rounding.
inline ParamVector fd_friendly_params(Rng& rng, std::uint64_t init_seed) {
  NetworkConfig c;
  c.base_width = 2;
  c.image_size = 16;
  ParamVector p = init_params(c, init_seed);
  for (Tensor& t : p.tensors) {
    if (t.rank() == 1) t = random_tensor(rng, t.shape(), 0.1, 0.3);
  }
  return p;
}

/// Worst relative error of the segnet loss gradient on a synthetic 16x16 slice.
inline double segnet_gradcheck_error(Rng& rng, int trial) {
  const ParamVector p = fd_friendly_params(rng, 10 + static_cast<std::uint64_t>(trial));
  GenConfig g;
  g.image_size = 16;
  g.slices = 5;
  const Sample s = gen_patient(trial % 2 ? Domain::source : Domain::target, static_cast<std::uint64_t>(trial), g)
                       .slices[2];
  const NetworkConfig c = p.config;
  return finite_diff_check([&](Tape&, std::span<const Var> vars) { return loss(c, vars, s); }, p.tensors, 1e-5);
}

struct MetaFdResult {
  double worst_rel = 0.0;
  double outer_loss_gap = 0.0;
};

/// Second-order meta-gradient of one (D, D') pair against central
/// differences of F(theta) = L(theta - alpha grad L(theta; D); D').
inline MetaFdResult segnet_meta_fd(Rng& rng, double alpha) {
  const ParamVector p = fd_friendly_params(rng, 3);
  const NetworkConfig net = p.config;
  const Sample d{random_tensor(rng, {4, 16, 16}, 0.0, 1.0), random_labels(rng, 16, 16, 4)};
  const Sample d2{random_tensor(rng, {4, 16, 16}, 0.0, 1.0), random_labels(rng, 16, 16, 4)};
  const std::vector<TaskPair<Sample>> pairs{{&d, &d2}};
  MetaTuneConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = 0.1;
  const TaskLoss<Sample> task = segmentation_loss(net);
  const auto r = meta_step<Sample>(p.tensors, pairs, task, cfg);

  auto composed = [&](const std::vector<Tensor>& theta) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : theta) vars.push_back(tape.leaf(t));
    return task(inner_adapt<Sample>(vars, task, d, alpha, 1, false), d2).item();
  };
  MetaFdResult out;
  out.outer_loss_gap = std::abs(r.outer_loss - composed(p.tensors));
  std::vector<Tensor> probe = p.tensors;
  const double eps = 1e-5;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t j = 0; j < probe[k].size(); ++j) {
      const double orig = probe[k][j];
      probe[k][j] = orig + eps;
      const double up = composed(probe);
      probe[k][j] = orig - eps;
      const double down = composed(probe);
      probe[k][j] = orig;
      const double fd = (up - down) / (2.0 * eps), an = r.meta_grad[k][j];
      out.worst_rel = std::max(out.worst_rel, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-12}));
    }
  }
  return out;
}

}  // namespace metatune::testing::oracles
