#pragma once

// Differentiable operations. Every backward rule is written in terms of
// these same operations, so a backward sweep recorded with create_graph is
// itself differentiable.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "metatune/autodiff/kernels.hpp"
#include "metatune/autodiff/tape.hpp"
#include "metatune/label_map.hpp"

namespace metatune {

inline Var sum(const Var& a);
inline Var reshape(const Var& a, Shape shape);

/// Repeats a one-element tensor to `shape`.
inline Var broadcast_scalar(const Var& s, const Shape& shape) {
  if (s.value().size() != 1) throw ShapeError("broadcast_scalar", s.shape(), "one element");
  Tensor out(shape, s.value()[0]);
  const Shape from = s.shape();
  return s.tape().record("broadcast_scalar", {s}, std::move(out),
                         [from](const Var&, const Var& g) {
                           return std::vector<Var>{reshape(sum(g), from)};
                         });
}

namespace detail {

// Scalar-tensor broadcasting is the only broadcasting supported.
inline std::pair<Var, Var> conform(const char* op, const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return {a, b};
  if (a.value().size() == 1) return {broadcast_scalar(a, b.shape()), b};
  if (b.value().size() == 1) return {a, broadcast_scalar(b, a.shape())};
  throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace detail

inline Var scale(const Var& a, double c);

inline Var add(const Var& a0, const Var& b0) {
  auto [a, b] = detail::conform("add", a0, b0);
  return a.tape().record("add", {a, b}, kernels::add(a.value(), b.value()),
                         [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

inline Var sub(const Var& a0, const Var& b0) {
  auto [a, b] = detail::conform("sub", a0, b0);
  return a.tape().record("sub", {a, b}, kernels::sub(a.value(), b.value()),
                         [](const Var&, const Var& g) {
                           return std::vector<Var>{g, scale(g, -1.0)};
                         });
}

inline Var mul(const Var& a0, const Var& b0) {
  auto [a, b] = detail::conform("mul", a0, b0);
  return a.tape().record("mul", {a, b}, kernels::mul(a.value(), b.value()),
                         [a, b](const Var&, const Var& g) {
                           Var ga, gb;
                           if (a.requires_grad()) ga = mul(g, b);
                           if (b.requires_grad()) gb = mul(g, a);
                           return std::vector<Var>{ga, gb};
                         });
}

inline Var scale(const Var& a, double c) {
  return a.tape().record("scale", {a}, kernels::scale(a.value(), c),
                         [c](const Var&, const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var sum(const Var& a) {
  const Shape from = a.shape();
  return a.tape().record("sum", {a}, Tensor::scalar(kernels::sum(a.value())),
                         [from](const Var&, const Var& g) {
                           return std::vector<Var>{broadcast_scalar(g, from)};
                         });
}

inline Var reshape(const Var& a, Shape shape) {
  const Shape from = a.shape();
  return a.tape().record("reshape", {a}, a.value().reshaped(std::move(shape)),
                         [from](const Var&, const Var& g) {
                           return std::vector<Var>{reshape(g, from)};
                         });
}

inline Var transpose(const Var& a) {
  return a.tape().record("transpose", {a}, kernels::transpose(a.value()),
                         [](const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

/// op(a) * op(b); the flags select transposed operands without copying.
inline Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false) {
  return a.tape().record(
      "matmul", {a, b}, kernels::matmul(a.value(), b.value(), trans_a, trans_b),
      [a, b, trans_a, trans_b](const Var&, const Var& g) {
        Var ga, gb;
        if (a.requires_grad()) ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        if (b.requires_grad()) gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        return std::vector<Var>{ga, gb};
      });
}

inline Var col2im(const Var& cols, const kernels::ConvGeometry& geom);

inline Var im2col(const Var& x, const kernels::ConvGeometry& geom) {
  return x.tape().record("im2col", {x}, kernels::im2col(x.value(), geom),
                         [geom](const Var&, const Var& g) {
                           return std::vector<Var>{col2im(g, geom)};
                         });
}

inline Var col2im(const Var& cols, const kernels::ConvGeometry& geom) {
  return cols.tape().record("col2im", {cols}, kernels::col2im(cols.value(), geom),
                            [geom](const Var&, const Var& g) {
                              return std::vector<Var>{im2col(g, geom)};
                            });
}

inline Var channel_sum(const Var& x);

/// [C] -> [C,H,W], each channel filled with its bias value.
inline Var channel_broadcast(const Var& b, std::size_t h, std::size_t w) {
  return b.tape().record("channel_broadcast", {b}, kernels::channel_broadcast(b.value(), h, w),
                         [](const Var&, const Var& g) { return std::vector<Var>{channel_sum(g)}; });
}

inline Var channel_sum(const Var& x) {
  const std::size_t h = x.shape().at(1), w = x.shape().at(2);
  return x.tape().record("channel_sum", {x}, kernels::channel_sum(x.value()),
                         [h, w](const Var&, const Var& g) {
                           return std::vector<Var>{channel_broadcast(g, h, w)};
                         });
}

/// Adds a per-channel bias [C] to a [C,H,W] tensor.
inline Var bias_add(const Var& x, const Var& bias) {
  if (x.shape().size() != 3 || bias.shape().size() != 1 || bias.shape()[0] != x.shape()[0]) {
    throw ShapeError("bias_add", x.shape(), bias.shape());
  }
  return add(x, channel_broadcast(bias, x.shape()[1], x.shape()[2]));
}

/// 2-D cross-correlation. input [C_in,H,W], kernel [C_out,C_in,kH,kW].
inline Var conv2d(const Var& input, const Var& kernel, std::size_t stride = 1,
                  std::size_t padding = 0) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 3 || ks.size() != 4 || ks[1] != xs[0]) throw ShapeError("conv2d", xs, ks);
  if (stride == 0) throw ValueError("conv2d", "stride must be positive");
  if (xs[1] + 2 * padding < ks[2] || xs[2] + 2 * padding < ks[3]) {
    throw ShapeError("conv2d", xs, ks);
  }
  const kernels::ConvGeometry geom{xs[0], xs[1], xs[2], ks[2], ks[3], stride, padding};
  const Var cols = im2col(input, geom);
  const Var wmat = reshape(kernel, Shape{ks[0], geom.rows()});
  return reshape(matmul(wmat, cols), Shape{ks[0], geom.out_h(), geom.out_w()});
}

inline Var relu(const Var& a) {
  Tensor mask = kernels::relu_mask(a.value());
  Tensor out = kernels::mul(a.value(), mask);
  return a.tape().record("relu", {a}, std::move(out),
                         [mask = std::move(mask)](const Var& self, const Var& g) {
                           return std::vector<Var>{mul(g, self.tape().constant(mask))};
                         });
}

inline Var pool_scatter(const Var& g, std::shared_ptr<const std::vector<std::size_t>> idx,
                 const Shape& in_shape);

inline Var pool_gather(const Var& x, std::shared_ptr<const std::vector<std::size_t>> idx,
                       const Shape& out_shape) {
  const Shape in_shape = x.shape();
  return x.tape().record("pool_gather", {x}, kernels::gather(x.value(), *idx, out_shape),
                         [idx, in_shape](const Var&, const Var& g) {
                           return std::vector<Var>{pool_scatter(g, idx, in_shape)};
                         });
}

inline Var pool_scatter(const Var& g, std::shared_ptr<const std::vector<std::size_t>> idx,
                        const Shape& in_shape) {
  const Shape out_shape = g.shape();
  return g.tape().record("pool_scatter", {g}, kernels::scatter(g.value(), *idx, in_shape),
                         [idx, out_shape](const Var&, const Var& h) {
                           return std::vector<Var>{pool_gather(h, idx, out_shape)};
                         });
}

/// 2x2 max pooling with stride 2 over [C,H,W]; H and W must be even.
inline Var max_pool2(const Var& a) {
  auto idx = std::make_shared<std::vector<std::size_t>>();
  Tensor out = kernels::max_pool2(a.value(), *idx);
  const Shape in_shape = a.shape();
  std::shared_ptr<const std::vector<std::size_t>> shared = idx;
  return a.tape().record("max_pool2", {a}, std::move(out),
                         [shared, in_shape](const Var&, const Var& g) {
                           return std::vector<Var>{pool_scatter(g, shared, in_shape)};
                         });
}

inline Var sum_pool2(const Var& a);

inline Var upsample2_nearest(const Var& a) {
  return a.tape().record("upsample2_nearest", {a}, kernels::upsample2(a.value()),
                         [](const Var&, const Var& g) { return std::vector<Var>{sum_pool2(g)}; });
}

inline Var sum_pool2(const Var& a) {
  return a.tape().record("sum_pool2", {a}, kernels::sum_pool2(a.value()),
                         [](const Var&, const Var& g) {
                           return std::vector<Var>{upsample2_nearest(g)};
                         });
}

inline Var class_broadcast(const Var& x, std::size_t k);

inline Var class_sum(const Var& x) {
  const std::size_t k = x.shape().at(0);
  return x.tape().record("class_sum", {x}, kernels::class_sum(x.value()),
                         [k](const Var&, const Var& g) {
                           return std::vector<Var>{class_broadcast(g, k)};
                         });
}

inline Var class_broadcast(const Var& x, std::size_t k) {
  return x.tape().record("class_broadcast", {x}, kernels::class_broadcast(x.value(), k),
                         [](const Var&, const Var& g) { return std::vector<Var>{class_sum(g)}; });
}

/// Softmax over the class axis of [K,H,W] logits.
inline Var softmax(const Var& logits) {
  const std::size_t k = logits.shape().at(0);
  return logits.tape().record("softmax", {logits}, kernels::softmax(logits.value()),
                              [k](const Var& s, const Var& g) {
                                const Var sg = mul(s, g);
                                return std::vector<Var>{sub(sg, mul(s, class_broadcast(class_sum(sg), k)))};
                              });
}

/// Mean over pixels of -log softmax(logits)[label]. logits [K,H,W], labels
/// [H,W] with values in 0..K-1. Evaluated with the log-sum-exp shift.
inline Var softmax_cross_entropy(const Var& logits, const LabelMap& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 3 || z.dim(1) != labels.height || z.dim(2) != labels.width) {
    throw ShapeError("softmax_cross_entropy", z.shape(), Shape{labels.height, labels.width});
  }
  const std::size_t k = z.dim(0), plane = labels.size();
  Tensor onehot(z.shape());
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    const std::size_t y = labels.data[p];
    if (y >= k) {
      throw ValueError("softmax_cross_entropy", "label " + std::to_string(y) +
                                                    " out of range for " + std::to_string(k) +
                                                    " classes");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) m = std::max(m, z[c * plane + p]);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c * plane + p] - m);
    total += m + std::log(s) - z[y * plane + p];
    onehot[y * plane + p] = 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(plane);
  return logits.tape().record(
      "softmax_cross_entropy", {logits}, Tensor::scalar(total * inv_n),
      [logits, onehot = std::move(onehot), inv_n](const Var& self, const Var& g) {
        const Var diff = sub(softmax(logits), self.tape().constant(onehot));
        return std::vector<Var>{scale(mul(g, diff), inv_n)};
      });
}

}  // namespace metatune
