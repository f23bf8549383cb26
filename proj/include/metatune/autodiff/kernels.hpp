#pragma once

// Eager tensor kernels. These compute values only; the differentiable
// wrappers in ops.hpp record them on a tape together with backward rules.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "metatune/autodiff/tensor.hpp"

namespace metatune::kernels {

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t rows() const { return channels * kernel_h * kernel_w; }
  std::size_t cols() const { return out_h() * out_w(); }
};

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(op, a.shape(), "rank " + std::to_string(rank));
  }
}

template <class F>
Tensor zip(const char* op, const Tensor& a, const Tensor& b, F f) {
  require_same(op, a, b);
  Tensor out = Tensor::uninit(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return zip("add", a, b, [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return zip("sub", a, b, [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return zip("mul", a, b, [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::uninit(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  return out;
}

inline Tensor fill(const Shape& shape, double v) { return Tensor(shape, v); }

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

/// op(a) * op(b) where op transposes when the matching flag is set.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) throw ShapeError("matmul", a.shape(), b.shape());
  Tensor out = Tensor::uninit(Shape{m, n});
  const ConstMap am(a.data().data(), static_cast<Eigen::Index>(a.dim(0)),
                    static_cast<Eigen::Index>(a.dim(1)));
  const ConstMap bm(b.data().data(), static_cast<Eigen::Index>(b.dim(0)),
                    static_cast<Eigen::Index>(b.dim(1)));
  MutMap om(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!trans_a && !trans_b) {
    om.noalias() = am * bm;
  } else if (!trans_a) {
    om.noalias() = am * bm.transpose();
  } else if (!trans_b) {
    om.noalias() = am.transpose() * bm;
  } else {
    om.noalias() = am.transpose() * bm.transpose();
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::uninit(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  }
  return out;
}

/// Valid output range [lo, hi) along one axis for kernel offset `k`.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in,
                                                        std::size_t k, std::size_t stride,
                                                        std::size_t padding) {
  // Need 0 <= o*stride + k - padding < in.
  std::size_t lo = 0;
  if (k < padding) lo = (padding - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in + padding > k) hi = std::min(out, (in + padding - k - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

/// Unfolds [C,H,W] into a [C*kh*kw, Ho*Wo] patch matrix (zero padding).
inline Tensor im2col(const Tensor& x, const ConvGeometry& g) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor out = g.padding == 0 ? Tensor::uninit(Shape{g.rows(), g.cols()})
                              : Tensor(Shape{g.rows(), g.cols()});
  double* dst = out.data().data();
  const double* src = x.data().data();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      const auto [ilo, ihi] = valid_range(oh, g.height, ki, g.stride, g.padding);
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const auto [jlo, jhi] = valid_range(ow, g.width, kj, g.stride, g.padding);
        double* row = dst + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::size_t oi = ilo; oi < ihi; ++oi) {
          const double* in_row = src + (c * g.height + oi * g.stride + ki - g.padding) * g.width;
          double* out_row = row + oi * ow;
          if (g.stride == 1) {
            std::copy(in_row + jlo + kj - g.padding, in_row + jhi + kj - g.padding, out_row + jlo);
          } else {
            for (std::size_t oj = jlo; oj < jhi; ++oj) {
              out_row[oj] = in_row[oj * g.stride + kj - g.padding];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Adjoint of im2col: scatter-adds patch columns back into [C,H,W].
inline Tensor col2im(const Tensor& cols, const ConvGeometry& g) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor out(Shape{g.channels, g.height, g.width});
  double* dst = out.data().data();
  const double* src = cols.data().data();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      const auto [ilo, ihi] = valid_range(oh, g.height, ki, g.stride, g.padding);
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const auto [jlo, jhi] = valid_range(ow, g.width, kj, g.stride, g.padding);
        const double* row = src + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::size_t oi = ilo; oi < ihi; ++oi) {
          double* out_row = dst + (c * g.height + oi * g.stride + ki - g.padding) * g.width;
          const double* in_row = row + oi * ow;
          if (g.stride == 1) {
            double* __restrict o = out_row + kj - g.padding;
            const double* __restrict r = in_row;
            for (std::size_t oj = jlo; oj < jhi; ++oj) o[oj] += r[oj];
          } else {
            for (std::size_t oj = jlo; oj < jhi; ++oj) {
              out_row[oj * g.stride + kj - g.padding] += in_row[oj];
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor channel_broadcast(const Tensor& b, std::size_t h, std::size_t w) {
  require_rank("channel_broadcast", b, 1);
  Tensor out = Tensor::uninit(Shape{b.dim(0), h, w});
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < b.dim(0); ++c) {
    std::fill_n(out.data().begin() + static_cast<long>(c * plane), plane, b[c]);
  }
  return out;
}

inline Tensor channel_sum(const Tensor& x) {
  require_rank("channel_sum", x, 3);
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor out(Shape{x.dim(0)});
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
    out[c] = s;
  }
  return out;
}

inline Tensor relu_mask(const Tensor& x) {
  Tensor out = Tensor::uninit(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

/// 2x2 max pooling. `argmax` receives, per output element, the flat index of
/// the selected input element (first maximum in row-major block order).
inline Tensor max_pool2(const Tensor& x, std::vector<std::size_t>& argmax) {
  require_rank("max_pool2", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("max_pool2", x.shape(), "even H and W");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out = Tensor::uninit(Shape{c, oh, ow});
  argmax.assign(out.size(), 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ch * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + i) * ow + j;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return out;
}

inline Tensor gather(const Tensor& x, const std::vector<std::size_t>& idx, const Shape& shape) {
  Tensor out = Tensor::uninit(shape);
  for (std::size_t o = 0; o < idx.size(); ++o) out[o] = x[idx[o]];
  return out;
}

inline Tensor scatter(const Tensor& g, const std::vector<std::size_t>& idx, const Shape& shape) {
  Tensor out(shape);
  for (std::size_t o = 0; o < idx.size(); ++o) out[idx[o]] += g[o];
  return out;
}

inline Tensor upsample2(const Tensor& x) {
  require_rank("upsample2_nearest", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = Tensor::uninit(Shape{c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        out[(ch * 2 * h + i) * 2 * w + j] = x[(ch * h + i / 2) * w + j / 2];
      }
    }
  }
  return out;
}

/// Adjoint of upsample2: sums each 2x2 block.
inline Tensor sum_pool2(const Tensor& x) {
  require_rank("sum_pool2", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("sum_pool2", x.shape(), "even H and W");
  Tensor out(Shape{c, h / 2, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out[(ch * (h / 2) + i / 2) * (w / 2) + j / 2] += x[(ch * h + i) * w + j];
      }
    }
  }
  return out;
}

/// Softmax over axis 0 of a [K,H,W] tensor.
inline Tensor softmax(const Tensor& x) {
  require_rank("softmax", x, 3);
  const std::size_t k = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out = Tensor::uninit(x.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) m = std::max(m, x[c * plane + p]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double e = std::exp(x[c * plane + p] - m);
      out[c * plane + p] = e;
      z += e;
    }
    for (std::size_t c = 0; c < k; ++c) out[c * plane + p] /= z;
  }
  return out;
}

/// [K,H,W] -> [H,W] sum over the leading axis.
inline Tensor class_sum(const Tensor& x) {
  require_rank("class_sum", x, 3);
  const std::size_t k = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out(Shape{x.dim(1), x.dim(2)});
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t p = 0; p < plane; ++p) out[p] += x[c * plane + p];
  }
  return out;
}

inline Tensor class_broadcast(const Tensor& x, std::size_t k) {
  require_rank("class_broadcast", x, 2);
  const std::size_t plane = x.size();
  Tensor out = Tensor::uninit(Shape{k, x.dim(0), x.dim(1)});
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(x.data().begin(), x.data().end(),
              out.data().begin() + static_cast<long>(c * plane));
  }
  return out;
}

}  // namespace metatune::kernels
