#pragma once

// Tiny fully convolutional encoder-decoder:
//
//   enc1   conv3x3(in -> w)     relu  maxpool2
//   enc2   conv3x3(w -> 2w)     relu  maxpool2
//   bottle conv3x3(2w -> 4w)    relu
//   dec1   upsample2  conv3x3(4w -> 2w)  relu
//   dec2   upsample2  conv3x3(2w -> w)   relu
//   head   conv1x1(w -> classes)
//
// All 3x3 convolutions use stride 1 and "same" zero padding.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metatune/autodiff.hpp"
#include "metatune/rng.hpp"
#include "metatune/sample.hpp"

namespace metatune {

struct NetworkConfig {
  std::uint32_t in_channels = 4;
  std::uint32_t num_classes = 4;
  std::uint32_t base_width = 8;
  std::uint32_t image_size = 64;
  std::uint32_t kernel_size = 3;

  void validate() const {
    if (in_channels == 0) throw ValueError("NetworkConfig", "in_channels must be positive");
    if (num_classes < 2) throw ValueError("NetworkConfig", "num_classes must be >= 2");
    if (num_classes > 256) throw ValueError("NetworkConfig", "num_classes must fit in a byte");
    if (base_width == 0) throw ValueError("NetworkConfig", "base_width must be positive");
    if (image_size == 0 || image_size % 4 != 0) {
      throw ValueError("NetworkConfig", "image_size must be a positive multiple of 4");
    }
    if (kernel_size % 2 == 0) throw ValueError("NetworkConfig", "kernel_size must be odd");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct LayerSpec {
  std::string name;
  std::size_t out_channels;
  std::size_t in_channels;
  std::size_t kernel;
};

inline std::vector<LayerSpec> layer_table(const NetworkConfig& cfg) {
  const std::size_t w = cfg.base_width, k = cfg.kernel_size;
  return {
      {"enc1", w, cfg.in_channels, k},     {"enc2", 2 * w, w, k},
      {"bottleneck", 4 * w, 2 * w, k},     {"dec1", 2 * w, 4 * w, k},
      {"dec2", w, 2 * w, k},               {"head", cfg.num_classes, w, 1},
  };
}

/// Network parameters: kernel then bias for each layer of layer_table().
struct ParamVector {
  NetworkConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors) n += t.size();
    return n;
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Total scalar parameter count implied by the layer table.
inline std::size_t param_count(const NetworkConfig& cfg) {
  std::size_t n = 0;
  for (const LayerSpec& l : layer_table(cfg)) {
    n += l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels;
  }
  return n;
}

/// Kernels ~ U(-s, s) with s = sqrt(1 / fan_in), drawn layer by layer in
/// row-major order from Rng(seed); biases zero.
inline ParamVector init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamVector p;
  p.config = cfg;
  Rng rng(seed);
  for (const LayerSpec& l : layer_table(cfg)) {
    const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor kernel(Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
    for (double& v : kernel.data()) v = rng.uniform(-s, s);
    p.names.push_back(l.name + ".weight");
    p.tensors.push_back(std::move(kernel));
    p.names.push_back(l.name + ".bias");
    p.tensors.push_back(Tensor(Shape{l.out_channels}));
  }
  return p;
}

inline ParamVector zeros_like(const ParamVector& p) {
  ParamVector z = p;
  for (Tensor& t : z.tensors) std::fill(t.data().begin(), t.data().end(), 0.0);
  return z;
}

inline void check_image(const NetworkConfig& cfg, const Tensor& image) {
  const Shape want{cfg.in_channels, cfg.image_size, cfg.image_size};
  if (image.shape() != want) throw ShapeError("segnet.forward", image.shape(), want);
}

/// Records the forward pass on `image`'s tape. `params` are handles in
/// ParamVector order.
inline Var forward(const NetworkConfig& cfg, std::span<const Var> params, const Var& image) {
  check_image(cfg, image.value());
  if (params.size() != 12) {
    throw ValueError("segnet.forward", "expected 12 parameter tensors, got " +
                                           std::to_string(params.size()));
  }
  const std::size_t pad = cfg.kernel_size / 2;
  auto conv = [&](const Var& x, std::size_t layer, std::size_t padding) {
    return bias_add(conv2d(x, params[2 * layer], 1, padding), params[2 * layer + 1]);
  };
  Var h = max_pool2(relu(conv(image, 0, pad)));
  h = max_pool2(relu(conv(h, 1, pad)));
  h = relu(conv(h, 2, pad));
  h = relu(conv(upsample2_nearest(h), 3, pad));
  h = relu(conv(upsample2_nearest(h), 4, pad));
  return conv(h, 5, 0);
}

inline std::vector<Var> leaves(Tape& tape, const ParamVector& p) {
  std::vector<Var> out;
  out.reserve(p.tensors.size());
  for (const Tensor& t : p.tensors) out.push_back(tape.leaf(t));
  return out;
}

/// Mean per-pixel cross-entropy of the network's logits against the labels.
inline Var loss(const NetworkConfig& cfg, std::span<const Var> params, const Sample& sample) {
  Tape& tape = params.front().tape();
  const Var logits = forward(cfg, params, tape.constant(sample.image));
  return softmax_cross_entropy(logits, sample.labels);
}

/// Logits without recording a graph.
inline Tensor forward(const ParamVector& p, const Tensor& image) {
  Tape tape;
  tape.set_grad_enabled(false);
  std::vector<Var> vars;
  for (const Tensor& t : p.tensors) vars.push_back(tape.constant(t));
  return forward(p.config, vars, tape.constant(image)).value();
}

inline double loss_value(const ParamVector& p, const Sample& sample) {
  Tape tape;
  tape.set_grad_enabled(false);
  std::vector<Var> vars;
  for (const Tensor& t : p.tensors) vars.push_back(tape.constant(t));
  return loss(p.config, vars, sample).item();
}

/// Per-pixel argmax over [K,H,W] logits; ties go to the lowest class.
inline LabelMap argmax_labels(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("predict", logits.shape(), "[K,H,W]");
  const std::size_t k = logits.dim(0), h = logits.dim(1), w = logits.dim(2), plane = h * w;
  LabelMap out(h, w);
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits[c * plane + p] > logits[best * plane + p]) best = c;
    }
    out.data[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

inline LabelMap predict(const ParamVector& p, const Tensor& image) {
  return argmax_labels(forward(p, image));
}

}  // namespace metatune
