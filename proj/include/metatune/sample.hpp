#pragma once

#include <cstddef>

#include "metatune/autodiff/tensor.hpp"
#include "metatune/label_map.hpp"

namespace metatune {

/// One slice: a multi-channel image [C,H,W] and its per-pixel labels [H,W].
struct Sample {
  Tensor image;
  LabelMap labels;

  friend bool operator==(const Sample&, const Sample&) = default;
};

}  // namespace metatune
