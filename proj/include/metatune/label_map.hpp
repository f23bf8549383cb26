#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "metatune/error.hpp"

namespace metatune {

/// Per-pixel class indices of one slice, row-major [height, width].
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::uint8_t& operator()(std::size_t i, std::size_t j) { return data[i * width + j]; }
  std::uint8_t operator()(std::size_t i, std::size_t j) const { return data[i * width + j]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace metatune
