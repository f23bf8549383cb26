#pragma once

#include <span>
#include <vector>

#include "metatune/autodiff/check.hpp"
#include "metatune/autodiff/ops.hpp"
#include "metatune/autodiff/tape.hpp"
#include "metatune/autodiff/tensor.hpp"

namespace metatune {

/// d(output)/d(w) for each w in `wrt`. See Tape::grad.
inline std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false) {
  return output.tape().grad(output, wrt, create_graph);
}

inline std::vector<Var> grad(const Var& output, std::initializer_list<Var> wrt,
                             bool create_graph = false) {
  return grad(output, std::span<const Var>(wrt.begin(), wrt.size()), create_graph);
}

}  // namespace metatune
