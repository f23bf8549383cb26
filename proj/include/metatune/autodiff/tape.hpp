#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metatune/autodiff/kernels.hpp"
#include "metatune/autodiff/tensor.hpp"
#include "metatune/error.hpp"

namespace metatune {

class Tape;

/// Handle to a tensor recorded on a tape. Cheap to copy; only valid while
/// the owning tape is alive.
class Var {
 public:
  Var() = default;

  bool defined() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the node's own handle and the incoming gradient; returns one
/// gradient per input (an undefined Var means "no contribution").
using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& grad)>;

struct Node {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool requires_grad = false;
  BackwardFn backward;
};

/// Append-only record of operations. Backward sweeps are themselves recorded
/// on the same tape when `create_graph` is set, which is what makes
/// gradient-of-gradient work.
///
/// A tape is a single-threaded object. Separate tapes share nothing.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (e.g. a network parameter).
  Var leaf(Tensor value) { return push("leaf", {}, std::move(value), true, nullptr); }

  /// A tensor that never receives a gradient.
  Var constant(Tensor value) { return push("constant", {}, std::move(value), false, nullptr); }

  Var record(std::string op, const std::vector<Var>& inputs, Tensor value, BackwardFn backward) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      check_owned(v, op);
      ids.push_back(v.id());
      needs = needs || nodes_[v.id()].requires_grad;
    }
    needs = needs && grad_enabled_;
    if (!needs) {
      ids.clear();
      backward = nullptr;
    }
    return push(std::move(op), std::move(ids), std::move(value), needs, std::move(backward));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }

  void check_owned(const Var& v, const std::string& op) const {
    if (!v.defined() || &v.tape() != this || v.id() >= nodes_.size()) {
      throw Error(op, "tensor not on this tape");
    }
  }

  /// Reverse-mode gradient of a scalar `output` with respect to each tensor
  /// in `wrt`. With `create_graph` the results are differentiable handles on
  /// this tape; otherwise they are constants and the sweep's intermediates
  /// are discarded. Inputs that do not influence `output` get zeros.
  std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph);

 private:
  Var push(std::string op, std::vector<std::size_t> inputs, Tensor value, bool requires_grad,
           BackwardFn backward) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), requires_grad,
                          std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  Var accumulate(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ShapeError("grad accumulate", a.shape(), b.shape());
    return record("add", {a, b}, kernels::add(a.value(), b.value()),
                  [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
  }

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

/// Disables graph construction on one tape for the guard's lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.grad_enabled()) {
    tape_.set_grad_enabled(false);
  }
  ~NoGradGuard() { tape_.set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool previous_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw Error("Var", "undefined tensor handle");
  return tape_->node(id_).value;
}

inline bool Var::requires_grad() const { return tape_ && tape_->node(id_).requires_grad; }

inline std::vector<Var> Tape::grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
  check_owned(output, "grad");
  if (output.value().size() != 1) throw ShapeError("grad", output.shape(), "a scalar output");
  for (const Var& w : wrt) check_owned(w, "grad");
  if (wrt.empty()) return {};

  const std::size_t end = output.id() + 1;
  const std::size_t mark = nodes_.size();

  // A node is relevant if it requires grad and some wrt tensor feeds it.
  std::vector<char> relevant(end, 0);
  for (const Var& w : wrt) {
    if (w.id() < end) relevant[w.id()] = 1;
  }
  for (std::size_t id = 0; id < end; ++id) {
    const Node& n = nodes_[id];
    if (relevant[id] || !n.requires_grad) continue;
    for (std::size_t in : n.inputs) {
      if (relevant[in]) {
        relevant[id] = 1;
        break;
      }
    }
  }

  const bool previous = grad_enabled_;
  grad_enabled_ = create_graph;
  std::vector<std::optional<Var>> acc(end);
  std::vector<Var> result;
  try {
    acc[output.id()] = constant(Tensor(output.shape(), 1.0));
    for (std::size_t id = end; id-- > 0;) {
      if (!relevant[id] || !acc[id]) continue;
      const Node& n = nodes_[id];
      if (!n.backward) continue;
      const std::vector<std::size_t> inputs = n.inputs;
      const std::vector<Var> grads = n.backward(Var(this, id), *acc[id]);
      for (std::size_t k = 0; k < inputs.size() && k < grads.size(); ++k) {
        const std::size_t in = inputs[k];
        if (!relevant[in] || !grads[k].defined()) continue;
        acc[in] = acc[in] ? accumulate(*acc[in], grads[k]) : grads[k];
      }
    }
  } catch (...) {
    grad_enabled_ = previous;
    throw;
  }
  grad_enabled_ = previous;

  if (create_graph) {
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
      if (w.id() < end && acc[w.id()]) {
        result.push_back(*acc[w.id()]);
      } else {
        result.push_back(constant(Tensor(w.shape(), 0.0)));
      }
    }
    return result;
  }

  std::vector<Tensor> values;
  values.reserve(wrt.size());
  for (const Var& w : wrt) {
    values.push_back(w.id() < end && acc[w.id()] ? acc[w.id()]->value() : Tensor(w.shape(), 0.0));
  }
  acc.clear();
  nodes_.resize(mark);
  for (Tensor& v : values) result.push_back(constant(std::move(v)));
  return result;
}

}  // namespace metatune
