#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>

#include "gpmotion/tensor.hpp"

namespace gpmotion {

class Tape;

/// Trainable tensor with its gradient accumulator and Adam state.
struct Parameter {
  Parameter(std::string name, Tensor init);

  void zero_grad() noexcept { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor moment1;
  Tensor moment2;
  std::int64_t step = 0;
};

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive and not cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so the recorded list is already
/// topologically sorted; backward() walks it once in reverse. A node only
/// keeps its backward closure when at least one input requires a gradient,
/// so inference-only graphs cost nothing extra.
class Tape {
 public:
  /// Accumulates d(loss)/d(inputs) given the node's own gradient.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& param);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node; allocated (zeros) on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Gradients
  /// of bound Parameters are added to Parameter::grad (unreached ones are left
  /// untouched, i.e. receive zero). Throws ShapeError for a non-scalar loss.
  void backward(Var loss);

  /// When enabled every recorded value and every gradient is checked for
  /// NaN/Inf; a violation raises NumericError.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }
  bool check_finite() const noexcept { return check_finite_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  bool check_finite_ = false;
};

}  // namespace gpmotion
