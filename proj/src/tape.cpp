#include "gpmotion/tape.hpp"

#include "gpmotion/errors.hpp"

namespace gpmotion {

Parameter::Parameter(std::string name_, Tensor init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(value.shape()),
      moment1(value.shape()),
      moment2(value.shape()) {}

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  if (check_finite_ && !value.all_finite()) throw NumericError("non-finite constant recorded on tape");
  nodes_.push_back(Node{std::move(value), {}, {}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
  if (check_finite_ && !param.value.all_finite())
    throw NumericError("non-finite value in parameter " + param.name);
  nodes_.push_back(Node{param.value, {}, {}, true, &param});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  if (check_finite_ && !value.all_finite()) throw NumericError("non-finite activation recorded on tape");
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.valid() && &in.tape() != this) throw ShapeError("operation mixes vars from different tapes");
    needs = needs || (in.valid() && nodes_[in.id()].requires_grad);
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs, nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ShapeError("backward: loss belongs to another tape");
  if (nodes_[loss.id()].value.size() != 1) throw ShapeError("backward: loss must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor();
  grad(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (check_finite_ && !n.grad.all_finite()) throw NumericError("non-finite gradient during backward");
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto& acc = n.param->grad;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += n.grad[i];
    }
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace gpmotion
