#include "partsmamba/autograd.hpp"

namespace partsmamba {

Param& ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Param>(std::move(name), std::move(value)));
  return *params_.back();
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(const Param& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.op = "param:" + p.name;
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id);
  param_order_.push_back(&p);
  return v;
}

bool Tape::needs_grad(std::initializer_list<Var> inputs) const {
  if (!grad_enabled_) return false;
  for (const auto& v : inputs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

bool Tape::needs_grad(const std::vector<Var>& inputs) const {
  if (!grad_enabled_) return false;
  for (const auto& v : inputs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

Var Tape::record(std::string op, Tensor value, Backward backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + op + " (node " +
                       std::to_string(nodes_.size()) + ")");
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && static_cast<bool>(backward);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    require_shape(g, n.value.shape(), "gradient");
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate(std::size_t id, std::size_t flat_index, double g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  n.grad[flat_index] += g;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward root belongs to another tape");
  if (nodes_[root.id].value.numel() != 1) {
    throw ShapeError("backward root must be a scalar, got " +
                     shape_str(nodes_[root.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  visit_order_.clear();
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape(), 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    visit_order_.push_back(i);
    n.backward(n.grad, *this);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate_param_grads(ParamStore& store) const {
  for (const Param* p : param_order_) {
    const Node& n = nodes_[param_nodes_.at(p)];
    if (!n.grad.empty()) store.get(p->name).grad += n.grad;
  }
}

std::vector<std::pair<const Param*, Tensor>> Tape::param_grads() const {
  std::vector<std::pair<const Param*, Tensor>> out;
  out.reserve(param_order_.size());
  for (const Param* p : param_order_) {
    const Node& n = nodes_[param_nodes_.at(p)];
    out.emplace_back(p, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

}  // namespace partsmamba
