#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "partsmamba/tensor.hpp"

namespace partsmamba {

/// A named learnable tensor and its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Owns every parameter of a model in declaration order. Addresses are
/// stable for the lifetime of the store.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param& add(std::string name, Tensor value);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Records differentiable operations in execution order and replays them
/// in reverse to accumulate gradients.
///
/// One tape serves one forward/backward pass on one thread.
class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out, Tape& tape)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; repeated calls with the same parameter
  /// return the same handle.
  Var param(const Param& p);

  /// True when gradients must flow into any of `inputs`.
  bool needs_grad(std::initializer_list<Var> inputs) const;
  bool needs_grad(const std::vector<Var>& inputs) const;

  /// Appends an operation result. `backward` may be empty when no input
  /// requires a gradient. Throws NumericError on non-finite output.
  Var record(std::string op, Tensor value, Backward backward);

  void backward(Var root);
  void accumulate(std::size_t id, const Tensor& g);
  void accumulate(std::size_t id, std::size_t flat_index, double g);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward root with respect to `v`; zeros if
  /// nothing flowed there.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adds the gradients of every bound parameter into the matching
  /// entry of `store`.
  void accumulate_param_grads(ParamStore& store) const;
  /// Gradient per bound parameter, in binding order.
  std::vector<std::pair<const Param*, Tensor>> param_grads() const;

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  /// Node ids in the order the last backward pass visited them.
  const std::vector<std::size_t>& backward_order() const { return visit_order_; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
    const Param* param = nullptr;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
  std::vector<const Param*> param_order_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace partsmamba
