#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fepr/nn/tensor.hpp"

namespace fepr::nn {

template <typename T>
using GradientMap = std::unordered_map<const Parameter<T>*, Tensor<T>>;

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

// Records executed operations in order; backward() replays them in reverse.
//
// Leaves are constants or parameters. A parameter leaf requires gradients only when
// the parameter is trainable and the tape records gradients. Parameter leaves borrow
// the parameter's storage, so parameters must outlive the tape.
template <typename T>
class Tape {
 public:
  struct BackwardContext {
    const Tensor<T>& grad;  // dL/d(output)
    const Tensor<T>& out;
    std::vector<const Tensor<T>*> inputs;
    std::vector<Tensor<T>*> input_grads;  // nullptr for inputs that need no gradient

    const Tensor<T>& in(int i) const { return *inputs[static_cast<std::size_t>(i)]; }
    Tensor<T>* grad_in(int i) const { return input_grads[static_cast<std::size_t>(i)]; }
  };
  using BackwardFn = std::function<void(const BackwardContext&)>;

  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  bool records_gradients() const noexcept { return record_gradients_; }

  Var constant(Tensor<T> value) {
    Node node;
    node.owned = std::move(value);
    return push(std::move(node));
  }

  Var parameter(Parameter<T>& param) {
    Node node;
    node.external = &param.value;
    node.param = &param;
    node.requires_grad = record_gradients_ && param.trainable;
    return push(std::move(node));
  }

  // Records an op output. The output requires gradients when any input does.
  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn fn) {
    Node node;
    node.owned = std::move(value);
    for (Var v : inputs) {
      node.inputs.push_back(v.id);
      node.requires_grad = node.requires_grad || nodes_.at(static_cast<std::size_t>(v.id)).requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).get(); }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Node ids visited by the most recent backward(), in visiting order.
  const std::vector<int>& last_backward_order() const noexcept { return visit_order_; }

  // Returns d(loss)/d(param) for every trainable parameter that the loss reaches.
  GradientMap<T> backward(Var loss) {
    const Tensor<T>& loss_value = value(loss);
    if (loss_value.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss_value.shape()));
    }
    GradientMap<T> result;
    visit_order_.clear();
    if (!requires_grad(loss)) {
      for (int id = loss.id; id >= 0; --id) visit_order_.push_back(id);
      return result;
    }

    std::vector<Tensor<T>> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.id)] = Tensor<T>(loss_value.shape(), T(1));

    for (int id = loss.id; id >= 0; --id) {
      visit_order_.push_back(id);
      Node& node = nodes_[static_cast<std::size_t>(id)];
      Tensor<T>& grad = grads[static_cast<std::size_t>(id)];
      if (!node.requires_grad || grad.empty()) continue;

      if (node.backward) {
        BackwardContext ctx{grad, node.get(), {}, {}};
        ctx.inputs.reserve(node.inputs.size());
        ctx.input_grads.reserve(node.inputs.size());
        for (int in : node.inputs) {
          Node& input = nodes_[static_cast<std::size_t>(in)];
          ctx.inputs.push_back(&input.get());
          if (input.requires_grad) {
            Tensor<T>& g = grads[static_cast<std::size_t>(in)];
            if (g.empty()) g = Tensor<T>(input.get().shape(), T(0));
            ctx.input_grads.push_back(&g);
          } else {
            ctx.input_grads.push_back(nullptr);
          }
        }
        node.backward(ctx);
      }
      if (node.param != nullptr) {
        auto [it, inserted] = result.try_emplace(node.param, std::move(grad));
        if (!inserted) {
          for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += grad[i];
        }
      }
      grad = Tensor<T>();
    }
    return result;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor<T>& get() const { return external != nullptr ? *external : owned; }
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool record_gradients_;
  std::deque<Node> nodes_;  // deque keeps value references stable across record()
  std::vector<int> visit_order_;
};

}  // namespace fepr::nn
