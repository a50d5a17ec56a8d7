#pragma once

#include "lfsr/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace lfsr {

template <typename Scalar>
class Var;

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename Scalar>
struct Node {
  using BackwardFn =
      std::function<std::vector<Var<Scalar>>(const Var<Scalar>&, const std::vector<bool>&)>;

  Tensor<Scalar> value;
  bool requires_grad = false;
  std::vector<Var<Scalar>> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

/// Whether newly created ops record their inputs for differentiation.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// RAII switch for graph recording on the current thread.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = enabled;
  }
  ~GradModeGuard() { detail::grad_mode_flag() = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGrad : GradModeGuard {
  NoGrad() : GradModeGuard(false) {}
};

/// Handle to a node of the differentiation graph. Copies share the node.
template <typename Scalar>
class Var {
 public:
  using Node = detail::Node<Scalar>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  /// Trainable leaf.
  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }
  static Var constant(Tensor<Scalar> value) { return Var(std::move(value), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  /// Direct access for optimizers and in-place clipping of leaves.
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  Scalar item() const { return node_->value.item(); }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  Node* node() const { return node_.get(); }

  /// Builds an op result. Parents and the backward rule are kept only when
  /// recording is enabled and some parent needs a gradient.
  static Var make(Tensor<Scalar> value, std::vector<Var> parents,
                  typename Node::BackwardFn backward, const char* op) {
    Var out(std::move(value), false);
    out.node_->op = op;
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

using VarD = Var<double>;
using TensorD = Tensor<double>;

}  // namespace lfsr
