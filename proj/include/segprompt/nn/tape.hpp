#pragma once

#include "segprompt/nn/tensor.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace segprompt::nn {

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  Tape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// node vector is already a topological order and backward is a reverse sweep.
///
/// One tape per graph; a tape is not thread-safe, but independent tapes may be
/// built concurrently as long as they only read shared parameters. Parameter
/// gradients are kept on the tape until flush_param_grads() so that concurrent
/// graphs can be reduced in a fixed order by the caller.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  // Receives the gradient of the output node and propagates to its inputs.
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  /// Leaf bound to a parameter. The value is referenced, not copied.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<Scalar>(this, it->second);
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = true;
    Var<Scalar> v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Records an op output. `inputs` decide whether the node needs a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var<Scalar>>(inputs), std::move(backward));
  }

  Var<Scalar> record(Mat value, const std::vector<Var<Scalar>>& inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
      require(in.tape() == this, "op inputs must live on the same tape");
      n.requires_grad = n.requires_grad || requires_grad(in.id());
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Mat& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.value;
  }

  /// Gradient accumulated at a node; zeros when nothing reached it.
  const Mat& grad(std::size_t id) {
    ensure_grad(id);
    return nodes_[id].grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  void accumulate(std::size_t id, const Mat& delta) {
    if (!nodes_[id].requires_grad) return;
    ensure_grad(id);
    nodes_[id].grad += delta;
  }

  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& delta) {
    if (!nodes_[id].requires_grad) return;
    ensure_grad(id);
    nodes_[id].grad += delta;
  }

  /// Reverse sweep from a scalar loss. With `flush` the parameter gradients are
  /// added to Parameter::grad immediately.
  void backward(Var<Scalar> loss, bool flush = true) {
    require(loss.tape() == this, "loss does not belong to this tape");
    const Mat& lv = value(loss.id());
    require(lv.rows() == 1 && lv.cols() == 1,
            "backward needs a scalar loss, got " + std::to_string(lv.rows()) + "x" + std::to_string(lv.cols()));
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      // Copy: the callback may touch other nodes' storage.
      const Mat g = n.grad;
      n.backward(*this, g);
    }
    if (flush) flush_param_grads();
  }

  /// Adds scale * (tape gradient) into each bound Parameter::grad.
  void flush_param_grads(Scalar scale = Scalar(1)) {
    for (const auto& [param, id] : param_nodes_) {
      const Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (param->grad.rows() != param->value.rows() || param->grad.cols() != param->value.cols()) param->zero_grad();
      param->grad += scale * n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
    BackwardFn backward;
  };

  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  void ensure_grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      const Mat& v = n.external ? *n.external : n.value;
      n.grad = Mat::Zero(v.rows(), v.cols());
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<Scalar>*, std::size_t> param_nodes_;
};

}  // namespace segprompt::nn
