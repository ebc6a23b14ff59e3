#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmcm/tensor.hpp"

namespace cmcm::ad {

enum class Op : uint8_t {
  Leaf,       // differentiable input
  Const,      // non-differentiable input (no gradient flows past it)
  Add, Sub, Mul, Div,
  MatMul, Transpose,
  Sum, Mean,
  Exp, Log, Pow, Neg,
  Sigmoid, Tanh, Softmax, Erf,
  Clamp, Concat, Slice, Broadcast,
};

const char* op_name(Op op);

struct OpAttrs {
  int axis = -1;            // Sum/Mean (-1 = reduce all), Concat, Slice
  double exponent = 1.0;    // Pow
  double lo = 0.0;          // Clamp
  double hi = 0.0;          // Clamp
  int64_t start = 0;        // Slice
  int64_t length = 0;       // Slice
  Shape target;             // Broadcast (reshape when numel matches, expand otherwise)
};

using NodeId = int32_t;

struct TapeNode {
  Op op;
  std::vector<NodeId> inputs;  // all ids strictly smaller than this node's id
  Tensor value;
  Tensor adjoint;              // same shape as value once backward has run
  OpAttrs attrs;
};

// Eager reverse-mode tape. Forward values are computed on record; backward
// sweeps the node list in reverse, accumulating adjoints by addition.
// Single-writer: one thread builds a tape; completed nodes may be read freely.
class Tape {
 public:
  NodeId leaf(Tensor value);
  NodeId constant(Tensor value);
  NodeId constant(double value) { return constant(Tensor::scalar(value)); }

  NodeId record(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs = {});
  NodeId record(Op op, std::initializer_list<NodeId> inputs, const OpAttrs& attrs = {}) {
    return record(op, std::span<const NodeId>(inputs.begin(), inputs.size()), attrs);
  }

  // Populates adjoints of every ancestor of `root`; d root / d root = 1.
  // Throws NonScalarRoot unless root has exactly one element.
  void backward(NodeId root);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& adjoint(NodeId id) const { return nodes_[static_cast<size_t>(id)].adjoint; }
  const TapeNode& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  // Expression helpers. Binary ops accept equal shapes or a one-element
  // operand on either side.
  NodeId add(NodeId a, NodeId b) { return record(Op::Add, {a, b}); }
  NodeId sub(NodeId a, NodeId b) { return record(Op::Sub, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return record(Op::Mul, {a, b}); }
  NodeId div(NodeId a, NodeId b) { return record(Op::Div, {a, b}); }
  NodeId matmul(NodeId a, NodeId b) { return record(Op::MatMul, {a, b}); }
  NodeId transpose(NodeId a) { return record(Op::Transpose, {a}); }
  NodeId sum(NodeId a, int axis = -1) { OpAttrs at; at.axis = axis; return record(Op::Sum, {a}, at); }
  NodeId mean(NodeId a, int axis = -1) { OpAttrs at; at.axis = axis; return record(Op::Mean, {a}, at); }
  NodeId exp(NodeId a) { return record(Op::Exp, {a}); }
  NodeId log(NodeId a) { return record(Op::Log, {a}); }
  NodeId pow(NodeId a, double e) { OpAttrs at; at.exponent = e; return record(Op::Pow, {a}, at); }
  NodeId neg(NodeId a) { return record(Op::Neg, {a}); }
  NodeId sigmoid(NodeId a) { return record(Op::Sigmoid, {a}); }
  NodeId tanh(NodeId a) { return record(Op::Tanh, {a}); }
  NodeId softmax(NodeId a) { return record(Op::Softmax, {a}); }
  NodeId erf(NodeId a) { return record(Op::Erf, {a}); }
  NodeId clamp(NodeId a, double lo, double hi) {
    OpAttrs at; at.lo = lo; at.hi = hi;
    return record(Op::Clamp, {a}, at);
  }
  NodeId concat(std::span<const NodeId> parts, int axis) {
    OpAttrs at; at.axis = axis;
    return record(Op::Concat, parts, at);
  }
  NodeId slice(NodeId a, int axis, int64_t start, int64_t length) {
    OpAttrs at; at.axis = axis; at.start = start; at.length = length;
    return record(Op::Slice, {a}, at);
  }
  NodeId broadcast(NodeId a, Shape target) {
    OpAttrs at; at.target = std::move(target);
    return record(Op::Broadcast, {a}, at);
  }

  // a^b for positive a via exp(b * log a); b may be a scalar node.
  NodeId pow_node(NodeId a, NodeId b) { return exp(mul(b, log(a))); }

 private:
  NodeId push(TapeNode n);
  // deque keeps node references stable while the tape grows
  std::deque<TapeNode> nodes_;
};

// Max over coordinates of |analytic - central difference| / max(|analytic|,
// 1e-8), with the central difference of `fn` taken at step `eps`.
double finite_diff_check(const std::function<double(std::span<const double>)>& fn,
                         std::span<const double> x,
                         std::span<const double> analytic_grad, double eps);

}  // namespace cmcm::ad
