// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codistill/tensor.hpp"

namespace codistill {

// Index of a node inside one Graph. Only meaningful for the graph that
// produced it.
struct NodeRef {
  std::size_t index = 0;
  auto operator<=>(const NodeRef&) const = default;
};

enum class Op {
  kConstant,
  kParameter,
  kMatMul,
  kAdd,
  kSubtract,
  kMultiply,
  kDivide,
  kAbs,
  kSquare,
  kSqrt,
  kExp,
  kLog,
  kRelu,
  kRelu6,
  kSigmoid,
  kSoftmax,    // over the last axis
  kClampMin,   // max(x, attrs.scalar)
  kReduceSum,  // attrs.axis, or every axis when axis < 0
  kReduceMean,
  kBroadcast,  // to attrs.shape
  kConcat,     // along attrs.axis
  kSlice,      // [attrs.begin, attrs.end) along attrs.axis
  kReshape,    // to attrs.shape
  kStopGradient,
  kGradientScale,  // backward multiplied by attrs.scalar
  kSwapPool,       // self-weighted average over row segments attrs.segments
};

std::string_view op_name(Op op);

struct OpAttrs {
  int axis = -1;
  std::size_t begin = 0;
  std::size_t end = 0;
  double scalar = 0.0;
  Shape shape;
  std::vector<std::size_t> segments;
};

// Eagerly evaluated tape. Every apply() computes the forward value at once
// and appends a node; nodes are therefore topologically ordered by index.
class Graph {
 public:
  NodeRef constant(Tensor value);
  NodeRef parameter(Tensor value, std::string label = {});

  // Appends `op` over `inputs`. Elementwise binary ops broadcast by
  // trailing-axis alignment: the lower-rank operand's shape must equal the
  // trailing dimensions of the other. Throws ShapeError or DomainError.
  NodeRef apply(Op op, std::vector<NodeRef> inputs, OpAttrs attrs = {});

  // Valid until the next node is appended.
  const Tensor& value(NodeRef node) const { return at(node).value; }
  Op op(NodeRef node) const { return at(node).op; }
  const std::vector<NodeRef>& inputs(NodeRef node) const { return at(node).inputs; }
  const OpAttrs& attrs(NodeRef node) const { return at(node).attrs; }
  const std::string& label(NodeRef node) const { return at(node).label; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeRef>& parameters() const { return parameters_; }

  // Re-evaluates `target` with the given parameter values substituted.
  // Stop-gradient nodes keep their recorded values, so the result is the
  // barrier-respecting objective whose derivative backprop computes.
  Tensor replay(NodeRef target,
                const std::vector<std::pair<NodeRef, Tensor>>& overrides) const;

 private:
  struct Node {
    Op op = Op::kConstant;
    std::vector<NodeRef> inputs;
    OpAttrs attrs;
    Tensor value;
    std::string label;
  };

  const Node& at(NodeRef node) const;

  std::vector<Node> nodes_;
  std::vector<NodeRef> parameters_;
};

// Gradient of a scalar loss with respect to every parameter of a graph.
class GradientMap {
 public:
  GradientMap() = default;
  explicit GradientMap(std::vector<std::pair<NodeRef, Tensor>> entries)
      : entries_(std::move(entries)) {}

  const Tensor& at(NodeRef param) const;
  bool contains(NodeRef param) const;
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<NodeRef, Tensor>>& entries() const { return entries_; }

  bool operator==(const GradientMap&) const = default;

 private:
  std::vector<std::pair<NodeRef, Tensor>> entries_;
};

// Reverse-mode pass from `loss`, which must hold exactly one element.
// Throws NumericError naming the first node whose gradient is not finite.
GradientMap backprop(const Graph& graph, NodeRef loss);

struct GradientCheckEntry {
  NodeRef parameter;
  std::string label;
  double max_relative_error = 0.0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;  // one per parameter
  std::vector<GradientCheckEntry> failures; // entries above tolerance
  double tolerance = 0.0;

  bool passed() const { return failures.empty(); }
  double max_relative_error() const;
};

// Relative error used by check_gradients: |a - n| / max(|a|, |n|, 1e-3).
double gradient_relative_error(double analytic, double numeric);

// Compares backprop against central differences (f(w+e) - f(w-e)) / 2e for
// every parameter element. Gradient-scale nodes with a factor other than 1
// have no replayable objective and will show up as mismatches.
GradientCheckReport check_gradients(const Graph& graph, NodeRef loss,
                                    double epsilon, double tolerance);

// Builders over Graph::apply.
NodeRef matmul(Graph& g, NodeRef a, NodeRef b);
NodeRef add(Graph& g, NodeRef a, NodeRef b);
NodeRef subtract(Graph& g, NodeRef a, NodeRef b);
NodeRef multiply(Graph& g, NodeRef a, NodeRef b);
NodeRef divide(Graph& g, NodeRef a, NodeRef b);
NodeRef abs(Graph& g, NodeRef x);
NodeRef square(Graph& g, NodeRef x);
NodeRef sqrt(Graph& g, NodeRef x);
NodeRef exp(Graph& g, NodeRef x);
NodeRef log(Graph& g, NodeRef x);
NodeRef relu(Graph& g, NodeRef x);
NodeRef relu6(Graph& g, NodeRef x);
NodeRef sigmoid(Graph& g, NodeRef x);
NodeRef softmax(Graph& g, NodeRef x);
NodeRef clamp_min(Graph& g, NodeRef x, double floor);
NodeRef reduce_sum(Graph& g, NodeRef x);
NodeRef reduce_sum(Graph& g, NodeRef x, int axis);
NodeRef reduce_mean(Graph& g, NodeRef x);
NodeRef reduce_mean(Graph& g, NodeRef x, int axis);
NodeRef broadcast(Graph& g, NodeRef x, Shape shape);
NodeRef concat(Graph& g, std::vector<NodeRef> parts, int axis);
NodeRef slice(Graph& g, NodeRef x, int axis, std::size_t begin, std::size_t end);
NodeRef reshape(Graph& g, NodeRef x, Shape shape);
NodeRef stop_gradient(Graph& g, NodeRef x);
NodeRef gradient_scale(Graph& g, NodeRef x, double factor);
NodeRef swap_pool(Graph& g, NodeRef frames, std::vector<std::size_t> segments);

// x * c for a plain number c.
NodeRef scale(Graph& g, NodeRef x, double c);

}  // namespace codistill
