// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/layers.hpp"

#include <cmath>

#include "codistill/error.hpp"

namespace codistill {

bool is_trainable(ParamRole role) {
  return role != ParamRole::kRunningMean && role != ParamRole::kRunningVariance;
}

bool is_decayed(ParamRole role) { return role == ParamRole::kWeight || role == ParamRole::kGamma; }

ParamId ParameterStore::add(std::string name, Tensor value, ParamRole role) {
  if (find(name)) throw Error("duplicate parameter name '" + name + "'");
  entries_.push_back(Entry{std::move(name), std::move(value), role});
  return ParamId{entries_.size() - 1};
}

void ParameterStore::set(ParamId id, Tensor value) {
  Entry& e = entries_.at(id.index);
  if (e.value.shape() != value.shape()) {
    throw ShapeError("parameter '" + e.name + "' has shape " + to_string(e.value.shape()) +
                     ", got " + to_string(value.shape()));
  }
  e.value = std::move(value);
}

std::optional<ParamId> ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return ParamId{i};
  }
  return std::nullopt;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (is_trainable(e.role)) n += e.value.size();
  }
  return n;
}

Scope::Scope(Graph& graph, ParameterStore& store, Mode mode) : Scope(graph, store) {
  mutable_store_ = &store;
  mode_ = mode;
}

Scope::Scope(Graph& graph, const ParameterStore& store)
    : graph_(graph), store_(store), mode_(Mode::kEval), nodes_(store.size()) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entries()[i];
    if (!is_trainable(e.role)) continue;
    NodeRef node = graph.parameter(e.value, e.name);
    nodes_[i] = node;
    bindings_.emplace_back(ParamId{i}, node);
  }
}

ParameterStore& Scope::mutable_store() {
  if (!mutable_store_) throw Error("scope was created over a read-only parameter store");
  return *mutable_store_;
}

NodeRef Scope::param(ParamId id) const {
  const auto& node = nodes_.at(id.index);
  if (!node) throw Error("parameter '" + store_.entry(id).name + "' is not trainable");
  return *node;
}

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kRelu6: return "relu6";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "none";
}

Activation parse_activation(const std::string& text) {
  if (text == "none") return Activation::kNone;
  if (text == "relu") return Activation::kRelu;
  if (text == "relu6") return Activation::kRelu6;
  if (text == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + text + "'");
}

NodeRef activate(Graph& g, NodeRef x, Activation activation) {
  switch (activation) {
    case Activation::kNone: return x;
    case Activation::kRelu: return relu(g, x);
    case Activation::kRelu6: return relu6(g, x);
    case Activation::kSigmoid: return sigmoid(g, x);
  }
  return x;
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(element_count(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

DenseLayer make_dense(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Activation activation, bool with_bias,
                      std::mt19937_64& rng) {
  DenseLayer layer;
  layer.in = in;
  layer.out = out;
  layer.activation = activation;
  layer.weight = store.add(name + "/weight", normal_tensor({in, out}, kInitStddev, rng),
                           ParamRole::kWeight);
  if (with_bias) layer.bias = store.add(name + "/bias", Tensor({out}), ParamRole::kBias);
  return layer;
}

NodeRef dense_forward(Scope& scope, const DenseLayer& layer, NodeRef input) {
  Graph& g = scope.graph();
  const Tensor& x = g.value(input);
  if (x.rank() != 2 || x.dim(1) != layer.in) {
    throw ShapeError("dense: input " + to_string(x.shape()) + " does not match width " +
                     std::to_string(layer.in));
  }
  NodeRef out = matmul(g, input, scope.param(layer.weight));
  if (layer.bias) out = add(g, out, scope.param(*layer.bias));
  return activate(g, out, layer.activation);
}

BatchNormLayer make_batchnorm(ParameterStore& store, const std::string& name,
                              std::size_t features) {
  BatchNormLayer layer;
  layer.features = features;
  layer.gamma = store.add(name + "/gamma", Tensor::filled({features}, 1.0), ParamRole::kGamma);
  layer.beta = store.add(name + "/beta", Tensor({features}), ParamRole::kBeta);
  layer.running_mean = store.add(name + "/running_mean", Tensor({features}),
                                 ParamRole::kRunningMean);
  layer.running_variance = store.add(name + "/running_variance",
                                     Tensor::filled({features}, 1.0),
                                     ParamRole::kRunningVariance);
  return layer;
}

NodeRef batchnorm_forward(Scope& scope, const BatchNormLayer& layer, NodeRef input) {
  Graph& g = scope.graph();
  const Tensor& x = g.value(input);
  if (x.rank() != 2 || x.dim(1) != layer.features) {
    throw ShapeError("batchnorm: input " + to_string(x.shape()) + " does not match width " +
                     std::to_string(layer.features));
  }
  if (!(layer.epsilon > 0)) throw DomainError("batchnorm: epsilon must be positive");
  NodeRef gamma = scope.param(layer.gamma);
  NodeRef beta = scope.param(layer.beta);

  if (scope.mode() == Mode::kEval) {
    const ParameterStore& store = scope.store();
    NodeRef mean = g.constant(store.value(layer.running_mean));
    NodeRef var = g.constant(store.value(layer.running_variance));
    NodeRef denom = sqrt(g, add(g, var, g.constant(Tensor::scalar(layer.epsilon))));
    NodeRef normalized = divide(g, subtract(g, input, mean), denom);
    return add(g, multiply(g, normalized, gamma), beta);
  }

  if (x.dim(0) < 2) throw DomainError("batchnorm: train mode needs a batch of at least 2");
  NodeRef mean = reduce_mean(g, input, 0);
  NodeRef centered = subtract(g, input, mean);
  NodeRef var = reduce_mean(g, square(g, centered), 0);
  NodeRef denom = sqrt(g, add(g, var, g.constant(Tensor::scalar(layer.epsilon))));
  NodeRef out = add(g, multiply(g, divide(g, centered, denom), gamma), beta);

  ParameterStore& store = scope.mutable_store();
  const auto update = [&](ParamId id, const Tensor& batch) {
    const Tensor& running = store.value(id);
    std::vector<double> next(running.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = layer.momentum * running[i] + (1.0 - layer.momentum) * batch[i];
    }
    store.set(id, Tensor(running.shape(), std::move(next)));
  };
  update(layer.running_mean, g.value(mean));
  update(layer.running_variance, g.value(var));
  return out;
}

FoldedBatchNorm fold(const ParameterStore& store, const BatchNormLayer& layer) {
  const Tensor& gamma = store.value(layer.gamma);
  const Tensor& beta = store.value(layer.beta);
  const Tensor& mean = store.value(layer.running_mean);
  const Tensor& var = store.value(layer.running_variance);
  std::vector<double> scale(layer.features), shift(layer.features);
  for (std::size_t i = 0; i < layer.features; ++i) {
    scale[i] = gamma[i] / std::sqrt(var[i] + layer.epsilon);
    shift[i] = beta[i] - mean[i] * scale[i];
  }
  return {Tensor({layer.features}, std::move(scale)), Tensor({layer.features}, std::move(shift))};
}

Tensor apply_folded(const FoldedBatchNorm& folded, const Tensor& input) {
  const std::size_t features = folded.scale.size();
  if (input.rank() != 2 || input.dim(1) != features) {
    throw ShapeError("folded batchnorm: input " + to_string(input.shape()));
  }
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = input[i] * folded.scale[i % features] + folded.shift[i % features];
  }
  return Tensor(input.shape(), std::move(out));
}

ContextGate make_context_gate(ParameterStore& store, const std::string& name,
                              std::size_t features, std::mt19937_64& rng) {
  ContextGate gate;
  gate.features = features;
  gate.weight = store.add(name + "/weight",
                          normal_tensor({features, features}, kInitStddev, rng),
                          ParamRole::kWeight);
  gate.bias = store.add(name + "/bias", Tensor({features}), ParamRole::kBias);
  return gate;
}

NodeRef context_gate_forward(Scope& scope, const ContextGate& gate, NodeRef input) {
  Graph& g = scope.graph();
  const Tensor& x = g.value(input);
  if (x.rank() != 2 || x.dim(1) != gate.features) {
    throw ShapeError("context gate: input " + to_string(x.shape()) +
                     " does not match width " + std::to_string(gate.features));
  }
  NodeRef logits = add(g, matmul(g, input, scope.param(gate.weight)), scope.param(gate.bias));
  return multiply(g, sigmoid(g, logits), input);
}

FrameSequence::FrameSequence(Tensor f) : frames(std::move(f)) {
  if (frames.rank() != 2 || frames.dim(0) == 0) {
    throw ShapeError("frame sequence needs shape [n >= 1, features], got " +
                     to_string(frames.shape()));
  }
}

Tensor swap_pool(const FrameSequence& sequence) {
  Graph g;
  NodeRef frames = g.constant(sequence.frames);
  NodeRef pooled = swap_pool_forward(g, frames, {sequence.frame_count()});
  const Tensor& v = g.value(pooled);
  auto d = v.data();
  return Tensor({v.dim(1)}, std::vector<double>(d.begin(), d.end()));
}

NodeRef swap_pool_forward(Graph& g, NodeRef frames, std::vector<std::size_t> segments) {
  return codistill::swap_pool(g, frames, std::move(segments));
}

MoEHead make_moe_head(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t classes, std::size_t experts, std::mt19937_64& rng) {
  if (experts < 1) throw ConfigError("moe head needs at least one expert");
  if (classes < 1) throw ConfigError("moe head needs at least one class");
  MoEHead head;
  head.in = in;
  head.classes = classes;
  head.experts = experts;
  const std::size_t cols = classes * experts;
  head.gate_weight = store.add(name + "/gate_weight", normal_tensor({in, cols}, kInitStddev, rng),
                               ParamRole::kWeight);
  head.gate_bias = store.add(name + "/gate_bias", Tensor({cols}), ParamRole::kBias);
  head.expert_weight = store.add(name + "/expert_weight",
                                 normal_tensor({in, cols}, kInitStddev, rng), ParamRole::kWeight);
  head.expert_bias = store.add(name + "/expert_bias", Tensor({cols}), ParamRole::kBias);
  return head;
}

NodeRef moe_head_forward(Scope& scope, const MoEHead& head, NodeRef input) {
  Graph& g = scope.graph();
  const Tensor& x = g.value(input);
  if (x.rank() != 2 || x.dim(1) != head.in) {
    throw ShapeError("moe head: input " + to_string(x.shape()) + " does not match width " +
                     std::to_string(head.in));
  }
  const std::size_t batch = x.dim(0);
  const Shape cube{batch, head.classes, head.experts};
  NodeRef gate_logits = add(g, matmul(g, input, scope.param(head.gate_weight)),
                            scope.param(head.gate_bias));
  NodeRef expert_logits = add(g, matmul(g, input, scope.param(head.expert_weight)),
                              scope.param(head.expert_bias));
  NodeRef gates = softmax(g, reshape(g, gate_logits, cube));
  NodeRef experts = sigmoid(g, reshape(g, expert_logits, cube));
  return reduce_sum(g, multiply(g, gates, experts), 2);
}

}  // namespace codistill
