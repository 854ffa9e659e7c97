// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "codistill/graph.hpp"
#include "codistill/tensor.hpp"

namespace codistill {

// Standard deviation of the normal initializer used for every dense weight.
inline constexpr double kInitStddev = 0.03;

enum class ParamRole { kWeight, kBias, kGamma, kBeta, kRunningMean, kRunningVariance };

// Trainable roles are bound as graph parameters; running statistics are not.
bool is_trainable(ParamRole role);
// Roles that receive the L2 penalty: weights and batch-norm gamma.
bool is_decayed(ParamRole role);

struct ParamId {
  std::size_t index = 0;
  auto operator<=>(const ParamId&) const = default;
};

// Named tensors owned by a model. Insertion order is stable and defines the
// order of checkpoints and optimizer slots.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    ParamRole role;

    bool operator==(const Entry&) const = default;
  };

  ParamId add(std::string name, Tensor value, ParamRole role);
  const Entry& entry(ParamId id) const { return entries_.at(id.index); }
  const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
  void set(ParamId id, Tensor value);
  std::optional<ParamId> find(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Number of trainable scalars.
  std::size_t trainable_count() const;

  bool operator==(const ParameterStore&) const = default;

 private:
  std::vector<Entry> entries_;
};

enum class Mode { kTrain, kEval };

// Binds every trainable entry of a store into a graph at construction, so
// each one owns a gradient slot after backprop. Train mode needs a mutable
// store because batch norm updates its running statistics.
class Scope {
 public:
  Scope(Graph& graph, ParameterStore& store, Mode mode);
  Scope(Graph& graph, const ParameterStore& store);  // eval mode

  Graph& graph() { return graph_; }
  const ParameterStore& store() const { return store_; }
  ParameterStore& mutable_store();
  Mode mode() const { return mode_; }
  NodeRef param(ParamId id) const;
  // Store entries paired with their graph nodes, in store order.
  const std::vector<std::pair<ParamId, NodeRef>>& bindings() const { return bindings_; }

 private:
  Graph& graph_;
  const ParameterStore& store_;
  ParameterStore* mutable_store_ = nullptr;
  Mode mode_;
  std::vector<std::optional<NodeRef>> nodes_;
  std::vector<std::pair<ParamId, NodeRef>> bindings_;
};

enum class Activation { kNone, kRelu, kRelu6, kSigmoid };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& text);
NodeRef activate(Graph& g, NodeRef x, Activation activation);

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng);

struct DenseLayer {
  ParamId weight;  // [in, out]
  std::optional<ParamId> bias;  // [out]
  Activation activation = Activation::kNone;
  std::size_t in = 0;
  std::size_t out = 0;
};

DenseLayer make_dense(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Activation activation, bool with_bias,
                      std::mt19937_64& rng);
NodeRef dense_forward(Scope& scope, const DenseLayer& layer, NodeRef input);

struct BatchNormLayer {
  ParamId gamma, beta, running_mean, running_variance;
  std::size_t features = 0;
  double momentum = 0.99;
  double epsilon = 1e-3;
};

BatchNormLayer make_batchnorm(ParameterStore& store, const std::string& name,
                              std::size_t features);

// Train mode normalizes with batch statistics (biased variance) and folds
// them into the running averages; eval mode uses the running averages.
// Train mode rejects a batch of one row.
NodeRef batchnorm_forward(Scope& scope, const BatchNormLayer& layer, NodeRef input);

// Eval-mode batch norm as y = x * scale + shift.
struct FoldedBatchNorm {
  Tensor scale;
  Tensor shift;
};
FoldedBatchNorm fold(const ParameterStore& store, const BatchNormLayer& layer);
Tensor apply_folded(const FoldedBatchNorm& folded, const Tensor& input);

// y = sigmoid(x W + b) * x
struct ContextGate {
  ParamId weight;  // [features, features]
  ParamId bias;    // [features]
  std::size_t features = 0;
};

ContextGate make_context_gate(ParameterStore& store, const std::string& name,
                              std::size_t features, std::mt19937_64& rng);
NodeRef context_gate_forward(Scope& scope, const ContextGate& gate, NodeRef input);

// A variable-length run of frames for one example.
struct FrameSequence {
  Tensor frames;  // [n, features], n >= 1

  explicit FrameSequence(Tensor frames);
  std::size_t frame_count() const { return frames.dim(0); }
};

// Self-weighted average pooling: per feature unit sum(|x| x) / sum(|x|),
// or 0 when sum(|x|) < 1e-12.
Tensor swap_pool(const FrameSequence& sequence);
// Pools consecutive row segments of `frames` inside a graph.
NodeRef swap_pool_forward(Graph& g, NodeRef frames, std::vector<std::size_t> segments);

// Per-class mixture of logistic experts. For class c and expert e the gate
// and expert logits live in column c * experts + e.
struct MoEHead {
  ParamId gate_weight;    // [in, classes * experts]
  ParamId gate_bias;      // [classes * experts]
  ParamId expert_weight;  // [in, classes * experts]
  ParamId expert_bias;    // [classes * experts]
  std::size_t in = 0;
  std::size_t classes = 0;
  std::size_t experts = 1;
};

MoEHead make_moe_head(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t classes, std::size_t experts, std::mt19937_64& rng);
// Output [batch, classes] with every score in (0, 1).
NodeRef moe_head_forward(Scope& scope, const MoEHead& head, NodeRef input);

}  // namespace codistill
