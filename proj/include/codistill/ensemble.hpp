// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "codistill/graph.hpp"
#include "codistill/layers.hpp"

namespace codistill {

enum class LayerKind { kDense, kContextGate, kSwapPool };

// One entry of a layer stack. Width applies to dense layers only; context
// gates and pooling keep the incoming width.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t width = 0;
  Activation activation = Activation::kRelu;
  bool batch_norm = false;  // after the dense product, before the activation

  static LayerSpec dense(std::size_t width, Activation activation = Activation::kRelu,
                         bool batch_norm = false);
  static LayerSpec context_gate();
  static LayerSpec swap_pool();

  bool operator==(const LayerSpec&) const = default;
};

enum class HeadKind { kSoftmax, kMoE };

struct HeadSpec {
  HeadKind kind = HeadKind::kSoftmax;
  std::size_t classes = 2;
  std::size_t experts = 1;  // MoE only

  bool operator==(const HeadSpec&) const = default;
};

// Shared base stack feeding N branch stacks, each closed by a prediction
// head of the same class count. The fork point is base.size().
struct NetworkSpec {
  std::size_t input_dim = 0;
  bool input_batch_norm = false;
  std::vector<LayerSpec> base;
  std::vector<std::vector<LayerSpec>> branches;
  HeadSpec head;

  std::size_t fork_point() const { return base.size(); }
  std::size_t branch_count() const { return branches.size(); }
  // True when the input is frame rows pooled by a SWAP layer.
  bool frame_input() const;
  // Feature width entering branch stacks.
  std::size_t base_output_width() const;
  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

// A plain network: every layer in the base and one branch holding only the
// head.
NetworkSpec single_network(std::size_t input_dim, std::vector<LayerSpec> layers, HeadSpec head,
                           bool input_batch_norm = false);

// Splits the layers of an unforked network at `fork_point`. Layers below
// stay shared and unchanged; layers at or above are replicated `n_branches`
// times with dense widths divided by `shrink_ratio`, rounded to nearest and
// clamped to at least 1. Warnings about clamped widths are appended to
// `warnings` when given, otherwise written to stderr.
NetworkSpec fork_network(const NetworkSpec& single, std::size_t fork_point, double shrink_ratio,
                         std::size_t n_branches,
                         std::vector<std::string>* warnings = nullptr);

// Built layers of one stack entry.
struct Block {
  LayerKind kind = LayerKind::kDense;
  std::optional<DenseLayer> dense;
  std::optional<BatchNormLayer> batch_norm;
  Activation activation = Activation::kNone;
  std::optional<ContextGate> gate;
};

struct Head {
  HeadKind kind = HeadKind::kSoftmax;
  std::optional<DenseLayer> logits;
  std::optional<MoEHead> moe;
};

struct Branch {
  std::vector<Block> blocks;
  Head head;
};

// Inputs for one forward pass. With empty `segments` each row of
// `features` is an example; otherwise rows are frames and `segments` lists
// the frame count of each example in order.
struct Batch {
  Tensor features;
  std::vector<std::size_t> segments;

  std::size_t example_count() const;
};

class MultiHeadNet {
 public:
  // Base parameters draw from a stream derived from (seed, 0); branch i
  // draws from (seed, i + 1), so branches start independently.
  static MultiHeadNet build(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Partition of the store: every entry belongs to the base or to exactly
  // one branch.
  const std::vector<ParamId>& base_params() const { return base_params_; }
  const std::vector<ParamId>& branch_params(std::size_t branch) const;
  std::size_t branch_count() const { return branches_.size(); }

  const std::vector<Block>& base_blocks() const { return base_; }
  const std::optional<BatchNormLayer>& input_batch_norm() const { return input_bn_; }
  const Branch& branch(std::size_t i) const { return branches_.at(i); }

  // Overwrites every branch's parameters with branch 0's values.
  void mirror_branches();

 private:
  NetworkSpec spec_;
  ParameterStore params_;
  std::optional<BatchNormLayer> input_bn_;
  std::vector<Block> base_;
  std::vector<Branch> branches_;
  std::vector<ParamId> base_params_;
  std::vector<std::vector<ParamId>> branch_params_;
};

// Branch predictions and their simple average, as nodes of one graph.
struct PredictionBundle {
  std::vector<NodeRef> aux;
  NodeRef ensemble;
};

PredictionBundle forward(Scope& scope, const MultiHeadNet& net, const Batch& batch);

// Arithmetic mean of `predictions` as a graph node.
NodeRef average(Graph& g, const std::vector<NodeRef>& predictions);

// Eval-mode predictions as plain tensors: aux heads followed by ensemble.
struct Predictions {
  std::vector<Tensor> aux;
  Tensor ensemble;
};
Predictions predict(const MultiHeadNet& net, const Batch& batch);

enum class Discrepancy { kCrossEntropy, kL2 };

// How cross entropy reads a prediction row: a distribution over classes
// (softmax heads) or independent per-class probabilities (MoE heads).
enum class TargetKind { kCategorical, kMultiLabel };

TargetKind target_kind(HeadKind head);
std::string to_string(Discrepancy d);

// Lower bound applied to probabilities before taking a log.
inline constexpr double kLogFloor = 1e-12;

// l(target, prediction) averaged over the batch (the leading axis of rank
// >= 2 tensors; lower ranks count as one example). L2 is the squared
// Euclidean distance; cross entropy is -sum t log p, or the per-class
// binary cross entropy summed over classes for multi-label targets.
NodeRef discrepancy(Graph& g, Discrepancy kind, TargetKind target_kind, NodeRef target,
                    NodeRef prediction);

struct LossStructure {
  enum class Kind { kEnsembling, kCoDistillation };

  Kind kind = Kind::kCoDistillation;
  double weight = 0.0;  // lambda for ensembling, mu for co-distillation
  Discrepancy discrepancy = Discrepancy::kCrossEntropy;

  static LossStructure ensembling(double lambda, Discrepancy d = Discrepancy::kCrossEntropy);
  static LossStructure co_distillation(double mu, Discrepancy d = Discrepancy::kCrossEntropy);

  bool operator==(const LossStructure&) const = default;
};

// Whether the co-distillation targets pass through stop_gradient. kOmit
// exists to measure how much the barrier changes the gradient.
enum class Barrier { kApply, kOmit };

struct LossTerms {
  NodeRef total;
  std::vector<NodeRef> aux;  // L_aux,i
  NodeRef ensemble;          // L_ens
};

// Ensembling(lambda): aux_i = (1 - lambda) l(g, p_i), ens = N lambda l(g, p_ens).
// CoDistillation(mu): aux_i = mu l(sg(p_ens), p_i), ens = N l(g, p_ens).
// The total is the sum of all aux terms plus the ensemble term.
LossTerms total_loss(Graph& g, const PredictionBundle& bundle, NodeRef truth,
                     const LossStructure& structure, TargetKind target_kind,
                     Barrier barrier = Barrier::kApply);

// Draws random predictions, targets and lambda per trial and returns the
// largest |Ensembling(lambda) - CoDistillation(1 - lambda)| under L2 with a
// simple-average ensembler, evaluated without the gradient barrier.
double verify_equivalence(std::size_t n_branches, std::size_t trials, std::uint64_t seed);

// Under L2 with a simple average the barrier removes
// mu * sum_j 2 (p_ens - p_j) / N, which is identically zero, so both gaps
// are at rounding level.
struct GradientGap {
  double without_barrier = 0.0;
  double with_barrier = 0.0;
};

// Largest elementwise difference between the gradients (with respect to the
// branch predictions) of Ensembling(lambda) and CoDistillation(1 - lambda).
GradientGap measure_gradient_gap(std::size_t n_branches, std::size_t trials, std::uint64_t seed);

}  // namespace codistill
