// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "codistill/data.hpp"
#include "codistill/ensemble.hpp"
#include "codistill/layers.hpp"
#include "codistill/metrics.hpp"

namespace codistill {

enum class OptimizerKind { kMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kMomentum;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

using ParamGradients = std::vector<std::pair<ParamId, Tensor>>;

// Per-parameter slots, indexed like the store they were created for.
// Momentum keeps a velocity (v <- m v + g, w <- w - lr v); Adam keeps
// bias-corrected first and second moments (w <- w - lr m^ / (sqrt(v^) + eps)).
class OptimizerState {
 public:
  OptimizerState() = default;
  static OptimizerState create(const OptimizerConfig& config, const ParameterStore& store);

  // Applies one update. Every trainable entry must have a finite gradient;
  // otherwise nothing changes and an error is thrown.
  void step(ParameterStore& store, const ParamGradients& grads, double lr);

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }

  // Named slot tensors for checkpoints: "<slot>/<param name>".
  std::vector<std::pair<std::string, Tensor>> slots(const ParameterStore& store) const;
  void restore_slot(const ParameterStore& store, const std::string& name, Tensor value);

  bool operator==(const OptimizerState&) const = default;

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> first_;   // velocity, or Adam first moment
  std::vector<Tensor> second_;  // Adam second moment
};

struct Schedule {
  enum class Kind { kConstant, kStepDecay, kHalfCosine };
  enum class Unit { kEpochs, kExamples };

  Kind kind = Kind::kConstant;
  double base_lr = 0.01;
  double decay_factor = 1.0;
  double decay_interval = 1.0;
  Unit unit = Unit::kEpochs;
  std::uint64_t total_steps = 0;  // half-cosine; 0 means the whole run

  static Schedule constant(double lr);
  static Schedule step_decay(double base_lr, double factor, double interval,
                             Unit unit = Unit::kEpochs);
  static Schedule half_cosine(double base_lr, std::uint64_t total_steps);
  void validate() const;

  bool operator==(const Schedule&) const = default;
};

// StepDecay: base * factor^floor(progress / interval), progress measured in
// epochs (step / steps_per_epoch) or examples (step * examples_per_step).
// HalfCosine: 0.5 * base * (1 + cos(pi * step / total)), and 0 past total.
double lr_at(const Schedule& schedule, std::uint64_t step, std::uint64_t steps_per_epoch,
             std::uint64_t examples_per_step = 1);

// (1 - epsilon) * onehot + epsilon / K. Rows must be one-hot.
Tensor smooth_labels(const Tensor& onehot, double epsilon);

struct TrainConfig {
  std::uint64_t epochs = 10;
  std::size_t batch_size = 32;
  double label_smoothing = 0.1;
  double weight_decay = 1e-4;  // coefficient of 0.5 * sum w^2 over weights and gamma
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  Schedule schedule;
  LossStructure loss;
  std::uint64_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Everything that evolves during training; enough to resume bit-exactly.
struct TrainState {
  MultiHeadNet net;
  OptimizerState optimizer;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::mt19937_64 rng;  // batch order
};

TrainState start_training(MultiHeadNet net, const TrainConfig& config);

struct EpochRecord {
  std::uint64_t epoch = 0;  // 1-based, counted after the epoch finished
  std::string split;        // "train" or "holdout"
  HeadMetrics metrics;
};

struct TrainLog {
  std::vector<EpochRecord> records;
  std::vector<double> objective;  // mean training objective per epoch
  bool diverged = false;
  std::string message;
};

// Per-head and ensemble metrics of `net` on `data`, in eval mode.
std::vector<HeadMetrics> evaluate(const MultiHeadNet& net, const Dataset& data,
                                  Discrepancy discrepancy);

// Training objective for one batch: total loss plus the L2 penalty.
double training_objective(MultiHeadNet& net, const Dataset& data,
                          const std::vector<std::size_t>& indices, const TrainConfig& config,
                          Mode mode);

using EpochCallback = std::function<void(const TrainState&)>;

// Runs epochs state.epoch .. config.epochs. Batches follow a per-epoch
// shuffle drawn from state.rng; a trailing batch of one example is skipped.
// A non-finite value stops training with log.diverged set.
TrainLog run_training(TrainState& state, const Dataset& train, const Dataset& holdout,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

struct TrainResult {
  MultiHeadNet net;
  TrainLog log;
};

TrainResult train(MultiHeadNet net, const Dataset& train, const Dataset& holdout,
                  const TrainConfig& config);

}  // namespace codistill
