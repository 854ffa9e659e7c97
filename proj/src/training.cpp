// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "codistill/error.hpp"
#include "codistill/text.hpp"

namespace codistill {
namespace {

constexpr const char* kFirstSlot = "opt/first";
constexpr const char* kSecondSlot = "opt/second";

bool uses_second_moment(const OptimizerConfig& config) {
  return config.kind == OptimizerKind::kAdam;
}

std::size_t top5_k(std::size_t classes) { return std::min<std::size_t>(5, classes); }

std::vector<std::vector<std::size_t>> labels_of(const Dataset& data,
                                                const std::vector<std::size_t>& indices) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.examples.at(i).labels);
  return out;
}

Tensor training_targets(const Dataset& data, const std::vector<std::size_t>& indices,
                        double label_smoothing) {
  Tensor labels = label_matrix(data, indices);
  if (data.task == TaskKind::kSingleLabel && label_smoothing > 0.0) {
    return smooth_labels(labels, label_smoothing);
  }
  return labels;
}

NodeRef objective_node(Scope& scope, const MultiHeadNet& net, const Dataset& data,
                       const std::vector<std::size_t>& indices, const TrainConfig& config) {
  Graph& g = scope.graph();
  const PredictionBundle bundle = forward(scope, net, make_batch(data, indices));
  const NodeRef truth = g.constant(training_targets(data, indices, config.label_smoothing));
  NodeRef loss = total_loss(g, bundle, truth, config.loss, target_kind(net.spec().head.kind)).total;
  if (config.weight_decay > 0.0) {
    std::vector<NodeRef> squares;
    for (const auto& [id, node] : scope.bindings()) {
      if (is_decayed(scope.store().entry(id).role)) {
        squares.push_back(reduce_sum(g, square(g, node)));
      }
    }
    if (!squares.empty()) {
      NodeRef penalty = squares.front();
      for (std::size_t i = 1; i < squares.size(); ++i) penalty = add(g, penalty, squares[i]);
      loss = add(g, loss, scale(g, penalty, 0.5 * config.weight_decay));
    }
  }
  return loss;
}

}  // namespace

OptimizerState OptimizerState::create(const OptimizerConfig& config, const ParameterStore& store) {
  if (config.kind == OptimizerKind::kMomentum && !(config.momentum >= 0.0 && config.momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (config.kind == OptimizerKind::kAdam) {
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(config.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  }
  OptimizerState state;
  state.config_ = config;
  for (const auto& entry : store.entries()) {
    const bool slot = is_trainable(entry.role);
    state.first_.push_back(slot ? Tensor(entry.value.shape()) : Tensor());
    state.second_.push_back(slot && uses_second_moment(config) ? Tensor(entry.value.shape())
                                                               : Tensor());
  }
  return state;
}

void OptimizerState::step(ParameterStore& store, const ParamGradients& grads, double lr) {
  if (first_.size() != store.size()) throw ConfigError("optimizer state does not match the store");
  if (!std::isfinite(lr) || lr < 0.0) throw NumericError("learning rate is not a finite value >= 0");
  std::vector<const Tensor*> by_entry(store.size(), nullptr);
  for (const auto& [id, grad] : grads) {
    const auto& entry = store.entry(id);
    if (grad.shape() != entry.value.shape()) {
      throw ShapeError("gradient for " + entry.name + " has shape " + to_string(grad.shape()));
    }
    for (double v : grad.data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for " + entry.name);
    }
    by_entry[id.index] = &grad;
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (is_trainable(store.entries()[i].role) && by_entry[i] == nullptr) {
      throw ConfigError("missing gradient for " + store.entries()[i].name);
    }
  }

  const std::uint64_t t = steps_ + 1;
  std::vector<Tensor> first = first_, second = second_;
  std::vector<Tensor> updated;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (by_entry[i] == nullptr) {
      updated.emplace_back();
      continue;
    }
    const auto g = by_entry[i]->data();
    std::vector<double> w(store.entries()[i].value.data().begin(),
                          store.entries()[i].value.data().end());
    std::vector<double> m(first[i].data().begin(), first[i].data().end());
    if (config_.kind == OptimizerKind::kMomentum) {
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = config_.momentum * m[k] + g[k];
        w[k] -= lr * m[k];
      }
    } else {
      std::vector<double> v(second[i].data().begin(), second[i].data().end());
      const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
        v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
        w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
      }
      second[i] = Tensor(second[i].shape(), std::move(v));
    }
    first[i] = Tensor(first[i].shape(), std::move(m));
    updated.emplace_back(store.entries()[i].value.shape(), std::move(w));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (by_entry[i] != nullptr) store.set(ParamId{i}, std::move(updated[i]));
  }
  first_ = std::move(first);
  second_ = std::move(second);
  steps_ = t;
}

std::vector<std::pair<std::string, Tensor>> OptimizerState::slots(
    const ParameterStore& store) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < store.size() && i < first_.size(); ++i) {
    if (!is_trainable(store.entries()[i].role)) continue;
    out.emplace_back(std::string(kFirstSlot) + "/" + store.entries()[i].name, first_[i]);
    if (uses_second_moment(config_)) {
      out.emplace_back(std::string(kSecondSlot) + "/" + store.entries()[i].name, second_[i]);
    }
  }
  return out;
}

void OptimizerState::restore_slot(const ParameterStore& store, const std::string& name,
                                  Tensor value) {
  for (const char* prefix : {kFirstSlot, kSecondSlot}) {
    const std::string p = std::string(prefix) + "/";
    if (!name.starts_with(p)) continue;
    const auto id = store.find(name.substr(p.size()));
    if (!id || !is_trainable(store.entry(*id).role)) {
      throw FormatError("optimizer slot " + name + " names no trainable parameter");
    }
    auto& slots = prefix == kFirstSlot ? first_ : second_;
    if (value.shape() != store.value(*id).shape()) {
      throw FormatError("optimizer slot " + name + " has shape " + to_string(value.shape()));
    }
    if (prefix == kSecondSlot && !uses_second_moment(config_)) {
      throw FormatError("optimizer slot " + name + " does not fit the configured optimizer");
    }
    slots.at(id->index) = std::move(value);
    return;
  }
  throw FormatError("unknown optimizer slot " + name);
}

Schedule Schedule::constant(double lr) {
  Schedule s;
  s.base_lr = lr;
  return s;
}

Schedule Schedule::step_decay(double base_lr, double factor, double interval, Unit unit) {
  Schedule s;
  s.kind = Kind::kStepDecay;
  s.base_lr = base_lr;
  s.decay_factor = factor;
  s.decay_interval = interval;
  s.unit = unit;
  return s;
}

Schedule Schedule::half_cosine(double base_lr, std::uint64_t total_steps) {
  Schedule s;
  s.kind = Kind::kHalfCosine;
  s.base_lr = base_lr;
  s.total_steps = total_steps;
  return s;
}

void Schedule::validate() const {
  if (!(std::isfinite(base_lr) && base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (kind == Kind::kStepDecay) {
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
      throw ConfigError("decay factor must lie in (0, 1]");
    }
    if (!(std::isfinite(decay_interval) && decay_interval > 0.0)) {
      throw ConfigError("decay interval must be positive");
    }
  }
}

double lr_at(const Schedule& s, std::uint64_t step, std::uint64_t steps_per_epoch,
             std::uint64_t examples_per_step) {
  switch (s.kind) {
    case Schedule::Kind::kConstant:
      return s.base_lr;
    case Schedule::Kind::kStepDecay: {
      double progress = 0.0;
      if (s.unit == Schedule::Unit::kEpochs) {
        if (steps_per_epoch == 0) throw ConfigError("lr_at: steps per epoch must be positive");
        progress = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
      } else {
        progress = static_cast<double>(step) * static_cast<double>(examples_per_step);
      }
      return s.base_lr * std::pow(s.decay_factor, std::floor(progress / s.decay_interval));
    }
    case Schedule::Kind::kHalfCosine: {
      if (s.total_steps == 0) throw ConfigError("lr_at: half-cosine needs a step total");
      if (step >= s.total_steps) return 0.0;
      const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
      return 0.5 * s.base_lr * (1.0 + std::cos(std::numbers::pi * frac));
    }
  }
  return s.base_lr;
}

Tensor smooth_labels(const Tensor& onehot, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
  if (onehot.rank() != 2) throw ShapeError("smooth_labels: expected [batch, classes]");
  const std::size_t k = onehot.dim(1);
  std::vector<double> out(onehot.data().begin(), onehot.data().end());
  for (std::size_t r = 0; r < onehot.dim(0); ++r) {
    double ones = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = out[r * k + c];
      if (v != 0.0 && v != 1.0) throw DomainError("smooth_labels: row is not one-hot");
      ones += v;
    }
    if (ones != 1.0) throw DomainError("smooth_labels: row is not one-hot");
    for (std::size_t c = 0; c < k; ++c) {
      out[r * k + c] = (1.0 - epsilon) * out[r * k + c] + epsilon / static_cast<double>(k);
    }
  }
  return Tensor(onehot.shape(), std::move(out));
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }
  if (!(std::isfinite(weight_decay) && weight_decay >= 0.0)) {
    throw ConfigError("weight decay must be non-negative");
  }
  if (!std::isfinite(loss.weight)) throw ConfigError("loss weight must be finite");
  schedule.validate();
  OptimizerState::create(optimizer, ParameterStore());
}

TrainState start_training(MultiHeadNet net, const TrainConfig& config) {
  config.validate();
  TrainState state{std::move(net), {}, 0, 0, {}};
  state.optimizer = OptimizerState::create(config.optimizer, state.net.params());
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32), 0x5eedu, 0xba7cu};
  state.rng.seed(seq);
  return state;
}

std::vector<HeadMetrics> evaluate(const MultiHeadNet& net, const Dataset& data,
                                  Discrepancy discrepancy_kind) {
  const std::vector<std::size_t> indices = all_indices(data);
  const Predictions preds = predict(net, make_batch(data, indices));
  const Tensor truth = label_matrix(data, indices);
  const auto labels = labels_of(data, indices);
  TruthSet truth_set;
  for (std::size_t r = 0; r < labels.size(); ++r)
    for (std::size_t l : labels[r]) truth_set.insert({r, l});
  const TargetKind tk = target_kind(net.spec().head.kind);

  auto score = [&](const std::string& name, const Tensor& p) {
    Graph g;
    const NodeRef loss = discrepancy(g, discrepancy_kind, tk, g.constant(truth), g.constant(p));
    const auto scored = to_predictions(p);
    return HeadMetrics{name,
                       g.value(loss).item(),
                       top_k_accuracy(p, labels, 1),
                       top_k_accuracy(p, labels, top5_k(data.classes)),
                       gap(scored, truth_set),
                       map_metric(scored, truth_set)};
  };
  std::vector<HeadMetrics> out;
  for (std::size_t i = 0; i < preds.aux.size(); ++i) {
    out.push_back(score("head" + std::to_string(i), preds.aux[i]));
  }
  out.push_back(score("ensemble", preds.ensemble));
  return out;
}

double training_objective(MultiHeadNet& net, const Dataset& data,
                          const std::vector<std::size_t>& indices, const TrainConfig& config,
                          Mode mode) {
  Graph g;
  if (mode == Mode::kEval) {
    Scope scope(g, std::as_const(net).params());
    return g.value(objective_node(scope, net, data, indices, config)).item();
  }
  Scope scope(g, net.params(), Mode::kTrain);
  return g.value(objective_node(scope, net, data, indices, config)).item();
}

TrainLog run_training(TrainState& state, const Dataset& train, const Dataset& holdout,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  train.validate();
  MultiHeadNet& net = state.net;
  if (train.classes != net.spec().head.classes) {
    throw ConfigError("dataset has " + std::to_string(train.classes) + " classes, model has " +
                      std::to_string(net.spec().head.classes));
  }
  if (train.size() < 2) throw ConfigError("training needs at least two examples");

  const std::size_t batch = std::min(config.batch_size, train.size());
  std::size_t steps_per_epoch = train.size() / batch;
  if (train.size() % batch > 1) ++steps_per_epoch;
  Schedule schedule = config.schedule;
  if (schedule.kind == Schedule::Kind::kHalfCosine && schedule.total_steps == 0) {
    schedule.total_steps = std::max<std::uint64_t>(1, steps_per_epoch * config.epochs);
  }

  TrainLog log;
  while (state.epoch < config.epochs) {
    std::vector<std::size_t> order = all_indices(train);
    std::shuffle(order.begin(), order.end(), state.rng);
    double objective_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        if (end - start < 2) break;
        const std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
        Graph g;
        Scope scope(g, net.params(), Mode::kTrain);
        const NodeRef loss = objective_node(scope, net, train, indices, config);
        const GradientMap grads = backprop(g, loss);
        ParamGradients by_param;
        for (const auto& [id, node] : scope.bindings()) by_param.emplace_back(id, grads.at(node));
        const double lr = lr_at(schedule, state.step, steps_per_epoch, batch);
        state.optimizer.step(net.params(), by_param, lr);
        objective_sum += g.value(loss).item();
        ++batches;
        ++state.step;
      }
    } catch (const NumericError& e) {
      log.diverged = true;
      log.message = "diverged in epoch " + std::to_string(state.epoch + 1) + " at step " +
                    std::to_string(state.step) + ": " + e.what();
      return log;
    }
    ++state.epoch;
    log.objective.push_back(objective_sum / static_cast<double>(batches));
    for (auto& m : evaluate(net, train, config.loss.discrepancy)) {
      log.records.push_back({state.epoch, "train", std::move(m)});
    }
    if (!holdout.examples.empty()) {
      for (auto& m : evaluate(net, holdout, config.loss.discrepancy)) {
        log.records.push_back({state.epoch, "holdout", std::move(m)});
      }
    }
    if (on_epoch) on_epoch(state);
  }
  return log;
}

TrainResult train(MultiHeadNet net, const Dataset& train_data, const Dataset& holdout,
                  const TrainConfig& config) {
  TrainState state = start_training(std::move(net), config);
  TrainLog log = run_training(state, train_data, holdout, config);
  return {std::move(state.net), std::move(log)};
}

}  // namespace codistill
