// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "codistill/error.hpp"

namespace codistill {
namespace {

std::mt19937_64 derived_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Builds one stack, returning the output width.
std::size_t build_stack(const std::vector<LayerSpec>& specs, std::size_t width,
                        const std::string& prefix, ParameterStore& store,
                        std::vector<Block>& blocks, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    const std::string name = prefix + "/" + std::to_string(i);
    Block block;
    block.kind = spec.kind;
    switch (spec.kind) {
      case LayerKind::kDense:
        block.dense = make_dense(store, name + "/dense", width, spec.width, Activation::kNone,
                                 !spec.batch_norm, rng);
        if (spec.batch_norm) block.batch_norm = make_batchnorm(store, name + "/bn", spec.width);
        block.activation = spec.activation;
        width = spec.width;
        break;
      case LayerKind::kContextGate:
        block.gate = make_context_gate(store, name + "/gate", width, rng);
        break;
      case LayerKind::kSwapPool:
        break;
    }
    blocks.push_back(std::move(block));
  }
  return width;
}

NodeRef run_stack(Scope& scope, const std::vector<Block>& blocks, NodeRef x,
                  std::vector<std::size_t>& segments) {
  Graph& g = scope.graph();
  for (const Block& block : blocks) {
    switch (block.kind) {
      case LayerKind::kDense:
        x = dense_forward(scope, *block.dense, x);
        if (block.batch_norm) x = batchnorm_forward(scope, *block.batch_norm, x);
        x = activate(g, x, block.activation);
        break;
      case LayerKind::kContextGate:
        x = context_gate_forward(scope, *block.gate, x);
        break;
      case LayerKind::kSwapPool:
        x = swap_pool_forward(g, x, segments);
        segments.clear();
        break;
    }
  }
  return x;
}

std::vector<ParamId> ids_between(std::size_t begin, std::size_t end) {
  std::vector<ParamId> ids;
  for (std::size_t i = begin; i < end; ++i) ids.push_back(ParamId{i});
  return ids;
}

std::size_t batch_size_of(const Tensor& t) { return t.rank() >= 2 ? t.dim(0) : 1; }

}  // namespace

LayerSpec LayerSpec::dense(std::size_t width, Activation activation, bool batch_norm) {
  return LayerSpec{LayerKind::kDense, width, activation, batch_norm};
}

LayerSpec LayerSpec::context_gate() {
  return LayerSpec{LayerKind::kContextGate, 0, Activation::kNone, false};
}

LayerSpec LayerSpec::swap_pool() {
  return LayerSpec{LayerKind::kSwapPool, 0, Activation::kNone, false};
}

bool NetworkSpec::frame_input() const {
  const auto is_swap = [](const LayerSpec& l) { return l.kind == LayerKind::kSwapPool; };
  if (std::any_of(base.begin(), base.end(), is_swap)) return true;
  return !branches.empty() && std::any_of(branches[0].begin(), branches[0].end(), is_swap);
}

std::size_t NetworkSpec::base_output_width() const {
  std::size_t width = input_dim;
  for (const LayerSpec& l : base) {
    if (l.kind == LayerKind::kDense) width = l.width;
  }
  return width;
}

void NetworkSpec::validate() const {
  if (input_dim == 0) throw ConfigError("network input width must be positive");
  if (branches.empty()) throw ConfigError("network needs at least one branch");
  if (head.classes == 0) throw ConfigError("head needs at least one class");
  if (head.kind == HeadKind::kMoE && head.experts == 0) {
    throw ConfigError("moe head needs at least one expert");
  }
  const auto count_swaps = [](const std::vector<LayerSpec>& layers) {
    std::size_t n = 0;
    for (const LayerSpec& l : layers) {
      if (l.kind == LayerKind::kDense && l.width == 0) {
        throw ConfigError("dense layer width must be positive");
      }
      n += l.kind == LayerKind::kSwapPool;
    }
    return n;
  };
  const std::size_t base_swaps = count_swaps(base);
  std::optional<std::size_t> branch_swaps;
  for (const auto& branch : branches) {
    const std::size_t n = count_swaps(branch);
    if (branch_swaps && *branch_swaps != n) {
      throw ConfigError("branches disagree on frame pooling");
    }
    branch_swaps = n;
  }
  if (base_swaps + *branch_swaps > 1) throw ConfigError("at most one swap pooling layer allowed");
}

NetworkSpec single_network(std::size_t input_dim, std::vector<LayerSpec> layers, HeadSpec head,
                           bool input_batch_norm) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.input_batch_norm = input_batch_norm;
  spec.base = std::move(layers);
  spec.branches.emplace_back();
  spec.head = head;
  return spec;
}

NetworkSpec fork_network(const NetworkSpec& single, std::size_t fork_point, double shrink_ratio,
                         std::size_t n_branches, std::vector<std::string>* warnings) {
  if (single.branch_count() != 1) throw ConfigError("fork_network expects an unforked network");
  if (!(shrink_ratio >= 1.0) || !std::isfinite(shrink_ratio)) {
    throw ConfigError("shrink ratio must be at least 1");
  }
  if (n_branches < 1) throw ConfigError("fork_network needs at least one branch");
  std::vector<LayerSpec> layers = single.base;
  layers.insert(layers.end(), single.branches[0].begin(), single.branches[0].end());
  if (fork_point == 0 || fork_point >= layers.size()) {
    throw ConfigError("fork point " + std::to_string(fork_point) + " must fall strictly inside " +
                      std::to_string(layers.size()) + " layers");
  }

  NetworkSpec out;
  out.input_dim = single.input_dim;
  out.input_batch_norm = single.input_batch_norm;
  out.head = single.head;
  out.base.assign(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(fork_point));
  std::vector<LayerSpec> upper(layers.begin() + static_cast<std::ptrdiff_t>(fork_point),
                               layers.end());
  for (LayerSpec& l : upper) {
    if (l.kind != LayerKind::kDense) continue;
    const double shrunk = std::round(static_cast<double>(l.width) / shrink_ratio);
    if (shrunk < 1.0) {
      const std::string msg = "fork_network: width " + std::to_string(l.width) +
                              " shrinks to 0 at ratio " + std::to_string(shrink_ratio) +
                              "; clamped to 1";
      if (warnings) {
        warnings->push_back(msg);
      } else {
        std::cerr << "warning: " << msg << "\n";
      }
      l.width = 1;
    } else {
      l.width = static_cast<std::size_t>(shrunk);
    }
  }
  out.branches.assign(n_branches, upper);
  out.validate();
  return out;
}

std::size_t Batch::example_count() const {
  return segments.empty() ? features.dim(0) : segments.size();
}

MultiHeadNet MultiHeadNet::build(NetworkSpec spec, std::uint64_t seed) {
  spec.validate();
  MultiHeadNet net;
  net.spec_ = std::move(spec);
  const NetworkSpec& s = net.spec_;

  std::mt19937_64 base_rng = derived_stream(seed, 0);
  if (s.input_batch_norm) net.input_bn_ = make_batchnorm(net.params_, "base/input_bn", s.input_dim);
  const std::size_t width = build_stack(s.base, s.input_dim, "base", net.params_, net.base_,
                                        base_rng);
  net.base_params_ = ids_between(0, net.params_.size());

  for (std::size_t b = 0; b < s.branch_count(); ++b) {
    std::mt19937_64 rng = derived_stream(seed, b + 1);
    const std::size_t first = net.params_.size();
    const std::string prefix = "branch" + std::to_string(b);
    Branch branch;
    const std::size_t top = build_stack(s.branches[b], width, prefix, net.params_,
                                        branch.blocks, rng);
    branch.head.kind = s.head.kind;
    if (s.head.kind == HeadKind::kSoftmax) {
      branch.head.logits = make_dense(net.params_, prefix + "/head", top, s.head.classes,
                                      Activation::kNone, true, rng);
    } else {
      branch.head.moe = make_moe_head(net.params_, prefix + "/head", top, s.head.classes,
                                      s.head.experts, rng);
    }
    net.branches_.push_back(std::move(branch));
    net.branch_params_.push_back(ids_between(first, net.params_.size()));
  }
  return net;
}

const std::vector<ParamId>& MultiHeadNet::branch_params(std::size_t branch) const {
  return branch_params_.at(branch);
}

void MultiHeadNet::mirror_branches() {
  const auto& source = branch_params_.at(0);
  for (std::size_t b = 1; b < branch_params_.size(); ++b) {
    const auto& target = branch_params_[b];
    if (target.size() != source.size()) {
      throw ShapeError("mirror_branches: branch " + std::to_string(b) + " has a different layout");
    }
    for (std::size_t i = 0; i < source.size(); ++i) {
      params_.set(target[i], params_.value(source[i]));
    }
  }
}

PredictionBundle forward(Scope& scope, const MultiHeadNet& net, const Batch& batch) {
  const NetworkSpec& spec = net.spec();
  Graph& g = scope.graph();
  const Tensor& features = batch.features;
  if (features.rank() != 2 || features.dim(1) != spec.input_dim) {
    throw ShapeError("forward: input " + to_string(features.shape()) +
                     " does not match input width " + std::to_string(spec.input_dim));
  }
  if (spec.frame_input() == batch.segments.empty()) {
    throw ShapeError(spec.frame_input() ? "forward: network pools frames but batch has no segments"
                                        : "forward: batch has frame segments but network has no pooling");
  }
  std::vector<std::size_t> segments = batch.segments;
  NodeRef x = g.constant(features);
  if (net.input_batch_norm()) x = batchnorm_forward(scope, *net.input_batch_norm(), x);
  x = run_stack(scope, net.base_blocks(), x, segments);

  PredictionBundle bundle;
  for (std::size_t b = 0; b < net.branch_count(); ++b) {
    const Branch& branch = net.branch(b);
    std::vector<std::size_t> branch_segments = segments;
    NodeRef y = run_stack(scope, branch.blocks, x, branch_segments);
    if (branch.head.kind == HeadKind::kSoftmax) {
      y = softmax(g, dense_forward(scope, *branch.head.logits, y));
    } else {
      y = moe_head_forward(scope, *branch.head.moe, y);
    }
    bundle.aux.push_back(y);
  }
  bundle.ensemble = average(g, bundle.aux);
  return bundle;
}

NodeRef average(Graph& g, const std::vector<NodeRef>& predictions) {
  if (predictions.empty()) throw ShapeError("average: no predictions");
  NodeRef total = predictions[0];
  for (std::size_t i = 1; i < predictions.size(); ++i) total = add(g, total, predictions[i]);
  return divide(g, total, g.constant(Tensor::scalar(static_cast<double>(predictions.size()))));
}

Predictions predict(const MultiHeadNet& net, const Batch& batch) {
  Graph g;
  Scope scope(g, net.params());
  const PredictionBundle bundle = forward(scope, net, batch);
  Predictions out;
  for (NodeRef p : bundle.aux) out.aux.push_back(g.value(p));
  out.ensemble = g.value(bundle.ensemble);
  return out;
}

TargetKind target_kind(HeadKind head) {
  return head == HeadKind::kSoftmax ? TargetKind::kCategorical : TargetKind::kMultiLabel;
}

std::string to_string(Discrepancy d) {
  return d == Discrepancy::kL2 ? "l2" : "cross_entropy";
}

NodeRef discrepancy(Graph& g, Discrepancy kind, TargetKind target_kind, NodeRef target,
                    NodeRef prediction) {
  const Tensor& t = g.value(target);
  const Tensor& p = g.value(prediction);
  if (t.shape() != p.shape()) {
    throw ShapeError("discrepancy: target " + to_string(t.shape()) + " vs prediction " +
                     to_string(p.shape()));
  }
  const double batch = static_cast<double>(batch_size_of(p));
  if (kind == Discrepancy::kL2) {
    return scale(g, reduce_sum(g, square(g, subtract(g, prediction, target))), 1.0 / batch);
  }
  for (double v : p.data()) {
    if (v < 0.0 || v > 1.0) {
      throw DomainError("cross entropy: prediction " + std::to_string(v) + " outside (0, 1)");
    }
  }
  NodeRef log_p = log(g, clamp_min(g, prediction, kLogFloor));
  NodeRef terms = multiply(g, target, log_p);
  if (target_kind == TargetKind::kMultiLabel) {
    NodeRef one = g.constant(Tensor::scalar(1.0));
    NodeRef log_q = log(g, clamp_min(g, subtract(g, one, prediction), kLogFloor));
    terms = add(g, terms, multiply(g, subtract(g, one, target), log_q));
  }
  return scale(g, reduce_sum(g, terms), -1.0 / batch);
}

LossStructure LossStructure::ensembling(double lambda, Discrepancy d) {
  if (!std::isfinite(lambda)) throw ConfigError("lambda must be finite");
  return LossStructure{Kind::kEnsembling, lambda, d};
}

LossStructure LossStructure::co_distillation(double mu, Discrepancy d) {
  if (!std::isfinite(mu)) throw ConfigError("mu must be finite");
  return LossStructure{Kind::kCoDistillation, mu, d};
}

LossTerms total_loss(Graph& g, const PredictionBundle& bundle, NodeRef truth,
                     const LossStructure& structure, TargetKind target_kind, Barrier barrier) {
  if (bundle.aux.empty()) throw ShapeError("total_loss: no branch predictions");
  const double n = static_cast<double>(bundle.aux.size());
  const auto l = [&](NodeRef target, NodeRef prediction) {
    return discrepancy(g, structure.discrepancy, target_kind, target, prediction);
  };

  LossTerms terms;
  if (structure.kind == LossStructure::Kind::kEnsembling) {
    const double lambda = structure.weight;
    for (NodeRef p : bundle.aux) terms.aux.push_back(scale(g, l(truth, p), 1.0 - lambda));
    terms.ensemble = scale(g, l(truth, bundle.ensemble), n * lambda);
  } else {
    const double mu = structure.weight;
    NodeRef soft_target =
        barrier == Barrier::kApply ? stop_gradient(g, bundle.ensemble) : bundle.ensemble;
    for (NodeRef p : bundle.aux) terms.aux.push_back(scale(g, l(soft_target, p), mu));
    terms.ensemble = scale(g, l(truth, bundle.ensemble), n);
  }
  NodeRef total = terms.aux[0];
  for (std::size_t i = 1; i < terms.aux.size(); ++i) total = add(g, total, terms.aux[i]);
  terms.total = add(g, total, terms.ensemble);
  return terms;
}

namespace {

struct EquivalenceTrial {
  std::vector<Tensor> predictions;
  Tensor truth;
  double lambda = 0.0;
};

EquivalenceTrial draw_trial(std::size_t n_branches, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> batch_dist(1, 3);
  std::uniform_int_distribution<std::size_t> dim_dist(1, 4);
  std::uniform_real_distribution<double> value(-2.0, 2.0);
  std::uniform_real_distribution<double> lambda(-3.0, 2.0);
  const Shape shape{batch_dist(rng), dim_dist(rng)};
  const auto draw = [&] {
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = value(rng);
    return Tensor(shape, std::move(data));
  };
  EquivalenceTrial trial;
  for (std::size_t i = 0; i < n_branches; ++i) trial.predictions.push_back(draw());
  trial.truth = draw();
  trial.lambda = lambda(rng);
  return trial;
}

}  // namespace

double verify_equivalence(std::size_t n_branches, std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("verify_equivalence needs at least one trial");
  if (n_branches < 1) throw ConfigError("verify_equivalence needs at least one branch");
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const EquivalenceTrial trial = draw_trial(n_branches, rng);
    Graph g;
    PredictionBundle bundle;
    for (const Tensor& p : trial.predictions) bundle.aux.push_back(g.constant(p));
    bundle.ensemble = average(g, bundle.aux);
    NodeRef truth = g.constant(trial.truth);
    const auto ens = total_loss(g, bundle, truth,
                                LossStructure::ensembling(trial.lambda, Discrepancy::kL2),
                                TargetKind::kCategorical, Barrier::kOmit);
    const auto codist = total_loss(g, bundle, truth,
                                   LossStructure::co_distillation(1.0 - trial.lambda,
                                                                  Discrepancy::kL2),
                                   TargetKind::kCategorical, Barrier::kOmit);
    worst = std::max(worst, std::abs(g.value(ens.total).item() - g.value(codist.total).item()));
  }
  return worst;
}

GradientGap measure_gradient_gap(std::size_t n_branches, std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradientGap gap;
  for (std::size_t t = 0; t < trials; ++t) {
    const EquivalenceTrial trial = draw_trial(n_branches, rng);
    const auto gradients = [&](const LossStructure& structure, Barrier barrier) {
      Graph g;
      PredictionBundle bundle;
      for (const Tensor& p : trial.predictions) bundle.aux.push_back(g.parameter(p));
      bundle.ensemble = average(g, bundle.aux);
      NodeRef truth = g.constant(trial.truth);
      const auto terms = total_loss(g, bundle, truth, structure, TargetKind::kCategorical, barrier);
      return backprop(g, terms.total);
    };
    const GradientMap ens =
        gradients(LossStructure::ensembling(trial.lambda, Discrepancy::kL2), Barrier::kOmit);
    const LossStructure codist = LossStructure::co_distillation(1.0 - trial.lambda, Discrepancy::kL2);
    const GradientMap plain = gradients(codist, Barrier::kOmit);
    const GradientMap barred = gradients(codist, Barrier::kApply);
    for (std::size_t i = 0; i < ens.size(); ++i) {
      const Tensor& a = ens.entries()[i].second;
      const Tensor& b = plain.entries()[i].second;
      const Tensor& c = barred.entries()[i].second;
      for (std::size_t e = 0; e < a.size(); ++e) {
        gap.without_barrier = std::max(gap.without_barrier, std::abs(a[e] - b[e]));
        gap.with_barrier = std::max(gap.with_barrier, std::abs(a[e] - c[e]));
      }
    }
  }
  return gap;
}

}  // namespace codistill
