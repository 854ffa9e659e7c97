// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "codistill/ensemble.hpp"
#include "codistill/graph.hpp"
#include "codistill/layers.hpp"

namespace codistill {
namespace {

constexpr double kEpsilon = 1e-6;

using Rng = std::mt19937_64;

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(element_count(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Uniform values in [lo, hi] at least `margin` away from every kink.
Tensor away_from(Rng& rng, Shape shape, double lo, double hi, const std::vector<double>& kinks,
                 double margin = 0.05) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(element_count(shape));
  for (double& x : v) {
    do {
      x = dist(rng);
    } while (std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(x - k) < margin; }));
  }
  return Tensor(std::move(shape), std::move(v));
}

// Magnitude in [lo, hi] with a random sign.
Tensor signed_magnitude(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = uniform(rng, shape, lo, hi);
  std::bernoulli_distribution flip(0.5);
  std::vector<double> v(t.data().begin(), t.data().end());
  for (double& x : v)
    if (flip(rng)) x = -x;
  return Tensor(std::move(shape), std::move(v));
}

// Weighted sum, so that every output element carries a distinct gradient.
NodeRef scalarize(Graph& g, NodeRef out, Rng& rng) {
  return reduce_sum(g, multiply(g, out, g.constant(uniform(rng, g.value(out).shape(), -1.0, 1.0))));
}

struct Tracker {
  std::map<std::string, GradientCase> cases;
  std::vector<std::string> order;

  void record(const std::string& name, double error, std::size_t elements) {
    auto [it, inserted] = cases.try_emplace(name, GradientCase{name, 0.0, 0});
    if (inserted) order.push_back(name);
    it->second.max_relative_error = std::max(it->second.max_relative_error, error);
    it->second.elements += elements;
  }

  void check(const std::string& name, const Graph& g, NodeRef loss) {
    const GradientCheckReport report = check_gradients(g, loss, kEpsilon, kGradientTolerance);
    std::size_t elements = 0;
    for (NodeRef p : g.parameters()) elements += g.value(p).size();
    record(name, report.max_relative_error(), elements);
  }
};

using Case = std::function<void(Rng&, Tracker&)>;

void primitive_cases(std::vector<std::pair<std::string, Case>>& cases) {
  const auto unary = [](std::string name, std::function<Tensor(Rng&, Shape)> input,
                        std::function<NodeRef(Graph&, NodeRef)> op) {
    return std::pair<std::string, Case>{name, [=](Rng& rng, Tracker& t) {
      Graph g;
      const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
      NodeRef x = g.parameter(input(rng, s), "x");
      t.check(name, g, scalarize(g, op(g, x), rng));
    }};
  };
  const auto any = [](Rng& rng, Shape s) { return uniform(rng, s, -2.0, 2.0); };
  const auto positive = [](Rng& rng, Shape s) { return uniform(rng, s, 0.5, 2.0); };
  const auto nonzero = [](Rng& rng, Shape s) { return signed_magnitude(rng, s, 0.1, 2.0); };

  cases.push_back(unary("abs", nonzero, [](Graph& g, NodeRef x) { return abs(g, x); }));
  cases.push_back(unary("square", any, [](Graph& g, NodeRef x) { return square(g, x); }));
  cases.push_back(unary("sqrt", positive, [](Graph& g, NodeRef x) { return sqrt(g, x); }));
  cases.push_back(unary("exp", any, [](Graph& g, NodeRef x) { return exp(g, x); }));
  cases.push_back(unary("log", positive, [](Graph& g, NodeRef x) { return log(g, x); }));
  cases.push_back(unary("relu", nonzero, [](Graph& g, NodeRef x) { return relu(g, x); }));
  cases.push_back(unary(
      "relu6", [](Rng& rng, Shape s) { return away_from(rng, s, -2.0, 8.0, {0.0, 6.0}); },
      [](Graph& g, NodeRef x) { return relu6(g, x); }));
  cases.push_back(unary("sigmoid", any, [](Graph& g, NodeRef x) { return sigmoid(g, x); }));
  cases.push_back(unary("softmax", any, [](Graph& g, NodeRef x) { return softmax(g, x); }));
  cases.push_back(unary(
      "clamp_min", [](Rng& rng, Shape s) { return away_from(rng, s, -2.0, 2.0, {0.3}); },
      [](Graph& g, NodeRef x) { return clamp_min(g, x, 0.3); }));
  cases.push_back(unary("reduce_sum", any, [](Graph& g, NodeRef x) { return reduce_sum(g, x); }));
  cases.push_back(unary("reduce_sum_axis0", any,
                        [](Graph& g, NodeRef x) { return reduce_sum(g, x, 0); }));
  cases.push_back(unary("reduce_sum_axis1", any,
                        [](Graph& g, NodeRef x) { return reduce_sum(g, x, 1); }));
  cases.push_back(unary("reduce_mean", any, [](Graph& g, NodeRef x) { return reduce_mean(g, x); }));
  cases.push_back(unary("reduce_mean_axis0", any,
                        [](Graph& g, NodeRef x) { return reduce_mean(g, x, 0); }));
  cases.push_back(unary("reduce_mean_axis1", any,
                        [](Graph& g, NodeRef x) { return reduce_mean(g, x, 1); }));
  cases.push_back(unary("reshape", any, [](Graph& g, NodeRef x) {
    return reshape(g, x, {g.value(x).size()});
  }));
  cases.push_back(unary("broadcast", any, [](Graph& g, NodeRef x) {
    const Shape& s = g.value(x).shape();
    return broadcast(g, x, {2, s[0], s[1]});
  }));
  cases.push_back(unary("slice", any, [](Graph& g, NodeRef x) {
    const std::size_t cols = g.value(x).dim(1);
    return slice(g, x, 1, cols / 2, cols);
  }));
  cases.push_back(unary("stop_gradient", any, [](Graph& g, NodeRef x) {
    return add(g, square(g, x), multiply(g, x, stop_gradient(g, square(g, x))));
  }));

  const auto binary = [](std::string name, std::function<Tensor(Rng&, Shape)> rhs, bool broadcast_rhs,
                         std::function<NodeRef(Graph&, NodeRef, NodeRef)> op) {
    return std::pair<std::string, Case>{name, [=](Rng& rng, Tracker& t) {
      Graph g;
      const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
      NodeRef a = g.parameter(uniform(rng, s, -2.0, 2.0), "a");
      NodeRef b = g.parameter(rhs(rng, broadcast_rhs ? Shape{s[1]} : s), "b");
      t.check(name, g, scalarize(g, op(g, a, b), rng));
    }};
  };
  const auto any_rhs = [](Rng& rng, Shape s) { return uniform(rng, s, -2.0, 2.0); };
  const auto denominator = [](Rng& rng, Shape s) { return signed_magnitude(rng, s, 0.5, 2.0); };
  for (bool bc : {false, true}) {
    const std::string suffix = bc ? "_broadcast" : "";
    cases.push_back(binary("add" + suffix, any_rhs, bc,
                           [](Graph& g, NodeRef a, NodeRef b) { return add(g, a, b); }));
    cases.push_back(binary("subtract" + suffix, any_rhs, bc,
                           [](Graph& g, NodeRef a, NodeRef b) { return subtract(g, a, b); }));
    cases.push_back(binary("multiply" + suffix, any_rhs, bc,
                           [](Graph& g, NodeRef a, NodeRef b) { return multiply(g, a, b); }));
    cases.push_back(binary("divide" + suffix, denominator, bc,
                           [](Graph& g, NodeRef a, NodeRef b) { return divide(g, a, b); }));
  }

  cases.push_back({"matmul", [](Rng& rng, Tracker& t) {
    Graph g;
    const std::size_t b = draw(rng, 1, 3), m = draw(rng, 1, 4), n = draw(rng, 1, 4);
    NodeRef x = g.parameter(uniform(rng, {b, m}, -2.0, 2.0), "a");
    NodeRef w = g.parameter(uniform(rng, {m, n}, -2.0, 2.0), "b");
    t.check("matmul", g, scalarize(g, matmul(g, x, w), rng));
  }});
  cases.push_back({"concat", [](Rng& rng, Tracker& t) {
    for (int axis : {0, 1}) {
      Graph g;
      const std::size_t r = draw(rng, 1, 3), c = draw(rng, 1, 3);
      NodeRef a = g.parameter(uniform(rng, {r, c}, -2.0, 2.0), "a");
      NodeRef b = g.parameter(uniform(rng, axis == 0 ? Shape{draw(rng, 1, 3), c}
                                                      : Shape{r, draw(rng, 1, 3)},
                                      -2.0, 2.0),
                              "b");
      t.check("concat", g, scalarize(g, concat(g, {a, b}, axis), rng));
    }
  }});
  cases.push_back({"swap_pool", [](Rng& rng, Tracker& t) {
    Graph g;
    std::vector<std::size_t> segments(draw(rng, 1, 3));
    std::size_t rows = 0;
    for (auto& s : segments) rows += (s = draw(rng, 1, 4));
    NodeRef x = g.parameter(signed_magnitude(rng, {rows, draw(rng, 1, 4)}, 0.1, 2.0), "frames");
    t.check("swap_pool", g, scalarize(g, swap_pool(g, x, segments), rng));
  }});
  cases.push_back({"gradient_scale", [](Rng& rng, Tracker& t) {
    // Forward is the identity, so the finite difference sees the unscaled
    // gradient; compare analytic / factor against it.
    Graph g;
    const double factor = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    NodeRef x = g.parameter(uniform(rng, {draw(rng, 1, 3), draw(rng, 1, 4)}, -2.0, 2.0), "x");
    NodeRef loss = scalarize(g, square(g, gradient_scale(g, x, factor)), rng);
    const GradientMap grads = backprop(g, loss);
    const Tensor& grad = grads.at(x);
    const Tensor& base = g.value(x);
    std::vector<double> probe(base.data().begin(), base.data().end());
    double worst = 0.0;
    for (std::size_t e = 0; e < probe.size(); ++e) {
      const double original = probe[e];
      probe[e] = original + kEpsilon;
      const double up = g.replay(loss, {{x, Tensor(base.shape(), probe)}}).item();
      probe[e] = original - kEpsilon;
      const double down = g.replay(loss, {{x, Tensor(base.shape(), probe)}}).item();
      probe[e] = original;
      const double numeric = factor * (up - down) / (2.0 * kEpsilon);
      worst = std::max(worst, gradient_relative_error(grad[e], numeric));
    }
    t.record("gradient_scale", worst, probe.size());
  }});
}

void layer_cases(std::vector<std::pair<std::string, Case>>& cases) {
  for (Activation act : {Activation::kNone, Activation::kRelu, Activation::kRelu6,
                         Activation::kSigmoid}) {
    for (bool bias : {true, false}) {
      const std::string name =
          "dense_" + to_string(act) + (bias ? "" : "_nobias");
      cases.push_back({name, [=](Rng& rng, Tracker& t) {
        Graph g;
        ParameterStore store;
        const std::size_t b = draw(rng, 1, 3), in = draw(rng, 1, 4), out = draw(rng, 1, 4);
        const DenseLayer layer = make_dense(store, "dense", in, out, act, bias, rng);
        Scope scope(g, store, Mode::kTrain);
        NodeRef x = g.constant(uniform(rng, {b, in}, -2.0, 2.0));
        t.check(name, g, scalarize(g, dense_forward(scope, layer, x), rng));
      }});
    }
  }
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    const std::string name = mode == Mode::kTrain ? "batchnorm_train" : "batchnorm_eval";
    cases.push_back({name, [=](Rng& rng, Tracker& t) {
      Graph g;
      ParameterStore store;
      const std::size_t b = draw(rng, 2, 4), f = draw(rng, 1, 4);
      const BatchNormLayer layer = make_batchnorm(store, "bn", f);
      store.set(layer.gamma, uniform(rng, {f}, 0.5, 1.5));
      store.set(layer.beta, uniform(rng, {f}, -0.5, 0.5));
      store.set(layer.running_mean, uniform(rng, {f}, -0.5, 0.5));
      store.set(layer.running_variance, uniform(rng, {f}, 0.5, 1.5));
      Scope scope(g, store, mode);
      NodeRef x = g.parameter(uniform(rng, {b, f}, -2.0, 2.0), "x");
      t.check(name, g, scalarize(g, batchnorm_forward(scope, layer, x), rng));
    }});
  }
  cases.push_back({"context_gate", [](Rng& rng, Tracker& t) {
    Graph g;
    ParameterStore store;
    const std::size_t b = draw(rng, 1, 3), f = draw(rng, 1, 4);
    const ContextGate gate = make_context_gate(store, "gate", f, rng);
    store.set(gate.weight, uniform(rng, {f, f}, -1.0, 1.0));
    store.set(gate.bias, uniform(rng, {f}, -0.5, 0.5));
    Scope scope(g, store, Mode::kTrain);
    NodeRef x = g.parameter(uniform(rng, {b, f}, -2.0, 2.0), "x");
    t.check("context_gate", g, scalarize(g, context_gate_forward(scope, gate, x), rng));
  }});
  cases.push_back({"moe_head", [](Rng& rng, Tracker& t) {
    Graph g;
    ParameterStore store;
    const std::size_t b = draw(rng, 1, 3), in = draw(rng, 1, 4), c = draw(rng, 1, 3),
                      e = draw(rng, 1, 3);
    const MoEHead head = make_moe_head(store, "moe", in, c, e, rng);
    for (ParamId id : {head.gate_weight, head.gate_bias, head.expert_weight, head.expert_bias}) {
      store.set(id, uniform(rng, store.value(id).shape(), -1.0, 1.0));
    }
    Scope scope(g, store, Mode::kTrain);
    NodeRef x = g.parameter(uniform(rng, {b, in}, -2.0, 2.0), "x");
    t.check("moe_head", g, scalarize(g, moe_head_forward(scope, head, x), rng));
  }});
  cases.push_back({"swap_pool_layer", [](Rng& rng, Tracker& t) {
    Graph g;
    std::vector<std::size_t> segments(draw(rng, 1, 3));
    std::size_t rows = 0;
    for (auto& s : segments) rows += (s = draw(rng, 1, 4));
    NodeRef x = g.parameter(signed_magnitude(rng, {rows, draw(rng, 1, 4)}, 0.1, 2.0), "frames");
    t.check("swap_pool_layer", g, scalarize(g, swap_pool_forward(g, x, segments), rng));
  }});

  // Whole networks under both loss structures and both discrepancies.
  for (HeadKind head : {HeadKind::kSoftmax, HeadKind::kMoE}) {
    for (bool ensembling : {true, false}) {
      for (Discrepancy d : {Discrepancy::kCrossEntropy, Discrepancy::kL2}) {
        const std::string name = std::string("network_") +
                                 (head == HeadKind::kSoftmax ? "softmax_" : "moe_") +
                                 (ensembling ? "ensembling_" : "codistillation_") + to_string(d);
        cases.push_back({name, [=](Rng& rng, Tracker& t) {
          const std::size_t in = draw(rng, 1, 3), classes = draw(rng, 2, 3),
                            batch = draw(rng, 2, 4), branches = draw(rng, 1, 3);
          const std::vector<LayerSpec> layers{
              LayerSpec::dense(draw(rng, 2, 4), Activation::kSigmoid, true),
              LayerSpec::context_gate(),
              LayerSpec::dense(draw(rng, 2, 4), Activation::kSigmoid)};
          const NetworkSpec single = single_network(in, layers, {head, classes, 2}, true);
          const NetworkSpec spec = fork_network(single, 1, 1.5, branches);
          MultiHeadNet net = MultiHeadNet::build(spec, rng());
          for (const auto& entry : net.params().entries()) {
            if (entry.role == ParamRole::kWeight) {
              net.params().set(*net.params().find(entry.name),
                               uniform(rng, entry.value.shape(), -1.0, 1.0));
            }
          }
          Graph g;
          Scope scope(g, net.params(), Mode::kTrain);
          const Batch input{uniform(rng, {batch, in}, -2.0, 2.0), {}};
          const PredictionBundle bundle = forward(scope, net, input);
          const Tensor truth = uniform(rng, {batch, classes}, 0.05, 0.95);
          const double w = std::uniform_real_distribution<double>(-1.5, 2.0)(rng);
          const LossStructure s = ensembling ? LossStructure::ensembling(w, d)
                                             : LossStructure::co_distillation(w, d);
          const LossTerms terms =
              total_loss(g, bundle, g.constant(truth), s, target_kind(head));
          t.check(name, g, terms.total);
        }});
      }
    }
  }
}

MultiHeadNet toy_network(std::uint64_t seed) {
  const std::vector<LayerSpec> layers{LayerSpec::dense(4, Activation::kSigmoid),
                                      LayerSpec::dense(6, Activation::kSigmoid)};
  const NetworkSpec single = single_network(3, layers, {HeadKind::kSoftmax, 3, 1});
  return MultiHeadNet::build(fork_network(single, 1, 1.5, 2), seed);
}

Batch toy_batch(Rng& rng) { return {uniform(rng, {5, 3}, -2.0, 2.0), {}}; }

Tensor toy_targets(Rng& rng) {
  std::vector<double> rows(5 * 3, 0.0);
  for (std::size_t r = 0; r < 5; ++r) rows[r * 3 + draw(rng, 0, 2)] = 1.0;
  return Tensor({5, 3}, std::move(rows));
}

// Largest |d term / d theta| by central differences over `params`.
double fd_sensitivity(const Graph& g, NodeRef term, const std::vector<NodeRef>& params) {
  double worst = 0.0;
  for (NodeRef p : params) {
    const Tensor& base = g.value(p);
    std::vector<double> probe(base.data().begin(), base.data().end());
    for (std::size_t e = 0; e < probe.size(); ++e) {
      const double original = probe[e];
      probe[e] = original + kEpsilon;
      const double up = g.replay(term, {{p, Tensor(base.shape(), probe)}}).item();
      probe[e] = original - kEpsilon;
      const double down = g.replay(term, {{p, Tensor(base.shape(), probe)}}).item();
      probe[e] = original;
      worst = std::max(worst, std::abs(up - down) / (2.0 * kEpsilon));
    }
  }
  return worst;
}

}  // namespace

double GradientSuite::max_relative_error() const {
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, c.max_relative_error);
  return worst;
}

GradientSuite gradient_check_suite(std::size_t configurations, std::uint64_t seed) {
  std::vector<std::pair<std::string, Case>> cases;
  primitive_cases(cases);
  layer_cases(cases);
  Rng rng(seed);
  Tracker tracker;
  for (std::size_t i = 0; i < configurations; ++i) {
    for (const auto& [name, run] : cases) run(rng, tracker);
  }
  GradientSuite suite;
  suite.configurations = configurations;
  for (const auto& name : tracker.order) suite.cases.push_back(tracker.cases.at(name));
  return suite;
}

IsolationResult stop_gradient_isolation(std::uint64_t seed) {
  Rng rng(seed);
  MultiHeadNet net = toy_network(rng());
  const Batch batch = toy_batch(rng);
  const Tensor truth = toy_targets(rng);
  IsolationResult result;
  for (Barrier barrier : {Barrier::kApply, Barrier::kOmit}) {
    Graph g;
    Scope scope(g, std::as_const(net).params());
    const PredictionBundle bundle = forward(scope, net, batch);
    const LossTerms terms = total_loss(g, bundle, g.constant(truth),
                                       LossStructure::co_distillation(1.0),
                                       TargetKind::kCategorical, barrier);
    std::vector<NodeRef> exclusive;
    for (ParamId id : net.branch_params(1)) exclusive.push_back(scope.param(id));
    const double numeric = fd_sensitivity(g, terms.aux[0], exclusive);
    if (barrier == Barrier::kOmit) {
      result.numeric_without_barrier = numeric;
      continue;
    }
    result.numeric = numeric;
    const GradientMap grads = backprop(g, terms.aux[0]);
    for (NodeRef p : exclusive) {
      for (double v : grads.at(p).data()) result.analytic = std::max(result.analytic, std::abs(v));
    }
  }
  return result;
}

double lambda_symmetry(std::uint64_t seed) {
  Rng rng(seed);
  MultiHeadNet net = toy_network(rng());
  net.mirror_branches();
  const Batch batch = toy_batch(rng);
  const Tensor truth = toy_targets(rng);
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (double lambda : {-2.0, -1.0, 0.0, 0.5, 1.0}) {
    Graph g;
    Scope scope(g, std::as_const(net).params());
    const PredictionBundle bundle = forward(scope, net, batch);
    const double loss = g.value(total_loss(g, bundle, g.constant(truth),
                                           LossStructure::ensembling(lambda),
                                           TargetKind::kCategorical)
                                    .total)
                            .item();
    lo = first ? loss : std::min(lo, loss);
    hi = first ? loss : std::max(hi, loss);
    first = false;
  }
  return hi - lo;
}

bool VerifyReport::passed() const {
  return std::all_of(lines.begin(), lines.end(), [](const VerifyLine& l) { return l.passed; });
}

VerifyReport run_verify(std::size_t trials, std::uint64_t seed) {
  VerifyReport report;
  const auto add_line = [&](std::string name, double value, double threshold) {
    report.lines.push_back({std::move(name), value, threshold, value < threshold});
  };
  double equivalence = 0.0;
  for (std::size_t n : {1, 2, 3, 5}) {
    equivalence = std::max(equivalence, verify_equivalence(n, trials, seed + n));
  }
  add_line("equivalence_max_abs_diff", equivalence, kEquivalenceThreshold);

  const GradientSuite suite = gradient_check_suite(std::min<std::size_t>(trials, 100), seed);
  for (const auto& c : suite.cases) {
    add_line("gradient_check/" + c.name, c.max_relative_error, kGradientTolerance);
  }

  const IsolationResult iso = stop_gradient_isolation(seed);
  add_line("stop_gradient_isolation/analytic", iso.analytic, kIsolationThreshold);
  add_line("stop_gradient_isolation/numeric", iso.numeric, kIsolationThreshold);
  add_line("lambda_symmetry_spread", lambda_symmetry(seed), kSymmetryThreshold);
  return report;
}

}  // namespace codistill
