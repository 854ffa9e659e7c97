// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "codistill/data.hpp"
#include "codistill/error.hpp"
#include "codistill/training.hpp"
#include "doctest.h"

using namespace codistill;

namespace {

OptimizerConfig plain_momentum(double m) {
  OptimizerConfig c;
  c.kind = OptimizerKind::kMomentum;
  c.momentum = m;
  return c;
}

NetworkSpec small_net(std::size_t input, std::size_t classes, std::size_t branches) {
  const NetworkSpec single = single_network(
      input, {LayerSpec::dense(16, Activation::kRelu), LayerSpec::dense(12, Activation::kRelu)},
      {HeadKind::kSoftmax, classes, 1});
  return branches == 1 ? single : fork_network(single, 1, 1.5, branches);
}

std::pair<Dataset, Dataset> blobs(double spread, double noise, double label_noise,
                                  std::uint64_t seed) {
  GaussianMixtureParams p;
  p.classes = 3;
  p.dim = 4;
  p.per_class = 40;
  p.spread = spread;
  p.noise = noise;
  p.label_noise = label_noise;
  p.seed = seed;
  return split(gen_gaussian_mixture(p), {0.5, seed});
}

TrainConfig quick_config(std::uint64_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.schedule = Schedule::constant(0.05);
  c.loss = LossStructure::co_distillation(1.0);
  return c;
}

double decayed_square_sum(const ParameterStore& store) {
  double s = 0.0;
  for (const auto& e : store.entries())
    if (is_decayed(e.role))
      for (double v : e.value.data()) s += v * v;
  return s;
}

}  // namespace

TEST_CASE("label smoothing") {
  const Tensor s = smooth_labels(Tensor::matrix(2, 2, {1, 0, 0, 1}), 0.1);
  CHECK(s.at(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(s.at(0, 1) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(s.at(1, 1) == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(smooth_labels(Tensor::matrix(1, 4, {0, 0, 1, 0}), 0.0) == Tensor::matrix(1, 4, {0, 0, 1, 0}));
  CHECK_THROWS_AS(smooth_labels(Tensor::matrix(1, 2, {1, 1}), 0.1), DomainError);
  CHECK_THROWS_AS(smooth_labels(Tensor::matrix(1, 2, {1, 0}), 1.0), ConfigError);
}

TEST_CASE("momentum accumulates velocity") {
  ParameterStore store;
  const ParamId w = store.add("w", Tensor::vector({1.0}), ParamRole::kWeight);
  OptimizerState opt = OptimizerState::create(plain_momentum(0.9), store);
  const ParamGradients grads{{w, Tensor::vector({1.0})}};
  opt.step(store, grads, 0.1);
  CHECK(store.value(w)[0] == doctest::Approx(0.9).epsilon(1e-15));
  opt.step(store, grads, 0.1);
  // v = 0.9 * 1 + 1 = 1.9, so the second decrement is 0.19.
  CHECK(store.value(w)[0] == doctest::Approx(0.71).epsilon(1e-15));
  CHECK(opt.steps() == 2);
}

TEST_CASE("adam first step moves each weight by about lr") {
  ParameterStore store;
  const ParamId w = store.add("w", Tensor::vector({1.0, -2.0}), ParamRole::kWeight);
  OptimizerConfig c;
  c.kind = OptimizerKind::kAdam;
  OptimizerState opt = OptimizerState::create(c, store);
  opt.step(store, {{w, Tensor::vector({4.0, -0.001})}}, 0.01);
  CHECK(store.value(w)[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(store.value(w)[1] == doctest::Approx(-1.99).epsilon(1e-5));
  CHECK(opt.slots(store).size() == 2);
}

TEST_CASE("optimizer rejects incomplete or malformed gradients without changing weights") {
  ParameterStore store;
  const ParamId a = store.add("a", Tensor::vector({1.0}), ParamRole::kWeight);
  const ParamId b = store.add("b", Tensor::vector({2.0}), ParamRole::kBias);
  OptimizerState opt = OptimizerState::create(plain_momentum(0.9), store);
  const ParameterStore before = store;
  CHECK_THROWS_AS(opt.step(store, {{a, Tensor::vector({1.0})}}, 0.1), ConfigError);
  CHECK_THROWS_AS(opt.step(store, {{a, Tensor::vector({1.0})}, {b, Tensor::vector({1.0, 2.0})}}, 0.1),
                  ShapeError);
  CHECK(store == before);
  CHECK(opt.steps() == 0);
  CHECK_THROWS_AS(OptimizerState::create(plain_momentum(1.0), store), ConfigError);
}

TEST_CASE("plain gradient descent on a convex quadratic never increases the loss") {
  ParameterStore store;
  const ParamId w = store.add("w", Tensor::vector({3.0, -4.0, 0.5}), ParamRole::kWeight);
  const double target[] = {1.0, 2.0, -1.0};
  OptimizerState opt = OptimizerState::create(plain_momentum(0.0), store);
  const auto loss = [&] {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += 0.5 * std::pow(store.value(w)[i] - target[i], 2);
    return s;
  };
  double previous = loss();
  for (int it = 0; it < 100; ++it) {
    const Tensor& v = store.value(w);
    opt.step(store, {{w, Tensor::vector({v[0] - target[0], v[1] - target[1], v[2] - target[2]})}},
             0.1);
    const double now = loss();
    CHECK(now <= previous);
    previous = now;
  }
  CHECK(previous < 1e-6);
}

TEST_CASE("learning-rate schedules") {
  const Schedule step = Schedule::step_decay(0.01, 0.2, 60);
  CHECK(lr_at(step, 59 * 10 + 9, 10) == 0.01);
  CHECK(lr_at(step, 60 * 10, 10) == doctest::Approx(0.002).epsilon(1e-15));
  CHECK(lr_at(step, 120 * 10, 10) == doctest::Approx(0.0004).epsilon(1e-15));

  const Schedule by_examples = Schedule::step_decay(1.0, 0.5, 100, Schedule::Unit::kExamples);
  CHECK(lr_at(by_examples, 3, 1, 32) == 1.0);
  CHECK(lr_at(by_examples, 4, 1, 32) == 0.5);

  const Schedule cosine = Schedule::half_cosine(0.4, 100);
  CHECK(lr_at(cosine, 0, 1) == 0.4);
  CHECK(lr_at(cosine, 50, 1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(lr_at(cosine, 25, 1) == doctest::Approx(0.2 * (1 + std::cos(std::numbers::pi / 4))));
  CHECK(lr_at(cosine, 100, 1) == 0.0);
  CHECK(lr_at(cosine, 150, 1) == 0.0);
  CHECK(lr_at(Schedule::constant(0.3), 1000, 7) == 0.3);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.weight_decay = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.label_smoothing = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("objective adds 0.5 * wd * sum of squared weights and gamma") {
  auto [train_set, holdout] = blobs(2.0, 1.0, 0.0, 3);
  MultiHeadNet net = MultiHeadNet::build(small_net(4, 3, 2), 1);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  TrainConfig plain = quick_config(1);
  plain.weight_decay = 0.0;
  TrainConfig decayed = plain;
  decayed.weight_decay = 0.01;
  const double a = training_objective(net, train_set, idx, plain, Mode::kEval);
  const double b = training_objective(net, train_set, idx, decayed, Mode::kEval);
  CHECK(b - a == doctest::Approx(0.5 * 0.01 * decayed_square_sum(net.params())).epsilon(1e-10));
}

TEST_CASE("weight decay shrinks the trained weights") {
  auto [train_set, holdout] = blobs(2.0, 1.0, 0.0, 4);
  TrainConfig plain = quick_config(5);
  plain.weight_decay = 0.0;
  TrainConfig decayed = plain;
  decayed.weight_decay = 0.05;
  const TrainResult a = train(MultiHeadNet::build(small_net(4, 3, 2), 2), train_set, holdout, plain);
  const TrainResult b = train(MultiHeadNet::build(small_net(4, 3, 2), 2), train_set, holdout, decayed);
  CHECK(decayed_square_sum(b.net.params()) < decayed_square_sum(a.net.params()));
}

TEST_CASE("separable blobs are learned to high holdout accuracy") {
  auto [train_set, holdout] = blobs(6.0, 0.5, 0.0, 5);
  TrainConfig c = quick_config(30);
  const TrainResult r = train(MultiHeadNet::build(small_net(4, 3, 2), 3), train_set, holdout, c);
  REQUIRE_FALSE(r.log.diverged);
  const auto metrics = evaluate(r.net, holdout, Discrepancy::kCrossEntropy);
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0].head == "head0");
  CHECK(metrics[2].head == "ensemble");
  CHECK(metrics[2].top1 > 0.95);
  CHECK(r.log.objective.size() == 30);
  CHECK(r.log.objective.back() < r.log.objective.front());
}

TEST_CASE("zero epochs leave an empty log and unchanged weights") {
  auto [train_set, holdout] = blobs(2.0, 1.0, 0.0, 6);
  const MultiHeadNet net = MultiHeadNet::build(small_net(4, 3, 1), 4);
  const TrainResult r = train(net, train_set, holdout, quick_config(0));
  CHECK(r.log.records.empty());
  CHECK(r.log.objective.empty());
  CHECK(r.net.params() == net.params());
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto [train_set, holdout] = blobs(1.0, 1.0, 0.2, 7);
  TrainConfig c = quick_config(3);
  c.optimizer.kind = OptimizerKind::kAdam;
  c.schedule = Schedule::half_cosine(0.01, 0);
  const TrainResult a = train(MultiHeadNet::build(small_net(4, 3, 2), 9), train_set, holdout, c);
  const TrainResult b = train(MultiHeadNet::build(small_net(4, 3, 2), 9), train_set, holdout, c);
  CHECK(a.net.params() == b.net.params());
  CHECK(a.log.objective == b.log.objective);
  c.seed = 1;
  const TrainResult d = train(MultiHeadNet::build(small_net(4, 3, 2), 9), train_set, holdout, c);
  CHECK_FALSE(d.net.params() == a.net.params());
}

TEST_CASE("a huge learning rate is reported as divergence") {
  auto [train_set, holdout] = blobs(2.0, 1.0, 0.0, 8);
  TrainConfig c = quick_config(20);
  c.loss = LossStructure::co_distillation(1.0, Discrepancy::kL2);
  c.schedule = Schedule::constant(1e12);
  const TrainResult r = train(MultiHeadNet::build(small_net(4, 3, 2), 1), train_set, holdout, c);
  CHECK(r.log.diverged);
  CHECK_FALSE(r.log.message.empty());
}
