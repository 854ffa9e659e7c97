// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "codistill/config.hpp"
#include "codistill/error.hpp"
#include "doctest.h"

using namespace codistill;

namespace {

const char* kFull = R"([data]
source = gaussian
classes = 5
dim = 10
per_class = 30
spread = 0.8
label_noise = 0.2
holdout = 0.4
seed = 11

[model]
layers = dense:32:relu,dense:24:sigmoid:bn,gate,dense:16:relu6
input_batch_norm = true
fork = 2
shrink = 1.5
branches = 3
head = moe
experts = 4

[loss]
structure = ensembling
lambda = -0.5
discrepancy = l2

[training]
epochs = 7
batch_size = 16
label_smoothing = 0
weight_decay = 0.001
optimizer = adam
beta1 = 0.8
schedule = step
lr = 0.05
decay_factor = 0.5
decay_interval = 100
decay_unit = examples
checkpoint_every = 2

[run]
seeds = 3,1,4
out = somewhere
)";

std::string message_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

const std::string kMinimal = "[loss]\nstructure = codistillation\nmu = 1\n";

}  // namespace

TEST_CASE("full config parses into the expected fields") {
  const ExperimentConfig c = parse_config(kFull);
  CHECK(c.data.classes == 5);
  CHECK(c.data.label_noise == 0.2);
  CHECK(c.model.layers.size() == 4);
  CHECK(c.model.layers[1] == LayerSpec::dense(24, Activation::kSigmoid, true));
  CHECK(c.model.layers[2].kind == LayerKind::kContextGate);
  CHECK(c.model.head == HeadKind::kMoE);
  CHECK(c.training.loss == LossStructure::ensembling(-0.5, Discrepancy::kL2));
  CHECK(c.training.optimizer.kind == OptimizerKind::kAdam);
  CHECK(c.training.optimizer.beta1 == 0.8);
  CHECK(c.training.schedule.kind == Schedule::Kind::kStepDecay);
  CHECK(c.training.schedule.unit == Schedule::Unit::kExamples);
  CHECK(c.run.seeds == std::vector<std::uint64_t>{3, 1, 4});
  CHECK(c.run.out == "somewhere");
}

TEST_CASE("defaults of a minimal config") {
  const ExperimentConfig c = parse_config(kMinimal);
  CHECK(c.training.epochs == 10);
  CHECK(c.training.batch_size == 32);
  CHECK(c.training.label_smoothing == 0.1);
  CHECK(c.training.weight_decay == 1e-4);
  CHECK(c.training.optimizer.kind == OptimizerKind::kMomentum);
  CHECK(c.training.optimizer.momentum == 0.9);
  CHECK(c.training.loss.discrepancy == Discrepancy::kCrossEntropy);
  CHECK(c.model.shrink == 1.5);
  CHECK(c.run.seeds == std::vector<std::uint64_t>{0});
}

TEST_CASE("echo round-trips to an equal config") {
  for (const std::string& text : {std::string(kFull), kMinimal}) {
    const ExperimentConfig c = parse_config(text);
    const std::string echo = echo_config(c);
    CHECK(parse_config(echo) == c);
    CHECK(echo_config(parse_config(echo)) == echo);
  }
}

TEST_CASE("errors name the offending field") {
  CHECK(starts_with(message_of(kMinimal + "[training]\nlr = fast\n"), "training.lr:"));
  CHECK(starts_with(message_of(kMinimal + "[training]\nlr = -1\n"), "training.lr:"));
  CHECK(starts_with(message_of(kMinimal + "[training]\nbatch_size = 1\n"), "training.batch_size:"));
  CHECK(starts_with(message_of(kMinimal + "[training]\nlearning_rate = 1\n"),
                    "training.learning_rate:"));
  CHECK(starts_with(message_of(kMinimal + "[optim]\nlr = 1\n"), "optim:"));
  CHECK(starts_with(message_of(kMinimal + "[model]\nhead = tree\n"), "model.head:"));
  CHECK(starts_with(message_of(kMinimal + "[model]\nlayers = dense:0\n"), "model.layers:"));
  CHECK(starts_with(message_of(kMinimal + "[model]\nbranches = 2\n"), "model.fork:"));
  CHECK(starts_with(message_of(kMinimal + "[data]\nholdout = 1\n"), "data.holdout:"));
  CHECK(starts_with(message_of(kMinimal + "[data]\nsource = csv\n"), "data.path:"));
  CHECK(starts_with(message_of(kMinimal + "[run]\nseeds = 1,x\n"), "run.seeds:"));
}

TEST_CASE("the loss weight key must match the structure") {
  CHECK(starts_with(message_of("[loss]\nstructure = ensembling\nmu = 1\n"), "loss.mu:"));
  CHECK(starts_with(message_of("[loss]\nstructure = codistillation\nlambda = 0.5\n"),
                    "loss.lambda:"));
  CHECK(starts_with(message_of("[loss]\nstructure = ensembling\n"), "loss.lambda:"));
  CHECK(starts_with(message_of("[loss]\nmu = 1\n"), "loss.structure:"));
  CHECK(starts_with(message_of("[loss]\nstructure = bagging\nmu = 1\n"), "loss.structure:"));
}

TEST_CASE("layer list syntax") {
  const auto layers = parse_layers("dense:8, dense:4:none:bn ,swap,gate");
  REQUIRE(layers.size() == 4);
  CHECK(layers[0] == LayerSpec::dense(8));
  CHECK(layers[1] == LayerSpec::dense(4, Activation::kNone, true));
  CHECK(layers[2].kind == LayerKind::kSwapPool);
  CHECK(parse_layers(format_layers(layers)) == layers);
  CHECK_THROWS_AS(parse_layers("dense"), ConfigError);
  CHECK_THROWS_AS(parse_layers("dense:4:tanh"), ConfigError);
  CHECK_THROWS_AS(parse_layers("conv:3"), ConfigError);
}

TEST_CASE("network spec from a model section") {
  const ExperimentConfig c = parse_config(kFull);
  const NetworkSpec spec = network_spec(c.model, 10, 5);
  CHECK(spec.input_batch_norm);
  CHECK(spec.fork_point() == 2);
  CHECK(spec.branch_count() == 3);
  CHECK(spec.branches[0].size() == 2);
  CHECK(spec.branches[0][1].width == 11);
  CHECK(spec.head == HeadSpec{HeadKind::kMoE, 5, 4});
}
