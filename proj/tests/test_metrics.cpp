// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "codistill/error.hpp"
#include "codistill/metrics.hpp"
#include "doctest.h"

using namespace codistill;

namespace {

// Reference average precision by rank counting: no sorting, O(n^2).
bool row_before(const ScoredPrediction& a, const ScoredPrediction& b) {
  return a.score > b.score || (a.score == b.score && a.label < b.label);
}

bool pooled_before(const ScoredPrediction& a, const ScoredPrediction& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.example != b.example) return a.example < b.example;
  return a.label < b.label;
}

std::vector<ScoredPrediction> brute_cap(const std::vector<ScoredPrediction>& preds,
                                        std::size_t cap) {
  std::vector<ScoredPrediction> kept;
  for (const auto& p : preds) {
    std::size_t ahead = 0;
    for (const auto& q : preds) ahead += q.example == p.example && row_before(q, p);
    if (ahead < cap) kept.push_back(p);
  }
  return kept;
}

double brute_ap(const std::vector<ScoredPrediction>& list, const TruthSet& truth,
                std::size_t relevant) {
  double total = 0.0;
  for (const auto& h : list) {
    if (!truth.contains({h.example, h.label})) continue;
    std::size_t rank = 1, hits = 1;
    for (const auto& q : list) {
      if (!pooled_before(q, h)) continue;
      ++rank;
      hits += truth.contains({q.example, q.label});
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return total / static_cast<double>(relevant);
}

double brute_gap(const std::vector<ScoredPrediction>& preds, const TruthSet& truth,
                 std::size_t cap) {
  return brute_ap(brute_cap(preds, cap), truth, truth.size());
}

double brute_map(const std::vector<ScoredPrediction>& preds, const TruthSet& truth,
                 std::size_t cap, std::size_t classes) {
  const auto kept = brute_cap(preds, cap);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<ScoredPrediction> mine;
    for (const auto& p : kept)
      if (p.label == c) mine.push_back(p);
    std::size_t relevant = 0;
    for (const auto& [e, l] : truth) relevant += l == c;
    if (relevant == 0) continue;
    total += brute_ap(mine, truth, relevant);
    ++counted;
  }
  return total / static_cast<double>(counted);
}

}  // namespace

TEST_CASE("GAP hand value") {
  // Pooled order: hit, miss, hit -> (1/1 + 2/3) / 2.
  const std::vector<ScoredPrediction> preds{{0, 0, 0.9}, {0, 1, 0.8}, {1, 0, 0.7}};
  const TruthSet truth{{0, 0}, {1, 0}};
  CHECK(gap(preds, truth) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  // Cap 1 drops (0, 1); both hits lead the list.
  CHECK(gap(preds, truth, 1) == 1.0);
  // A truth pair that is never predicted still counts in the denominator.
  CHECK(gap(preds, TruthSet{{0, 0}, {1, 0}, {2, 3}}) == doctest::Approx(5.0 / 9.0).epsilon(1e-15));
  CHECK_THROWS_AS(gap(preds, TruthSet{}), ConfigError);
  CHECK_THROWS_AS(gap(preds, truth, 0), ConfigError);
}

TEST_CASE("GAP and mAP match a brute-force rank-counting oracle") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> count(1, 8);
  std::uniform_int_distribution<int> coarse(0, 9);
  std::bernoulli_distribution coin(0.3), keep(0.8);
  for (int instance = 0; instance < 200; ++instance) {
    const std::size_t examples = count(rng), classes = count(rng);
    const std::size_t cap = instance % 4 == 0 ? kDefaultCap : 1 + instance % 5;
    std::vector<ScoredPrediction> preds;
    TruthSet truth;
    for (std::size_t e = 0; e < examples; ++e)
      for (std::size_t c = 0; c < classes; ++c) {
        // Coarse scores force ties across examples and classes.
        if (keep(rng)) preds.push_back({e, c, coarse(rng) / 10.0});
        if (coin(rng)) truth.insert({e, c});
      }
    if (truth.empty()) truth.insert({0, 0});
    if (preds.empty()) preds.push_back({0, 0, 0.5});
    CHECK(std::abs(gap(preds, truth, cap) - brute_gap(preds, truth, cap)) <= 1e-12);
    CHECK(std::abs(map_metric(preds, truth, cap) - brute_map(preds, truth, cap, classes)) <= 1e-12);
  }
}

TEST_CASE("mAP averages per-class AP over classes with truth") {
  // Class 0: hit at rank 1 -> 1. Class 1: miss then hit -> 1/2.
  const std::vector<ScoredPrediction> preds{{0, 0, 0.9}, {0, 1, 0.8}, {1, 1, 0.4}, {1, 0, 0.1}};
  const TruthSet truth{{0, 0}, {1, 1}};
  CHECK(map_metric(preds, truth) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("top-k accuracy with ties ranking the lower class first") {
  const Tensor scores = Tensor::matrix(3, 3, {0.5, 0.3, 0.2, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8});
  CHECK(top_k_accuracy(scores, std::vector<std::size_t>{0, 1, 2}, 1) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(top_k_accuracy(scores, std::vector<std::size_t>{0, 1, 2}, 2) == 1.0);
  CHECK(top_k_accuracy(scores, std::vector<std::vector<std::size_t>>{{1, 2}, {0}, {0, 1}}, 1) ==
        doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(top_k_accuracy(scores, std::vector<std::size_t>{0, 1, 2}, 4), ConfigError);
  CHECK_THROWS_AS(top_k_accuracy(scores, std::vector<std::size_t>{0, 1}, 1), ShapeError);
}

TEST_CASE("mean and sample-mean uncertainty") {
  const RunAggregate a = mean_uncertainty({1, 2, 3});
  CHECK(a.mean == 2.0);
  CHECK(std::abs(a.uncertainty - 0.577350) <= 1e-6);
  // sqrt(sum (x - mean)^2 / (N (N - 1))): N = 4, deviations -3, -1, 1, 3.
  CHECK(mean_uncertainty({1, 3, 5, 7}).uncertainty == doctest::Approx(std::sqrt(20.0 / 12.0)));
  CHECK(mean_uncertainty({4, 4}).uncertainty == 0.0);
  CHECK_THROWS_AS(mean_uncertainty({1}), ConfigError);
}

TEST_CASE("parameter and FLOP counts of a plain softmax network") {
  const NetworkSpec spec =
      single_network(10, {LayerSpec::dense(32, Activation::kRelu)}, {HeadKind::kSoftmax, 5, 1});
  // 10*32 + 32 + 32*5 + 5
  CHECK(count_params(spec) == 517);
  // dense 2*10*32 + 32, relu 32, head 2*32*5 + 5, softmax 5
  CHECK(count_flops(spec).total == 672 + 32 + 325 + 5);
}

TEST_CASE("counts with batch norm, context gate, MoE and ensemble averaging") {
  NetworkSpec single = single_network(
      6, {LayerSpec::dense(8, Activation::kRelu6, true), LayerSpec::context_gate(),
          LayerSpec::dense(9, Activation::kNone)},
      {HeadKind::kMoE, 4, 3}, true);
  const NetworkSpec forked = fork_network(single, 2, 1.5, 2);
  // Input bn 2*6; dense+bn 6*8 + 2*8; gate 8*8 + 8.
  const std::size_t base_params = 12 + 64 + 72;
  // Branch: dense 8->6 with bias, moe 2 * (6*12 + 12).
  const std::size_t branch_params = 8 * 6 + 6 + 2 * (6 * 12 + 12);
  CHECK(count_params(forked) == base_params + 2 * branch_params);

  const std::size_t base_flops = 12 + (2 * 6 * 8 + 2 * 8 + 8) + (2 * 64 + 3 * 8);
  const std::size_t moe = 2 * (2 * 6 * 12 + 12) + 3 * 12 + 4 * 2;
  const std::size_t branch_flops = (2 * 8 * 6 + 6) + moe;
  CHECK(count_flops(forked).total == base_flops + 2 * branch_flops + 2 * 4);
}

TEST_CASE("frame networks count pre-pool layers once per frame") {
  const NetworkSpec spec = single_network(
      4, {LayerSpec::dense(3, Activation::kRelu), LayerSpec::swap_pool()},
      {HeadKind::kSoftmax, 2, 1});
  const std::size_t frames = 7;
  const std::size_t per_frame = (2 * 4 * 3 + 3) + 3;
  const std::size_t pool = 4 * frames * 3 + 3;
  const std::size_t head = (2 * 3 * 2 + 2) + 2;
  CHECK(count_flops(spec, frames).total == frames * per_frame + pool + head);
  CHECK(count_params(spec) == 4 * 3 + 3 + 3 * 2 + 2);
  CHECK_THROWS_AS(count_flops(spec, 0), ConfigError);
}
