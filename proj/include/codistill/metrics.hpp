// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "codistill/ensemble.hpp"
#include "codistill/tensor.hpp"

namespace codistill {

struct ScoredPrediction {
  std::size_t example = 0;
  std::size_t label = 0;
  double score = 0.0;
};

// (example, class) pairs that are true.
using TruthSet = std::set<std::pair<std::size_t, std::size_t>>;

inline constexpr std::size_t kDefaultCap = 20;

// Fraction of rows whose true class is among the k highest scores. Equal
// scores rank the lower class id first. With several true classes per row,
// a row counts when any of them is in the top k.
double top_k_accuracy(const Tensor& scores, const std::vector<std::size_t>& labels, std::size_t k);
double top_k_accuracy(const Tensor& scores, const std::vector<std::vector<std::size_t>>& labels,
                      std::size_t k);

// Global average precision. Keeps each example's `cap` best predictions,
// pools them, sorts by score (ties: example id, then class id) and averages
// precision over hits. The recall denominator counts every truth pair,
// including pairs the cap removed.
double gap(const std::vector<ScoredPrediction>& predictions, const TruthSet& truth,
           std::size_t cap = kDefaultCap);

// Mean over classes with at least one truth pair of the per-class average
// precision, after the same per-example cap.
double map_metric(const std::vector<ScoredPrediction>& predictions, const TruthSet& truth,
                  std::size_t cap = kDefaultCap);

// Every cell of a score matrix as a prediction.
std::vector<ScoredPrediction> to_predictions(const Tensor& scores);

struct RunAggregate {
  std::vector<double> runs;
  double mean = 0.0;
  double uncertainty = 0.0;
};

// Sample mean and sqrt(sum (x_i - mean)^2 / (N (N - 1))). Needs N >= 2.
RunAggregate mean_uncertainty(std::vector<double> runs);

// Trainable scalars: weights, biases, gamma, beta. Running statistics are
// excluded.
std::size_t count_params(const NetworkSpec& spec);

struct FlopLine {
  std::string layer;
  std::string formula;
  std::size_t flops = 0;
};

struct FlopCount {
  std::size_t total = 0;
  std::vector<FlopLine> lines;
};

// Inference FLOPs per example with multiplies and adds counted separately
// and batch norm folded:
//   dense in->out           2*in*out, + out with bias
//   folded batch norm f     2*f
//   activation / softmax    1 per element
//   context gate f          2*f*f + f (logits) + f (sigmoid) + f (product)
//   swap pool n frames, f   4*n*f + f
//   moe in->c classes, e    2 * (2*in*c*e + c*e) + 3*c*e + c*(e-1)
//   ensemble average        (N-1)*c + c, only when N > 1
// Layers ahead of a swap pool run once per frame; `frames` is the frame
// count assumed for frame-input networks. An empty network counts 0.
FlopCount count_flops(const NetworkSpec& spec, std::size_t frames = 1);

// Headline numbers for one head or the ensemble on one split.
struct HeadMetrics {
  std::string head;  // "head0", "head1", ..., "ensemble"
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double gap = 0.0;
  double map = 0.0;
};

struct MetricReport {
  std::vector<HeadMetrics> heads;
  std::size_t params = 0;
  std::size_t flops = 0;
};

}  // namespace codistill
