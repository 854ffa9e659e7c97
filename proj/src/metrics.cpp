// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "codistill/error.hpp"

namespace codistill {
namespace {

bool higher_in_row(double score_a, std::size_t class_a, double score_b, std::size_t class_b) {
  if (score_a != score_b) return score_a > score_b;
  return class_a < class_b;
}

bool pooled_order(const ScoredPrediction& a, const ScoredPrediction& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.example != b.example) return a.example < b.example;
  return a.label < b.label;
}

std::vector<ScoredPrediction> cap_per_example(const std::vector<ScoredPrediction>& predictions,
                                              std::size_t cap) {
  if (cap < 1) throw ConfigError("prediction cap must be at least 1");
  std::map<std::size_t, std::vector<ScoredPrediction>> by_example;
  for (const auto& p : predictions) {
    if (!std::isfinite(p.score)) throw NumericError("non-finite prediction score");
    by_example[p.example].push_back(p);
  }
  std::vector<ScoredPrediction> kept;
  for (auto& [example, list] : by_example) {
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
      return higher_in_row(a.score, a.label, b.score, b.label);
    });
    if (list.size() > cap) list.resize(cap);
    kept.insert(kept.end(), list.begin(), list.end());
  }
  return kept;
}

// Average precision of a ranked list against `relevant` truth items.
template <typename IsHit>
double ranked_average_precision(const std::vector<ScoredPrediction>& ranked, std::size_t relevant,
                                IsHit is_hit) {
  double hits = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (is_hit(ranked[i])) {
      hits += 1.0;
      total += hits / static_cast<double>(i + 1);
    }
  }
  return total / static_cast<double>(relevant);
}

std::size_t check_scores(const Tensor& scores, std::size_t rows, std::size_t k) {
  if (scores.rank() != 2) throw ShapeError("top_k_accuracy: scores must be [batch, classes]");
  if (scores.dim(0) == 0 || rows == 0) throw ShapeError("top_k_accuracy: empty batch");
  if (scores.dim(0) != rows) throw ShapeError("top_k_accuracy: label count differs from rows");
  const std::size_t classes = scores.dim(1);
  if (k < 1 || k > classes) {
    throw ConfigError("top_k_accuracy: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(classes) + "]");
  }
  return classes;
}

bool in_top_k(const Tensor& scores, std::size_t row, std::size_t label, std::size_t k) {
  const std::size_t classes = scores.dim(1);
  if (label >= classes) throw ShapeError("top_k_accuracy: label out of range");
  const double s = scores.at(row, label);
  std::size_t rank = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (c != label && higher_in_row(scores.at(row, c), c, s, label)) ++rank;
  }
  return rank < k;
}

}  // namespace

double top_k_accuracy(const Tensor& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  check_scores(scores, labels.size(), k);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) correct += in_top_k(scores, r, labels[r], k);
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double top_k_accuracy(const Tensor& scores, const std::vector<std::vector<std::size_t>>& labels,
                      std::size_t k) {
  check_scores(scores, labels.size(), k);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    correct += std::any_of(labels[r].begin(), labels[r].end(),
                           [&](std::size_t label) { return in_top_k(scores, r, label, k); });
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double gap(const std::vector<ScoredPrediction>& predictions, const TruthSet& truth,
           std::size_t cap) {
  if (truth.empty()) throw ConfigError("gap: empty truth set");
  std::vector<ScoredPrediction> pooled = cap_per_example(predictions, cap);
  std::sort(pooled.begin(), pooled.end(), pooled_order);
  return ranked_average_precision(pooled, truth.size(), [&](const ScoredPrediction& p) {
    return truth.contains({p.example, p.label});
  });
}

double map_metric(const std::vector<ScoredPrediction>& predictions, const TruthSet& truth,
                  std::size_t cap) {
  std::map<std::size_t, std::size_t> truth_per_class;
  for (const auto& [example, label] : truth) ++truth_per_class[label];
  if (truth_per_class.empty()) throw ConfigError("map: no class has a truth pair");

  std::map<std::size_t, std::vector<ScoredPrediction>> by_class;
  for (const auto& p : cap_per_example(predictions, cap)) by_class[p.label].push_back(p);

  double total = 0.0;
  for (const auto& [label, relevant] : truth_per_class) {
    auto& ranked = by_class[label];
    std::sort(ranked.begin(), ranked.end(), pooled_order);
    total += ranked_average_precision(ranked, relevant, [&](const ScoredPrediction& p) {
      return truth.contains({p.example, p.label});
    });
  }
  return total / static_cast<double>(truth_per_class.size());
}

std::vector<ScoredPrediction> to_predictions(const Tensor& scores) {
  if (scores.rank() != 2) throw ShapeError("to_predictions: scores must be [batch, classes]");
  std::vector<ScoredPrediction> out;
  out.reserve(scores.size());
  for (std::size_t r = 0; r < scores.dim(0); ++r)
    for (std::size_t c = 0; c < scores.dim(1); ++c) out.push_back({r, c, scores.at(r, c)});
  return out;
}

RunAggregate mean_uncertainty(std::vector<double> runs) {
  if (runs.size() < 2) throw ConfigError("mean_uncertainty needs at least two runs");
  const double n = static_cast<double>(runs.size());
  double mean = 0.0;
  for (double x : runs) mean += x;
  mean /= n;
  double squares = 0.0;
  for (double x : runs) squares += (x - mean) * (x - mean);
  RunAggregate out;
  out.mean = mean;
  out.uncertainty = std::sqrt(squares / (n * (n - 1.0)));
  out.runs = std::move(runs);
  return out;
}

namespace {

struct Tally {
  std::size_t params = 0;
  FlopCount flops;
  std::size_t frames = 1;
  bool frame_level = false;

  void flop(std::string layer, std::string formula, std::size_t count) {
    if (frame_level) {
      count *= frames;
      formula = std::to_string(frames) + " frames x (" + formula + ")";
    }
    flops.total += count;
    flops.lines.push_back({std::move(layer), std::move(formula), count});
  }
};

std::string str(std::size_t v) { return std::to_string(v); }

std::size_t tally_stack(const std::vector<LayerSpec>& layers, std::size_t width,
                        const std::string& prefix, Tally& t) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string name = prefix + "/" + str(i);
    switch (l.kind) {
      case LayerKind::kDense: {
        const std::size_t in = width, out = l.width;
        if (l.batch_norm) {
          t.params += in * out + 2 * out;
          t.flop(name + "/dense", "2*" + str(in) + "*" + str(out), 2 * in * out);
          t.flop(name + "/bn", "2*" + str(out), 2 * out);
        } else {
          t.params += in * out + out;
          t.flop(name + "/dense", "2*" + str(in) + "*" + str(out) + "+" + str(out),
                 2 * in * out + out);
        }
        if (l.activation != Activation::kNone) {
          t.flop(name + "/" + to_string(l.activation), str(out), out);
        }
        width = out;
        break;
      }
      case LayerKind::kContextGate: {
        const std::size_t f = width;
        t.params += f * f + f;
        t.flop(name + "/gate", "2*" + str(f) + "*" + str(f) + "+3*" + str(f), 2 * f * f + 3 * f);
        break;
      }
      case LayerKind::kSwapPool: {
        const std::size_t f = width;
        t.frame_level = false;
        t.flop(name + "/swap", "4*" + str(t.frames) + "*" + str(f) + "+" + str(f),
               4 * t.frames * f + f);
        break;
      }
    }
  }
  return width;
}

Tally tally(const NetworkSpec& spec, std::size_t frames) {
  Tally t;
  if (spec.branches.empty()) return t;
  t.frames = frames;
  t.frame_level = spec.frame_input();
  std::size_t width = spec.input_dim;
  if (spec.input_batch_norm) {
    t.params += 2 * width;
    t.flop("base/input_bn", "2*" + str(width), 2 * width);
  }
  width = tally_stack(spec.base, width, "base", t);
  const bool base_frame_level = t.frame_level;
  const std::size_t c = spec.head.classes;
  for (std::size_t b = 0; b < spec.branch_count(); ++b) {
    t.frame_level = base_frame_level;
    const std::string prefix = "branch" + str(b);
    const std::size_t top = tally_stack(spec.branches[b], width, prefix, t);
    if (spec.head.kind == HeadKind::kSoftmax) {
      t.params += top * c + c;
      t.flop(prefix + "/head", "2*" + str(top) + "*" + str(c) + "+" + str(c), 2 * top * c + c);
      t.flop(prefix + "/softmax", str(c), c);
    } else {
      const std::size_t e = spec.head.experts;
      const std::size_t ce = c * e;
      t.params += 2 * (top * ce + ce);
      t.flop(prefix + "/moe", "2*(2*" + str(top) + "*" + str(ce) + "+" + str(ce) + ")+3*" +
                                  str(ce) + "+" + str(c) + "*" + str(e - 1),
             2 * (2 * top * ce + ce) + 3 * ce + c * (e - 1));
    }
  }
  const std::size_t n = spec.branch_count();
  if (n > 1) t.flop("ensemble/average", str(n - 1) + "*" + str(c) + "+" + str(c), n * c);
  return t;
}

}  // namespace

std::size_t count_params(const NetworkSpec& spec) { return tally(spec, 1).params; }

FlopCount count_flops(const NetworkSpec& spec, std::size_t frames) {
  if (frames < 1) throw ConfigError("count_flops: frame count must be at least 1");
  return tally(spec, frames).flops;
}

}  // namespace codistill
