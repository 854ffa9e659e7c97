// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "codistill/ensemble.hpp"
#include "codistill/experiment.hpp"
#include "codistill/metrics.hpp"
#include "codistill/verify.hpp"

using namespace codistill;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20260101;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* format, double a) {
  char buffer[128];
  std::snprintf(buffer, sizeof buffer, format, a);
  return buffer;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path work_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "codistill_acceptance" / name;
  fs::remove_all(dir);
  return dir;
}

// 1. Ensembling(lambda) and CoDistillation(1 - lambda) agree under L2.
Outcome equivalence() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::size_t n : {1, 2, 3, 5}) worst = std::max(worst, verify_equivalence(n, 1000, kSeed + n));
  const double t = seconds_since(start);
  return {worst < 1e-9 && t < 5.0,
          fmt("max |diff| %.3g over 1000 trials per N in {1,2,3,5}", worst) + fmt(", %.2f s", t)};
}

// 2. Finite-difference checks of every primitive and layer.
Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  const GradientSuite suite = gradient_check_suite(100, kSeed);
  const double t = seconds_since(start);
  const double worst = suite.max_relative_error();
  std::string worst_case;
  for (const auto& c : suite.cases)
    if (c.max_relative_error == worst) worst_case = c.name;
  return {worst < kGradientTolerance && t < 60.0,
          std::to_string(suite.cases.size()) + " cases x 100 configurations" +
              fmt(", max relative error %.3g", worst) + " (" + worst_case + ")" +
              fmt(", %.2f s", t)};
}

// 3. The aux term of branch 1 does not depend on branch-2-only parameters.
Outcome isolation() {
  const auto start = std::chrono::steady_clock::now();
  const IsolationResult r = stop_gradient_isolation(kSeed);
  const double t = seconds_since(start);
  return {r.numeric < kIsolationThreshold && r.analytic < kIsolationThreshold && t < 10.0,
          fmt("finite-difference sensitivity %.3g", r.numeric) +
              fmt(", backprop %.3g", r.analytic) +
              fmt(", without the barrier %.3g", r.numeric_without_barrier) + fmt(", %.2f s", t)};
}

// 4. Identical branches make the ensembling loss independent of lambda.
Outcome symmetry() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) worst = std::max(worst, lambda_symmetry(kSeed + s));
  return {worst < kSymmetryThreshold,
          fmt("max spread over lambda in {-2,-1,0,0.5,1}: %.3g", worst) + " (5 networks)"};
}

// Reference average precision by rank counting.
bool row_before(const ScoredPrediction& a, const ScoredPrediction& b) {
  return a.score > b.score || (a.score == b.score && a.label < b.label);
}

bool pooled_before(const ScoredPrediction& a, const ScoredPrediction& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.example != b.example) return a.example < b.example;
  return a.label < b.label;
}

std::vector<ScoredPrediction> reference_cap(const std::vector<ScoredPrediction>& preds,
                                            std::size_t cap) {
  std::vector<ScoredPrediction> kept;
  for (const auto& p : preds) {
    std::size_t ahead = 0;
    for (const auto& q : preds) ahead += q.example == p.example && row_before(q, p);
    if (ahead < cap) kept.push_back(p);
  }
  return kept;
}

double reference_ap(const std::vector<ScoredPrediction>& list, const TruthSet& truth,
                    const std::function<bool(std::size_t)>& counted, std::size_t relevant) {
  double total = 0.0;
  for (const auto& h : list) {
    if (!counted(h.label) || !truth.contains({h.example, h.label})) continue;
    std::size_t rank = 1, hits = 1;
    for (const auto& q : list) {
      if (!counted(q.label) || !pooled_before(q, h)) continue;
      ++rank;
      hits += truth.contains({q.example, q.label});
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return total / static_cast<double>(relevant);
}

// 5. GAP and mAP against the reference; the uncertainty formula.
Outcome metric_oracles() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<std::size_t> count(1, 10);
  std::uniform_int_distribution<int> coarse(0, 20);
  std::bernoulli_distribution positive(0.3);
  double worst = 0.0;
  for (int instance = 0; instance < 200; ++instance) {
    const std::size_t examples = count(rng), classes = count(rng);
    const std::size_t cap = instance % 2 == 0 ? kDefaultCap : 1 + instance % 7;
    std::vector<ScoredPrediction> preds;
    TruthSet truth;
    for (std::size_t e = 0; e < examples; ++e)
      for (std::size_t c = 0; c < classes; ++c) {
        preds.push_back({e, c, coarse(rng) / 20.0});
        if (positive(rng)) truth.insert({e, c});
      }
    if (truth.empty()) truth.insert({0, 0});
    const auto kept = reference_cap(preds, cap);
    const double ref_gap = reference_ap(kept, truth, [](std::size_t) { return true; }, truth.size());
    double ref_map = 0.0;
    std::size_t with_truth = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      std::size_t relevant = 0;
      for (const auto& [e, l] : truth) relevant += l == c;
      if (relevant == 0) continue;
      ref_map += reference_ap(kept, truth, [c](std::size_t l) { return l == c; }, relevant);
      ++with_truth;
    }
    ref_map /= static_cast<double>(with_truth);
    worst = std::max(worst, std::abs(gap(preds, truth, cap) - ref_gap));
    worst = std::max(worst, std::abs(map_metric(preds, truth, cap) - ref_map));
  }
  const double u = mean_uncertainty({1, 2, 3}).uncertainty;
  return {worst <= 1e-12 && std::abs(u - 0.577350) <= 1e-6,
          fmt("max |gap/map - reference| %.3g over 200 instances", worst) +
              fmt(", uncertainty({1,2,3}) = %.6f", u)};
}

// Desk-scale setup shared by criteria 6 to 8: five overlapping Gaussian
// classes, 20% of labels reassigned, 120 training examples. Regularizers are
// off so that the larger networks overfit.
const char* kDeskConfig = R"([data]
source = gaussian
classes = 5
dim = 10
per_class = 120
spread = 0.8
noise = 1
label_noise = 0.2
holdout = 0.8
seed = 11

[model]
layers = dense:32:relu,dense:128:relu,dense:128:relu
fork = 1
shrink = 1.5
branches = 2

[loss]
structure = codistillation
mu = 1

[training]
epochs = 80
batch_size = 16
lr = 0.05
weight_decay = 0
label_smoothing = 0

[run]
seeds = 0,1,2,3,4,5,6,7
)";

const std::vector<double> kMuGrid{0.0, 0.5, 1.0, 2.0, 3.0, 5.0};

std::string mean_text(const RunAggregate& a) {
  return fmt("%.4f", a.mean) + fmt(" +- %.4f", a.uncertainty);
}

// 6. Co-distillation beats the size-matched single network and mu = 0.
Outcome directional() {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig config = parse_config(kDeskConfig);
  const fs::path out = work_dir("directional");

  // The unforked network the branches were cut from, trained alone.
  ExperimentConfig baseline = config;
  baseline.model.fork = 0;
  baseline.model.branches = 1;
  baseline.training.loss = LossStructure::ensembling(0.0);
  baseline.run.out = (out / "baseline").string();
  std::vector<double> baseline_top1;
  for (const RunOutcome& r : cmd_train(baseline)) baseline_top1.push_back(r.holdout.back().top1);
  const RunAggregate base = mean_uncertainty(baseline_top1);

  config.run.out = (out / "sweep").string();
  const SweepResult sweep = cmd_sweep(config, SweepAxis::kMu, kMuGrid, sweep_threads());
  const RunAggregate* at_zero = nullptr;
  const RunAggregate* best = nullptr;
  double best_mu = 0.0;
  std::string table;
  for (const SweepSummary& s : sweep.summary) {
    if (s.runs != config.run.seeds.size()) {
      return {false, fmt("mu=%g had diverged runs", s.axis_value)};
    }
    const RunAggregate& top1 = s.metrics[1];
    table += fmt(" mu=%g ", s.axis_value) + mean_text(top1) + ";";
    if (s.axis_value == 0.0) {
      at_zero = &top1;
    } else if (best == nullptr || top1.mean > best->mean) {
      best = &top1;
      best_mu = s.axis_value;
    }
  }
  const double t = seconds_since(start);
  const std::size_t forked = count_params(network_spec(config.model, 10, 5));
  const std::size_t single = count_params(network_spec(baseline.model, 10, 5));
  const bool a = best->mean > base.mean;
  const bool b = best->mean >= at_zero->mean;
  return {a && b && t < 900.0,
          std::to_string(config.run.seeds.size()) + " seeds, holdout top-1: baseline (" +
              std::to_string(single) + " params) " + mean_text(base) + "; forked (" +
              std::to_string(forked) + " params)" + table + fmt(" best mu=%g", best_mu) +
              "; (a) " + (a ? "holds" : "fails") + ", (b) " + (b ? "holds" : "fails") +
              fmt(", %.1f s", t)};
}

// 7. Closed-form sizes of the desk-scale model.
Outcome size_accounting() {
  const ExperimentConfig config = parse_config(kDeskConfig);
  const std::size_t d = 10, k = 5, n = 2;
  const std::size_t w0 = 32, w1 = 128, w2 = 128;
  // Upper widths shrink by 1.5: 128 / 1.5 = 85.33 rounds to 85.
  const std::size_t u1 = 85, u2 = 85;

  const std::size_t base_params = d * w0 + w0;
  const std::size_t branch_params = (w0 * u1 + u1) + (u1 * u2 + u2) + (u2 * k + k);
  const std::size_t upper_params = (w0 * w1 + w1) + (w1 * w2 + w2) + (w2 * k + k);
  const std::size_t base_flops = (2 * d * w0 + w0) + w0;
  const std::size_t branch_flops = (2 * w0 * u1 + u1) + u1 + (2 * u1 * u2 + u2) + u2 +
                                   (2 * u2 * k + k) + k;
  const std::size_t upper_flops = (2 * w0 * w1 + w1) + w1 + (2 * w1 * w2 + w2) + w2 +
                                  (2 * w2 * k + k) + k;
  const std::size_t average_flops = n * k;

  const NetworkSpec forked = network_spec(config.model, d, k);
  ModelConfig unforked_model = config.model;
  unforked_model.fork = 0;
  unforked_model.branches = 1;
  const NetworkSpec unforked = network_spec(unforked_model, d, k);

  const std::size_t params = count_params(forked);
  const std::size_t flops = count_flops(forked).total;
  const bool exact = params == base_params + n * branch_params && params == 21442 &&
                     flops == base_flops + n * branch_flops + average_flops && flops == 42894 &&
                     count_params(unforked) == base_params + upper_params &&
                     count_flops(unforked).total == base_flops + upper_flops;
  const bool smaller = n * branch_params < upper_params && n * branch_flops < upper_flops;
  return {exact && smaller,
          "forked params " + std::to_string(params) + ", flops " + std::to_string(flops) +
              "; branch-exclusive params " + std::to_string(n * branch_params) + " < upper stack " +
              std::to_string(upper_params) + ", flops " + std::to_string(n * branch_flops) +
              " < " + std::to_string(upper_flops)};
}

// 8. Bitwise-reproducible training and resume.
Outcome determinism() {
  ExperimentConfig config = parse_config(kDeskConfig);
  config.training.epochs = 6;
  config.training.checkpoint_every = 3;
  config.training.optimizer.kind = OptimizerKind::kAdam;
  config.training.schedule = Schedule::half_cosine(0.005, 0);
  config.training.label_smoothing = 0.1;
  config.training.weight_decay = 1e-4;
  config.model.layers[1].batch_norm = true;
  config.run.seeds = {42};
  const fs::path out = work_dir("determinism");
  config.run.out = out.string();

  cmd_train(config);
  const std::string first = read_bytes(out / "seed-42" / "checkpoint.bin");
  fs::remove_all(out);
  cmd_train(config);
  const std::string second = read_bytes(out / "seed-42" / "checkpoint.bin");
  resume_train(out / "seed-42" / "checkpoint-epoch-3.bin", out / "resumed");
  const std::string resumed = read_bytes(out / "resumed" / "checkpoint.bin");
  const bool repeat = !first.empty() && first == second;
  const bool resume = resumed == first;
  return {repeat && resume, std::string("repeat run ") + (repeat ? "identical" : "differs") +
                                ", resume from epoch 3 " + (resume ? "identical" : "differs") +
                                " (" + std::to_string(first.size()) + " bytes)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"1 equivalence identity", equivalence},
      {"2 gradient correctness", gradients},
      {"3 stop-gradient isolation", isolation},
      {"4 lambda symmetry", symmetry},
      {"5 metric oracles", metric_oracles},
      {"6 directional co-distillation", directional},
      {"7 size accounting", size_accounting},
      {"8 determinism", determinism},
  };
  bool all = true;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.passed;
    std::printf("%s  %s: %s\n", o.passed ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
