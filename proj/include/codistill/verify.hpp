// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace codistill {

inline constexpr double kEquivalenceThreshold = 1e-9;
inline constexpr double kGradientTolerance = 1e-5;
inline constexpr double kIsolationThreshold = 1e-8;
inline constexpr double kSymmetryThreshold = 1e-12;

struct GradientCase {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t elements = 0;  // parameter elements compared, over all configurations
};

struct GradientSuite {
  std::vector<GradientCase> cases;
  std::size_t configurations = 0;

  double max_relative_error() const;
};

// Central-difference checks of every graph primitive and every layer, each
// repeated over `configurations` randomly drawn shapes and values.
GradientSuite gradient_check_suite(std::size_t configurations, std::uint64_t seed);

struct IsolationResult {
  // d L_aux,1 / d theta over branch-2-only parameters, by backprop.
  double analytic = 0.0;
  // Central differences of L_aux,1 with stop-gradient outputs held fixed.
  double numeric = 0.0;
  // Central differences of the same term built without the barrier; the
  // dependence the barrier removes.
  double numeric_without_barrier = 0.0;
};

// Two-branch toy network under the co-distillation loss.
IsolationResult stop_gradient_isolation(std::uint64_t seed);

// Largest spread of the ensembling loss over lambda in {-2, -1, 0, 0.5, 1}
// for a two-branch network whose branches hold identical parameters.
double lambda_symmetry(std::uint64_t seed);

struct VerifyLine {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct VerifyReport {
  std::vector<VerifyLine> lines;
  bool passed() const;
};

// Equivalence over `trials` random draws per branch count in {1, 2, 3, 5},
// the gradient suite over `trials` configurations capped at 100, stop-gradient
// isolation and lambda symmetry.
VerifyReport run_verify(std::size_t trials, std::uint64_t seed);

}  // namespace codistill
