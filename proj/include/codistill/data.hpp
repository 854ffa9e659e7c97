// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "codistill/ensemble.hpp"
#include "codistill/tensor.hpp"

namespace codistill {

enum class TaskKind { kSingleLabel, kMultiLabel };

struct Example {
  Tensor features;                  // [dim], or [frames, dim] for frame data
  std::vector<std::size_t> labels;  // sorted; exactly one for single-label

  bool operator==(const Example&) const = default;
};

struct Dataset {
  TaskKind task = TaskKind::kSingleLabel;
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  bool frames = false;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  // Labels in range, non-empty, consistent feature shapes.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct GaussianMixtureParams {
  std::size_t classes = 4;
  std::size_t dim = 8;
  std::size_t per_class = 50;
  double spread = 1.0;       // stddev of cluster centers
  double noise = 1.0;        // stddev of points around their center
  double label_noise = 0.0;  // fraction of labels reassigned to another class
  std::uint64_t seed = 0;
};

// K Gaussian clusters. Exactly floor(label_noise * total) labels are moved
// to a different, uniformly chosen class.
Dataset gen_gaussian_mixture(const GaussianMixtureParams& params);

struct FrameSequenceParams {
  std::size_t classes = 4;
  std::size_t dim = 8;
  std::size_t frames_min = 2;
  std::size_t frames_max = 6;
  std::size_t per_class = 20;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

// Multi-label frame sequences. Each example has 1-3 active classes; every
// frame is a positively weighted mix of the active class prototypes plus
// Gaussian noise.
Dataset gen_frame_sequences(const FrameSequenceParams& params);

// Reads a CSV with a header row, a `label` column holding a class id or
// `|`-separated ids, and numeric feature columns. Any `|` makes the task
// multi-label. Throws FormatError with the offending line number.
Dataset load_table(const std::filesystem::path& path);
// Writes the same schema; frame datasets are not representable.
void save_table(const Dataset& data, const std::filesystem::path& path);

struct SplitSpec {
  double holdout_fraction = 0.5;
  std::uint64_t seed = 0;
};

// Seeded shuffle, then the first round(fraction * n) examples form the
// holdout. Both parts must be non-empty.
std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec);

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

// One-hot (single-label) or multi-hot rows [indices, classes].
Tensor label_matrix(const Dataset& data, std::span<const std::size_t> indices);

std::vector<std::size_t> all_indices(const Dataset& data);

}  // namespace codistill
