// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codistill/config.hpp"
#include "codistill/tensor.hpp"
#include "codistill/training.hpp"

namespace codistill {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout:
//   "CDST" | u32 version | str config echo | u64 input_dim | u64 classes
//   | u64 step | u64 epoch | str rng state | u32 tensor count
//   | per tensor: str name, u32 rank, u64 dims[rank], f64 values
// where str is a u32 byte length followed by UTF-8 bytes. Model tensors
// come first in store order, then optimizer slots named "opt/...".
struct Checkpoint {
  std::string config;
  std::uint64_t input_dim = 0;
  std::uint64_t classes = 0;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize(const Checkpoint& checkpoint);
// Throws FormatError on bad magic, an unknown version or truncated data.
Checkpoint deserialize(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ExperimentConfig& config, const TrainState& state,
                           std::size_t input_dim, std::size_t classes);

struct RestoredRun {
  ExperimentConfig config;
  TrainState state;
};

// Rebuilds the network from the config echo and overwrites every tensor;
// a missing or unexpected tensor is a FormatError.
RestoredRun restore(const Checkpoint& checkpoint);

}  // namespace codistill
