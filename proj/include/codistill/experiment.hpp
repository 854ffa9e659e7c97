// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "codistill/checkpoint.hpp"
#include "codistill/config.hpp"
#include "codistill/data.hpp"
#include "codistill/metrics.hpp"
#include "codistill/training.hpp"

namespace codistill {

inline constexpr const char* kMetricsHeader = "epoch,head,split,loss,top1,top5,gap,map";
inline constexpr const char* kEvalHeader = "head,loss,top1,top5,gap,map,params,flops";
inline constexpr const char* kSweepHeader = "axis_value,seed,loss,top1,top5,gap,map,diverged";
inline constexpr const char* kSweepSummaryHeader =
    "axis_value,runs,loss_mean,loss_uncertainty,top1_mean,top1_uncertainty,top5_mean,"
    "top5_uncertainty,gap_mean,gap_uncertainty,map_mean,map_uncertainty";

struct PreparedData {
  Dataset train;
  Dataset holdout;
};

// Generates or loads the configured data and applies the seeded split.
PreparedData prepare_data(const DataConfig& data);

struct RunOutcome {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  TrainLog log;
  std::vector<HeadMetrics> holdout;  // final epoch: one row per head, then the ensemble
};

// One seeded run. Writes <dir>/checkpoint.bin, metrics.csv and config.ini,
// plus checkpoint-epoch-E.bin every `checkpoint_every` epochs.
RunOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed, const PreparedData& data,
                    const std::filesystem::path& dir);

// Every seed of config.run.seeds into <run.out>/seed-<N>.
std::vector<RunOutcome> cmd_train(const ExperimentConfig& config);

// Continues a run from a checkpoint to the configured epoch count, writing
// the same files into `dir`. metrics.csv holds the epochs run after resuming.
RunOutcome resume_train(const std::filesystem::path& checkpoint, const std::filesystem::path& dir);

// Metrics of a checkpoint on the holdout split of its own data, or on every
// row of `data_csv` when given.
MetricReport cmd_eval(const std::filesystem::path& checkpoint,
                      const std::optional<std::filesystem::path>& data_csv = std::nullopt);

enum class SweepAxis { kLambda, kMu };
SweepAxis parse_axis(const std::string& text);

struct SweepRow {
  double axis_value = 0.0;
  std::uint64_t seed = 0;
  HeadMetrics ensemble;  // final holdout metrics of the ensemble prediction
  bool diverged = false;
};

struct SweepSummary {
  double axis_value = 0.0;
  std::size_t runs = 0;  // non-diverged runs
  // loss, top1, top5, gap, map; uncertainty is NaN with fewer than two runs.
  std::vector<RunAggregate> metrics;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepSummary> summary;
};

// Trains every value x seed into <run.out>/<axis>-<value>/seed-<N>, running
// up to `threads` jobs at once, then writes sweep.csv and sweep_summary.csv
// into run.out. The axis must match the configured loss structure.
SweepResult cmd_sweep(const ExperimentConfig& config, SweepAxis axis,
                      const std::vector<double>& values, std::size_t threads);

// Parallel job cap from CODISTILL_THREADS, else the hardware thread count.
std::size_t sweep_threads();

// Writes the configured dataset as <dir>/data.csv.
std::filesystem::path cmd_gen_data(const DataConfig& data, const std::filesystem::path& dir);

void write_metrics_csv(const TrainLog& log, const std::filesystem::path& path);
void write_eval_csv(const MetricReport& report, const std::filesystem::path& path);
std::string eval_csv(const MetricReport& report);

}  // namespace codistill
