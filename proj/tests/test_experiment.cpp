// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "codistill/error.hpp"
#include "codistill/experiment.hpp"
#include "doctest.h"

using namespace codistill;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "codistill_test_experiment" / name;
  fs::remove_all(dir);
  return dir;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string first_line(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

ExperimentConfig experiment(const fs::path& out) {
  ExperimentConfig c = parse_config(R"([data]
classes = 3
dim = 4
per_class = 15
label_noise = 0.1
[model]
layers = dense:8,dense:6
fork = 1
branches = 2
[loss]
structure = codistillation
mu = 1
[training]
epochs = 4
batch_size = 8
checkpoint_every = 2
)");
  c.run.out = out.string();
  return c;
}

}  // namespace

TEST_CASE("train writes one directory per seed with config, metrics and checkpoints") {
  const fs::path out = fresh_dir("train");
  ExperimentConfig c = experiment(out);
  c.run.seeds = {5, 6};
  const auto runs = cmd_train(c);
  REQUIRE(runs.size() == 2);
  for (std::uint64_t seed : {5, 6}) {
    const fs::path dir = out / ("seed-" + std::to_string(seed));
    CHECK(fs::exists(dir / "checkpoint.bin"));
    CHECK(fs::exists(dir / "checkpoint-epoch-2.bin"));
    CHECK_FALSE(fs::exists(dir / "checkpoint-epoch-4.bin"));
    CHECK(first_line(dir / "metrics.csv") == kMetricsHeader);
    // 4 epochs x 2 splits x (2 heads + ensemble), plus the header.
    CHECK(line_count(dir / "metrics.csv") == 1 + 4 * 2 * 3);
    const ExperimentConfig echoed = load_config(dir / "config.ini");
    CHECK(echoed.run.seeds == std::vector<std::uint64_t>{seed});
  }
  CHECK(runs[0].holdout.size() == 3);
  CHECK(runs[0].holdout.back().head == "ensemble");
}

TEST_CASE("resume from an epoch checkpoint reproduces the uninterrupted run") {
  const fs::path out = fresh_dir("resume");
  ExperimentConfig c = experiment(out);
  c.run.seeds = {2};
  cmd_train(c);
  const fs::path full = out / "seed-2";
  const RunOutcome resumed = resume_train(full / "checkpoint-epoch-2.bin", out / "resumed");
  CHECK(read_text(out / "resumed" / "checkpoint.bin") == read_text(full / "checkpoint.bin"));
  CHECK(line_count(out / "resumed" / "metrics.csv") == 1 + 2 * 2 * 3);
  CHECK(resumed.log.records.front().epoch == 3);
}

TEST_CASE("eval reports every head and the ensemble") {
  const fs::path out = fresh_dir("eval");
  ExperimentConfig c = experiment(out);
  cmd_train(c);
  const MetricReport report = cmd_eval(out / "seed-0" / "checkpoint.bin");
  REQUIRE(report.heads.size() == 3);
  CHECK(report.heads[0].head == "head0");
  CHECK(report.heads[2].head == "ensemble");
  CHECK(report.params == count_params(network_spec(c.model, 4, 3)));
  CHECK(report.flops == count_flops(network_spec(c.model, 4, 3)).total);
  CHECK(eval_csv(report).rfind(std::string(kEvalHeader) + "\n", 0) == 0);

  const fs::path data_dir = out / "data";
  const fs::path csv = cmd_gen_data(c.data, data_dir);
  const MetricReport on_csv = cmd_eval(out / "seed-0" / "checkpoint.bin", csv);
  CHECK(on_csv.heads.size() == 3);
  CHECK(line_count(csv) == 1 + 45);
}

TEST_CASE("sweep writes per-run rows and a per-value summary independent of thread count") {
  const fs::path out = fresh_dir("sweep");
  ExperimentConfig c = experiment(out / "serial");
  c.training.epochs = 2;
  c.training.checkpoint_every = 0;
  c.run.seeds = {0, 1};
  const SweepResult serial = cmd_sweep(c, SweepAxis::kMu, {0.0, 2.0}, 1);
  c.run.out = (out / "parallel").string();
  const SweepResult parallel = cmd_sweep(c, SweepAxis::kMu, {0.0, 2.0}, 3);
  CHECK(read_text(out / "serial" / "sweep.csv") == read_text(out / "parallel" / "sweep.csv"));
  CHECK(first_line(out / "serial" / "sweep.csv") == kSweepHeader);
  CHECK(line_count(out / "serial" / "sweep.csv") == 1 + 4);
  CHECK(first_line(out / "serial" / "sweep_summary.csv") == kSweepSummaryHeader);
  CHECK(line_count(out / "serial" / "sweep_summary.csv") == 1 + 2);
  CHECK(fs::exists(out / "serial" / "mu-2" / "seed-1" / "checkpoint.bin"));
  REQUIRE(serial.summary.size() == 2);
  CHECK(serial.summary[1].runs == 2);
  CHECK(serial.summary[1].metrics.size() == 5);

  CHECK_THROWS_AS(cmd_sweep(c, SweepAxis::kLambda, {0.5}, 1), ConfigError);
  CHECK_THROWS_AS(cmd_sweep(c, SweepAxis::kMu, {}, 1), ConfigError);
  CHECK_THROWS_AS(parse_axis("alpha"), ConfigError);
}

TEST_CASE("CODISTILL_THREADS caps sweep parallelism") {
  ::setenv("CODISTILL_THREADS", "3", 1);
  CHECK(sweep_threads() == 3);
  ::setenv("CODISTILL_THREADS", "zero", 1);
  CHECK_THROWS_AS(sweep_threads(), ConfigError);
  ::unsetenv("CODISTILL_THREADS");
  CHECK(sweep_threads() >= 1);
}
