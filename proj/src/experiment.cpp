// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "codistill/error.hpp"
#include "codistill/text.hpp"

namespace codistill {
namespace {

namespace fs = std::filesystem;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string metric_fields(const HeadMetrics& m) {
  return format_double(m.loss) + "," + format_double(m.top1) + "," + format_double(m.top5) + "," +
         format_double(m.gap) + "," + format_double(m.map);
}

std::vector<HeadMetrics> final_holdout(const TrainLog& log) {
  std::vector<HeadMetrics> out;
  if (log.records.empty()) return out;
  const std::uint64_t last = log.records.back().epoch;
  for (const auto& r : log.records) {
    if (r.epoch == last && r.split == "holdout") out.push_back(r.metrics);
  }
  return out;
}

void check_classes(const NetworkSpec& spec, const Dataset& data) {
  if (data.classes > spec.head.classes) {
    throw ConfigError("data has " + std::to_string(data.classes) + " classes but the model has " +
                      std::to_string(spec.head.classes));
  }
}

RunOutcome continue_run(const ExperimentConfig& config, TrainState state, std::uint64_t seed,
                        const PreparedData& data, const fs::path& dir, std::size_t input_dim,
                        std::size_t classes) {
  fs::create_directories(dir);
  write_text(dir / "config.ini", echo_config(config));
  TrainConfig tc = config.training;
  tc.seed = seed;
  const std::uint64_t every = tc.checkpoint_every;
  const auto on_epoch = [&](const TrainState& s) {
    if (every > 0 && s.epoch % every == 0 && s.epoch < tc.epochs) {
      save_checkpoint(make_checkpoint(config, s, input_dim, classes),
                      dir / ("checkpoint-epoch-" + std::to_string(s.epoch) + ".bin"));
    }
  };
  RunOutcome outcome;
  outcome.seed = seed;
  outcome.dir = dir;
  outcome.log = run_training(state, data.train, data.holdout, tc, on_epoch);
  outcome.holdout = final_holdout(outcome.log);
  save_checkpoint(make_checkpoint(config, state, input_dim, classes), dir / "checkpoint.bin");
  write_metrics_csv(outcome.log, dir / "metrics.csv");
  return outcome;
}

}  // namespace

PreparedData prepare_data(const DataConfig& data) {
  const Dataset all = load_dataset(data);
  all.validate();
  auto [train, holdout] = split(all, {data.holdout, data.seed});
  return {std::move(train), std::move(holdout)};
}

RunOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed, const PreparedData& data,
                    const fs::path& dir) {
  ExperimentConfig run_config = config;
  run_config.run.seeds = {seed};
  const std::size_t input_dim = data.train.feature_dim;
  const std::size_t classes = data.train.classes;
  const NetworkSpec spec = network_spec(config.model, input_dim, classes);
  TrainConfig tc = config.training;
  tc.seed = seed;
  TrainState state = start_training(MultiHeadNet::build(spec, seed), tc);
  return continue_run(run_config, std::move(state), seed, data, dir, input_dim, classes);
}

std::vector<RunOutcome> cmd_train(const ExperimentConfig& config) {
  const PreparedData data = prepare_data(config.data);
  std::vector<RunOutcome> out;
  for (std::uint64_t seed : config.run.seeds) {
    out.push_back(run_seed(config, seed, data, fs::path(config.run.out) / ("seed-" + std::to_string(seed))));
  }
  return out;
}

RunOutcome resume_train(const fs::path& checkpoint, const fs::path& dir) {
  const Checkpoint c = load_checkpoint(checkpoint);
  RestoredRun restored = restore(c);
  const PreparedData data = prepare_data(restored.config.data);
  if (data.train.feature_dim != c.input_dim || data.train.classes != c.classes) {
    throw ConfigError("checkpoint does not match the data its config describes");
  }
  const std::uint64_t seed = restored.config.run.seeds.front();
  return continue_run(restored.config, std::move(restored.state), seed, data, dir, c.input_dim,
                      c.classes);
}

MetricReport cmd_eval(const fs::path& checkpoint, const std::optional<fs::path>& data_csv) {
  const Checkpoint c = load_checkpoint(checkpoint);
  const RestoredRun restored = restore(c);
  const MultiHeadNet& net = restored.state.net;
  const Dataset data = data_csv ? load_table(*data_csv) : prepare_data(restored.config.data).holdout;
  if (data.feature_dim != net.spec().input_dim) {
    throw ConfigError("data has " + std::to_string(data.feature_dim) + " features, model expects " +
                      std::to_string(net.spec().input_dim));
  }
  check_classes(net.spec(), data);
  Dataset eval_data = data;
  eval_data.classes = net.spec().head.classes;

  MetricReport report;
  report.heads = evaluate(net, eval_data, restored.config.training.loss.discrepancy);
  report.params = count_params(net.spec());
  std::size_t frames = 1;
  if (net.spec().frame_input()) {
    double total = 0.0;
    for (const auto& ex : eval_data.examples) total += static_cast<double>(ex.features.dim(0));
    frames = static_cast<std::size_t>(
        std::max(1.0, std::round(total / static_cast<double>(eval_data.size()))));
  }
  report.flops = count_flops(net.spec(), frames).total;
  return report;
}

SweepAxis parse_axis(const std::string& text) {
  if (text == "lambda") return SweepAxis::kLambda;
  if (text == "mu") return SweepAxis::kMu;
  throw ConfigError("axis: expected lambda or mu, got '" + text + "'");
}

std::size_t sweep_threads() {
  if (const char* env = std::getenv("CODISTILL_THREADS")) {
    const auto v = parse_uint(env);
    if (!v || *v == 0) throw ConfigError("CODISTILL_THREADS must be a positive integer");
    return static_cast<std::size_t>(*v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SweepResult cmd_sweep(const ExperimentConfig& config, SweepAxis axis,
                      const std::vector<double>& values, std::size_t threads) {
  if (values.empty()) throw ConfigError("values: at least one value is required");
  const auto wanted = axis == SweepAxis::kLambda ? LossStructure::Kind::kEnsembling
                                                 : LossStructure::Kind::kCoDistillation;
  if (config.training.loss.kind != wanted) {
    throw ConfigError(std::string("axis: ") + (axis == SweepAxis::kLambda ? "lambda" : "mu") +
                      " does not match loss.structure");
  }
  const std::string axis_name = axis == SweepAxis::kLambda ? "lambda" : "mu";
  const PreparedData data = prepare_data(config.data);
  const fs::path out(config.run.out);
  fs::create_directories(out);

  struct Job {
    double value;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (double v : values)
    for (std::uint64_t s : config.run.seeds) jobs.push_back({v, s});
  std::vector<SweepRow> rows(jobs.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        ExperimentConfig c = config;
        c.training.loss.weight = jobs[i].value;
        const fs::path dir = out / (axis_name + "-" + format_double(jobs[i].value)) /
                             ("seed-" + std::to_string(jobs[i].seed));
        const RunOutcome r = run_seed(c, jobs[i].seed, data, dir);
        rows[i] = {jobs[i].value, jobs[i].seed, {}, r.log.diverged || r.holdout.empty()};
        if (!rows[i].diverged) rows[i].ensemble = r.holdout.back();
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  SweepResult result;
  result.rows = rows;
  std::ofstream csv = open_out(out / "sweep.csv");
  csv << kSweepHeader << "\n";
  for (const auto& r : rows) {
    csv << format_double(r.axis_value) << "," << r.seed << ","
        << (r.diverged ? "nan,nan,nan,nan,nan" : metric_fields(r.ensemble)) << ","
        << (r.diverged ? 1 : 0) << "\n";
  }

  std::ofstream summary = open_out(out / "sweep_summary.csv");
  summary << kSweepSummaryHeader << "\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (double v : values) {
    std::vector<std::vector<double>> columns(5);
    for (const auto& r : rows) {
      if (r.axis_value != v || r.diverged) continue;
      const HeadMetrics& m = r.ensemble;
      const double fields[] = {m.loss, m.top1, m.top5, m.gap, m.map};
      for (std::size_t k = 0; k < 5; ++k) columns[k].push_back(fields[k]);
    }
    SweepSummary s;
    s.axis_value = v;
    s.runs = columns[0].size();
    summary << format_double(v) << "," << s.runs;
    for (auto& col : columns) {
      RunAggregate agg;
      if (col.size() >= 2) {
        agg = mean_uncertainty(col);
      } else {
        agg.runs = col;
        agg.mean = col.empty() ? nan : col[0];
        agg.uncertainty = nan;
      }
      summary << "," << (std::isnan(agg.mean) ? "nan" : format_double(agg.mean)) << ","
              << (std::isnan(agg.uncertainty) ? "nan" : format_double(agg.uncertainty));
      s.metrics.push_back(std::move(agg));
    }
    summary << "\n";
    result.summary.push_back(std::move(s));
  }
  if (!csv || !summary) throw IoError("failed writing sweep output in " + out.string());
  return result;
}

fs::path cmd_gen_data(const DataConfig& data, const fs::path& dir) {
  const Dataset d = load_dataset(data);
  fs::create_directories(dir);
  const fs::path path = dir / "data.csv";
  save_table(d, path);
  return path;
}

void write_metrics_csv(const TrainLog& log, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << kMetricsHeader << "\n";
  for (const auto& r : log.records) {
    out << r.epoch << "," << r.metrics.head << "," << r.split << "," << metric_fields(r.metrics)
        << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string eval_csv(const MetricReport& report) {
  std::string out = std::string(kEvalHeader) + "\n";
  for (const auto& h : report.heads) {
    out += h.head + "," + metric_fields(h) + "," + std::to_string(report.params) + "," +
           std::to_string(report.flops) + "\n";
  }
  return out;
}

void write_eval_csv(const MetricReport& report, const fs::path& path) {
  write_text(path, eval_csv(report));
}

}  // namespace codistill
