// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line runner over the C interface.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "codistill/codistill.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

int report(cd_status status) {
  std::fprintf(stderr, "codistill: %s\n", cd_last_error());
  return status == CD_ERR_CONFIG || status == CD_ERR_ARGUMENT ? kExitUsage : kExitFailure;
}

void emit(char* text) {
  if (text == nullptr) return;
  std::fputs(text, stdout);
  cd_string_free(text);
}

std::optional<std::vector<double>> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string field;
  while (std::getline(in, field, ',')) {
    const auto first = field.find_first_not_of(" \t");
    if (first == std::string::npos) return std::nullopt;
    field = field.substr(first, field.find_last_not_of(" \t") - first + 1);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(field.c_str(), &end);
    if (errno != 0 || end != field.c_str() + field.size()) return std::nullopt;
    out.push_back(v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

struct ConfigHandle {
  cd_config* ptr = nullptr;
  ~ConfigHandle() { cd_config_free(ptr); }
};

// Loads --config and applies --out / --seed overrides.
cd_status load(const std::string& path, const std::string& out, const std::optional<std::uint64_t>& seed,
               ConfigHandle& config) {
  cd_status s = cd_config_load(path.c_str(), &config.ptr);
  if (s != CD_OK) return s;
  if (!out.empty() && (s = cd_config_set_out(config.ptr, out.c_str())) != CD_OK) return s;
  if (seed) {
    const std::uint64_t one = *seed;
    s = cd_config_set_seeds(config.ptr, &one, 1);
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-head ensembling and co-distillation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cd_version()));

  std::string config_path, out_dir, checkpoint, data_csv, resume, axis, values_text;
  std::optional<std::uint64_t> seed;
  std::size_t trials = 1000;
  std::uint64_t verify_seed = 0;

  auto* train = app.add_subcommand("train", "Train one run per configured seed");
  train->add_option("--config", config_path, "Experiment config (INI)")->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Output directory, overrides [run] out");
  train->add_option("--seed", seed, "Single run seed, overrides [run] seeds");
  train->add_option("--resume", resume, "Continue from a checkpoint into --out")
      ->check(CLI::ExistingFile);
  train->callback([&] {
    if (resume.empty() == config_path.empty()) {
      throw CLI::ValidationError("train", "give exactly one of --config or --resume");
    }
    if (!resume.empty() && out_dir.empty()) {
      throw CLI::ValidationError("--resume", "needs --out");
    }
  });

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_csv, "CSV to evaluate instead of the holdout split")
      ->check(CLI::ExistingFile);
  eval->add_option("--out", out_dir, "Directory for eval.csv");

  auto* sweep = app.add_subcommand("sweep", "Train across values of lambda or mu");
  sweep->add_option("--config", config_path, "Experiment config (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis, "Swept loss weight")
      ->required()
      ->check(CLI::IsMember({"lambda", "mu"}));
  sweep->add_option("--values", values_text, "Comma-separated values, e.g. --values=1,0,-1.5")
      ->required()
      ->allow_extra_args(false);
  sweep->add_option("--out", out_dir, "Output directory, overrides [run] out");
  sweep->add_option("--seed", seed, "Single run seed, overrides [run] seeds");

  auto* verify = app.add_subcommand("verify", "Run the built-in correctness checks");
  verify->add_option("--trials", trials, "Random trials per check")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", verify_seed, "Seed for the random trials");

  auto* gen = app.add_subcommand("gen-data", "Write the configured dataset as CSV");
  gen->add_option("--config", config_path, "Experiment config (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Directory for data.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  char* text = nullptr;
  cd_status s = CD_OK;
  if (*train) {
    if (!resume.empty()) {
      s = cd_train_resume(resume.c_str(), out_dir.c_str(), &text);
    } else {
      ConfigHandle config;
      if ((s = load(config_path, out_dir, seed, config)) == CD_OK) s = cd_train(config.ptr, &text);
    }
  } else if (*eval) {
    const std::string out_csv = out_dir.empty() ? "" : out_dir + "/eval.csv";
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    s = cd_eval(checkpoint.c_str(), data_csv.empty() ? nullptr : data_csv.c_str(),
                out_csv.empty() ? nullptr : out_csv.c_str(), &text);
  } else if (*sweep) {
    const auto values = parse_values(values_text);
    if (!values) {
      std::fprintf(stderr, "codistill: --values: expected a comma-separated list of numbers\n");
      return kExitUsage;
    }
    ConfigHandle config;
    if ((s = load(config_path, out_dir, seed, config)) == CD_OK) {
      s = cd_sweep(config.ptr, axis.c_str(), values->data(), values->size(), 0, &text);
    }
  } else if (*verify) {
    int passed = 0;
    s = cd_verify(trials, verify_seed, &passed, &text);
  } else if (*gen) {
    ConfigHandle config;
    if ((s = load(config_path, "", std::nullopt, config)) == CD_OK) {
      s = cd_gen_data(config.ptr, out_dir.c_str(), &text);
      if (s == CD_OK) std::fputs("wrote ", stdout);
    }
  }
  emit(text);
  if (s != CD_OK) return report(s);
  if (*gen) std::fputs("\n", stdout);
  return 0;
}
