// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "codistill/data.hpp"
#include "codistill/ensemble.hpp"
#include "codistill/training.hpp"

namespace codistill {

enum class DataSource { kGaussian, kFrames, kCsv };

struct DataConfig {
  DataSource source = DataSource::kGaussian;
  std::string path;  // csv only
  std::size_t classes = 4;
  std::size_t dim = 8;
  std::size_t per_class = 50;
  double spread = 1.0;
  double noise = 1.0;
  double label_noise = 0.0;
  std::size_t frames_min = 2;
  std::size_t frames_max = 6;
  double holdout = 0.5;
  std::uint64_t seed = 0;  // generation and split; fixed across run seeds

  bool operator==(const DataConfig&) const = default;
};

struct ModelConfig {
  std::vector<LayerSpec> layers;
  bool input_batch_norm = false;
  std::size_t fork = 0;  // 0 keeps a single unforked network
  double shrink = 1.5;
  std::size_t branches = 1;
  HeadKind head = HeadKind::kSoftmax;
  std::size_t experts = 2;

  bool operator==(const ModelConfig&) const = default;
};

struct RunConfig {
  std::vector<std::uint64_t> seeds{0};
  std::string out = "runs";

  bool operator==(const RunConfig&) const = default;
};

// Sections [data], [model], [loss], [training] and [run] of an INI file.
struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig training;  // holds the loss structure of [loss]
  RunConfig run;

  bool operator==(const ExperimentConfig&) const = default;
};

// Strict parse: unknown sections or keys, malformed values and a loss
// weight key that does not match the structure are ConfigErrors whose
// message starts with "section.key".
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field, defaults included, in a form parse_config reads back to an
// equal config.
std::string echo_config(const ExperimentConfig& config);

// Layer list text: comma-separated `dense:WIDTH[:ACTIVATION][:bn]`, `gate`
// and `swap` entries.
std::vector<LayerSpec> parse_layers(const std::string& text);
std::string format_layers(const std::vector<LayerSpec>& layers);

// Loads or generates the dataset described by `data`.
Dataset load_dataset(const DataConfig& data);

// Network for a dataset of the given input width and class count.
NetworkSpec network_spec(const ModelConfig& model, std::size_t input_dim, std::size_t classes,
                         std::vector<std::string>* warnings = nullptr);

}  // namespace codistill
