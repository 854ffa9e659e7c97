// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "codistill/error.hpp"
#include "codistill/text.hpp"

namespace codistill {

void Dataset::validate() const {
  if (examples.empty()) throw ConfigError("dataset is empty");
  if (classes == 0) throw ConfigError("dataset declares no classes");
  for (const Example& ex : examples) {
    if (ex.labels.empty()) throw ConfigError("example without labels");
    if (task == TaskKind::kSingleLabel && ex.labels.size() != 1) {
      throw ConfigError("single-label example carries several labels");
    }
    for (std::size_t l : ex.labels) {
      if (l >= classes) {
        throw ConfigError("label " + std::to_string(l) + " outside [0, " +
                          std::to_string(classes) + ")");
      }
    }
    const Shape& s = ex.features.shape();
    const bool ok = frames ? (s.size() == 2 && s[0] >= 1 && s[1] == feature_dim)
                           : (s.size() == 1 && s[0] == feature_dim);
    if (!ok) throw ShapeError("example features " + to_string(s) + " do not match dataset");
  }
}

Dataset gen_gaussian_mixture(const GaussianMixtureParams& p) {
  if (p.classes == 0 || p.dim == 0 || p.per_class == 0) {
    throw ConfigError("gaussian mixture: counts must be positive");
  }
  if (!(p.label_noise >= 0.0 && p.label_noise < 1.0)) {
    throw ConfigError("gaussian mixture: label noise must lie in [0, 1)");
  }
  if (p.label_noise > 0.0 && p.classes < 2) {
    throw ConfigError("gaussian mixture: label noise needs at least two classes");
  }
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> center_dist(0.0, p.spread);
  std::normal_distribution<double> point_dist(0.0, p.noise);

  std::vector<std::vector<double>> centers(p.classes, std::vector<double>(p.dim));
  for (auto& c : centers)
    for (double& v : c) v = center_dist(rng);

  Dataset data;
  data.task = TaskKind::kSingleLabel;
  data.classes = p.classes;
  data.feature_dim = p.dim;
  for (std::size_t c = 0; c < p.classes; ++c) {
    for (std::size_t i = 0; i < p.per_class; ++i) {
      std::vector<double> x(p.dim);
      for (std::size_t d = 0; d < p.dim; ++d) x[d] = centers[c][d] + point_dist(rng);
      data.examples.push_back({Tensor({p.dim}, std::move(x)), {c}});
    }
  }

  const std::size_t total = data.examples.size();
  const auto flips = static_cast<std::size_t>(std::floor(p.label_noise * static_cast<double>(total)));
  if (flips > 0) {
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> offset(1, p.classes - 1);
    for (std::size_t i = 0; i < flips; ++i) {
      auto& label = data.examples[order[i]].labels[0];
      label = (label + offset(rng)) % p.classes;
    }
  }
  return data;
}

Dataset gen_frame_sequences(const FrameSequenceParams& p) {
  if (p.classes == 0 || p.dim == 0 || p.per_class == 0 || p.frames_min == 0) {
    throw ConfigError("frame sequences: counts must be positive");
  }
  if (p.frames_max < p.frames_min) throw ConfigError("frame sequences: frames_max < frames_min");
  if (!(p.noise >= 0.0)) throw ConfigError("frame sequences: noise must be non-negative");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, p.noise);
  std::uniform_int_distribution<std::size_t> frame_count(p.frames_min, p.frames_max);
  std::uniform_int_distribution<std::size_t> extra_count(0, std::min<std::size_t>(2, p.classes - 1));
  std::uniform_int_distribution<std::size_t> any_class(0, p.classes - 1);
  std::uniform_real_distribution<double> weight(0.5, 1.5);

  std::vector<std::vector<double>> prototypes(p.classes, std::vector<double>(p.dim));
  for (auto& proto : prototypes)
    for (double& v : proto) v = unit(rng);

  Dataset data;
  data.task = TaskKind::kMultiLabel;
  data.classes = p.classes;
  data.feature_dim = p.dim;
  data.frames = true;
  for (std::size_t c = 0; c < p.classes; ++c) {
    for (std::size_t i = 0; i < p.per_class; ++i) {
      std::vector<std::size_t> active{c};
      const std::size_t extra = extra_count(rng);
      while (active.size() < 1 + extra) {
        const std::size_t k = any_class(rng);
        if (std::find(active.begin(), active.end(), k) == active.end()) active.push_back(k);
      }
      std::sort(active.begin(), active.end());
      const std::size_t n = frame_count(rng);
      std::vector<double> frames(n * p.dim, 0.0);
      for (std::size_t f = 0; f < n; ++f) {
        for (std::size_t k : active) {
          const double w = weight(rng);
          for (std::size_t d = 0; d < p.dim; ++d) frames[f * p.dim + d] += w * prototypes[k][d];
        }
        if (p.noise > 0.0) {
          for (std::size_t d = 0; d < p.dim; ++d) frames[f * p.dim + d] += noise(rng);
        }
      }
      data.examples.push_back({Tensor({n, p.dim}, std::move(frames)), std::move(active)});
    }
  }
  return data;
}

Dataset load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header row");
  ++line_no;
  const std::vector<std::string> header = split(line, ',');
  const auto label_it = std::find(header.begin(), header.end(), "label");
  if (label_it == header.end()) {
    throw FormatError(path.string() + ":1: header row has no 'label' column");
  }
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  if (header.size() < 2) throw FormatError(path.string() + ":1: no feature columns");

  Dataset data;
  data.feature_dim = header.size() - 1;
  std::size_t max_label = 0;
  bool multi = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    const std::vector<std::string> fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw FormatError(where + "expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    Example ex;
    const std::vector<std::string> ids = split(fields[label_col], '|');
    multi = multi || ids.size() > 1;
    for (const auto& id : ids) {
      const auto v = parse_uint(id);
      if (!v) throw FormatError(where + "bad label '" + fields[label_col] + "'");
      ex.labels.push_back(static_cast<std::size_t>(*v));
      max_label = std::max<std::size_t>(max_label, *v);
    }
    std::sort(ex.labels.begin(), ex.labels.end());
    ex.labels.erase(std::unique(ex.labels.begin(), ex.labels.end()), ex.labels.end());
    std::vector<double> features;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i == label_col) continue;
      const auto v = parse_double(fields[i]);
      if (!v) throw FormatError(where + "non-numeric feature '" + fields[i] + "'");
      features.push_back(*v);
    }
    const std::size_t width = features.size();
    try {
      ex.features = Tensor({width}, std::move(features));
    } catch (const NumericError&) {
      throw FormatError(where + "non-finite feature value");
    }
    data.examples.push_back(std::move(ex));
  }
  if (data.examples.empty()) throw FormatError(path.string() + ": no data rows");
  data.task = multi ? TaskKind::kMultiLabel : TaskKind::kSingleLabel;
  data.classes = max_label + 1;
  data.validate();
  return data;
}

void save_table(const Dataset& data, const std::filesystem::path& path) {
  if (data.frames) throw ConfigError("frame datasets cannot be written as a table");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label";
  for (std::size_t d = 0; d < data.feature_dim; ++d) out << ",f" << d;
  out << "\n";
  for (const Example& ex : data.examples) {
    for (std::size_t i = 0; i < ex.labels.size(); ++i) out << (i ? "|" : "") << ex.labels[i];
    for (double v : ex.features.data()) out << "," << format_double(v);
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  if (!(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie in (0, 1)");
  }
  const std::size_t n = data.size();
  const auto holdout_n =
      static_cast<std::size_t>(std::llround(spec.holdout_fraction * static_cast<double>(n)));
  if (holdout_n == 0 || holdout_n >= n) {
    throw ConfigError("split of " + std::to_string(n) + " examples at fraction " +
                      format_double(spec.holdout_fraction) + " leaves an empty side");
  }
  std::vector<std::size_t> order = all_indices(data);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  Dataset train = data, holdout = data;
  train.examples.clear();
  holdout.examples.clear();
  for (std::size_t i = 0; i < n; ++i) {
    (i < holdout_n ? holdout : train).examples.push_back(data.examples[order[i]]);
  }
  return {std::move(train), std::move(holdout)};
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("make_batch: no examples");
  Batch batch;
  std::vector<double> rows;
  std::size_t row_count = 0;
  for (std::size_t i : indices) {
    const Tensor& f = data.examples.at(i).features;
    rows.insert(rows.end(), f.data().begin(), f.data().end());
    const std::size_t n = data.frames ? f.dim(0) : 1;
    if (data.frames) batch.segments.push_back(n);
    row_count += n;
  }
  batch.features = Tensor({row_count, data.feature_dim}, std::move(rows));
  return batch;
}

Tensor label_matrix(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<double> out(indices.size() * data.classes, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    for (std::size_t l : data.examples.at(indices[r]).labels) out[r * data.classes + l] = 1.0;
  }
  return Tensor({indices.size(), data.classes}, std::move(out));
}

std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> out(data.size());
  std::iota(out.begin(), out.end(), 0);
  return out;
}

}  // namespace codistill
