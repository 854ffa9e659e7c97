// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "codistill/error.hpp"
#include "codistill/text.hpp"

namespace codistill {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"data",
       {"source", "path", "classes", "dim", "per_class", "spread", "noise", "label_noise",
        "frames_min", "frames_max", "holdout", "seed"}},
      {"model", {"layers", "input_batch_norm", "fork", "shrink", "branches", "head", "experts"}},
      {"loss", {"structure", "lambda", "mu", "discrepancy"}},
      {"training",
       {"epochs", "batch_size", "label_smoothing", "weight_decay", "optimizer", "momentum", "beta1",
        "beta2", "adam_epsilon", "schedule", "lr", "decay_factor", "decay_interval", "decay_unit",
        "total_steps", "checkpoint_every"}},
      {"run", {"seeds", "out"}},
  };
  return keys;
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) {
    for (const auto& [section, body] : tree) {
      const auto known = known_keys().find(section);
      if (body.empty() && !body.data().empty()) {
        throw ConfigError(section + ": key outside any section");
      }
      if (known == known_keys().end()) throw ConfigError(section + ": unknown section");
      for (const auto& [key, value] : body) {
        if (!known->second.contains(key)) throw ConfigError(section + "." + key + ": unknown key");
        values_[section + "." + key] = value.data();
      }
    }
  }

  bool has(const std::string& field) const { return values_.contains(field); }

  template <typename T, typename Parse>
  void read(const std::string& field, T& out, Parse parse) const {
    const auto it = values_.find(field);
    if (it == values_.end()) return;
    try {
      out = parse(std::string(trim(it->second)));
    } catch (const Error& e) {
      throw ConfigError(field + ": " + e.what());
    }
  }

  void size(const std::string& field, std::size_t& out) const {
    read(field, out, [](const std::string& s) {
      const auto v = parse_uint(s);
      if (!v) throw ConfigError("expected a non-negative integer, got '" + s + "'");
      return static_cast<std::size_t>(*v);
    });
  }
  void u64(const std::string& field, std::uint64_t& out) const {
    read(field, out, [](const std::string& s) {
      const auto v = parse_uint(s);
      if (!v) throw ConfigError("expected a non-negative integer, got '" + s + "'");
      return *v;
    });
  }
  void real(const std::string& field, double& out) const {
    read(field, out, [](const std::string& s) {
      const auto v = parse_double(s);
      if (!v || !std::isfinite(*v)) throw ConfigError("expected a finite number, got '" + s + "'");
      return *v;
    });
  }
  void flag(const std::string& field, bool& out) const {
    read(field, out, [](const std::string& s) {
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      throw ConfigError("expected true or false, got '" + s + "'");
    });
  }
  void text(const std::string& field, std::string& out) const {
    read(field, out, [](const std::string& s) { return s; });
  }
  template <typename E>
  void choice(const std::string& field, E& out, const std::map<std::string, E>& options) const {
    read(field, out, [&](const std::string& s) {
      const auto it = options.find(s);
      if (it != options.end()) return it->second;
      std::string names;
      for (const auto& [name, value] : options) names += (names.empty() ? "" : "|") + name;
      throw ConfigError("expected one of " + names + ", got '" + s + "'");
    });
  }

 private:
  std::map<std::string, std::string> values_;
};

const std::map<std::string, DataSource> kSources{
    {"gaussian", DataSource::kGaussian}, {"frames", DataSource::kFrames}, {"csv", DataSource::kCsv}};
const std::map<std::string, HeadKind> kHeads{{"softmax", HeadKind::kSoftmax},
                                             {"moe", HeadKind::kMoE}};
const std::map<std::string, LossStructure::Kind> kStructures{
    {"ensembling", LossStructure::Kind::kEnsembling},
    {"codistillation", LossStructure::Kind::kCoDistillation}};
const std::map<std::string, Discrepancy> kDiscrepancies{
    {"cross_entropy", Discrepancy::kCrossEntropy}, {"l2", Discrepancy::kL2}};
const std::map<std::string, OptimizerKind> kOptimizers{{"momentum", OptimizerKind::kMomentum},
                                                       {"adam", OptimizerKind::kAdam}};
const std::map<std::string, Schedule::Kind> kSchedules{{"constant", Schedule::Kind::kConstant},
                                                       {"step", Schedule::Kind::kStepDecay},
                                                       {"cosine", Schedule::Kind::kHalfCosine}};
const std::map<std::string, Schedule::Unit> kUnits{{"epochs", Schedule::Unit::kEpochs},
                                                   {"examples", Schedule::Unit::kExamples}};

template <typename E>
std::string name_of(const std::map<std::string, E>& options, E value) {
  for (const auto& [name, v] : options)
    if (v == value) return name;
  return "?";
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& field : split(text, ',')) {
    const auto v = parse_uint(field);
    if (!v) throw ConfigError("bad seed '" + field + "'");
    seeds.push_back(*v);
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

void check(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field + ": " + message);
}

void validate(const ExperimentConfig& c) {
  const DataConfig& d = c.data;
  check(d.source != DataSource::kCsv || !d.path.empty(), "data.path", "required for csv data");
  if (d.source != DataSource::kCsv) {
    check(d.classes >= 2, "data.classes", "must be at least 2");
    check(d.dim >= 1, "data.dim", "must be positive");
    check(d.per_class >= 1, "data.per_class", "must be positive");
    check(d.spread >= 0.0, "data.spread", "must be non-negative");
    check(d.noise >= 0.0, "data.noise", "must be non-negative");
  }
  check(d.label_noise >= 0.0 && d.label_noise < 1.0, "data.label_noise", "must lie in [0, 1)");
  check(d.frames_min >= 1, "data.frames_min", "must be positive");
  check(d.frames_max >= d.frames_min, "data.frames_max", "must be at least frames_min");
  check(d.holdout > 0.0 && d.holdout < 1.0, "data.holdout", "must lie in (0, 1)");

  const ModelConfig& m = c.model;
  check(m.branches >= 1, "model.branches", "must be positive");
  check(m.fork > 0 || m.branches == 1, "model.fork", "several branches need a fork point");
  check(m.fork == 0 || m.fork < m.layers.size(), "model.fork",
        "must be below the layer count " + std::to_string(m.layers.size()));
  check(m.shrink >= 1.0, "model.shrink", "must be at least 1");
  check(m.experts >= 1, "model.experts", "must be positive");

  const TrainConfig& t = c.training;
  check(t.batch_size >= 2, "training.batch_size", "must be at least 2");
  check(t.label_smoothing >= 0.0 && t.label_smoothing < 1.0, "training.label_smoothing",
        "must lie in [0, 1)");
  check(t.weight_decay >= 0.0, "training.weight_decay", "must be non-negative");
  check(t.schedule.base_lr > 0.0, "training.lr", "must be positive");
  check(t.optimizer.momentum >= 0.0 && t.optimizer.momentum < 1.0, "training.momentum",
        "must lie in [0, 1)");
  check(t.optimizer.beta1 >= 0.0 && t.optimizer.beta1 < 1.0, "training.beta1", "must lie in [0, 1)");
  check(t.optimizer.beta2 >= 0.0 && t.optimizer.beta2 < 1.0, "training.beta2", "must lie in [0, 1)");
  check(t.optimizer.epsilon > 0.0, "training.adam_epsilon", "must be positive");
  check(t.schedule.decay_factor > 0.0 && t.schedule.decay_factor <= 1.0, "training.decay_factor",
        "must lie in (0, 1]");
  check(t.schedule.decay_interval > 0.0, "training.decay_interval", "must be positive");
  check(!c.run.seeds.empty(), "run.seeds", "must list at least one seed");
  check(!c.run.out.empty(), "run.out", "must not be empty");
}

}  // namespace

std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  if (trim(text).empty()) return layers;
  for (const auto& token : split(text, ',')) {
    const auto parts = split(token, ':');
    if (parts[0] == "gate" && parts.size() == 1) {
      layers.push_back(LayerSpec::context_gate());
    } else if (parts[0] == "swap" && parts.size() == 1) {
      layers.push_back(LayerSpec::swap_pool());
    } else if (parts[0] == "dense" && parts.size() >= 2 && parts.size() <= 4) {
      const auto width = parse_uint(parts[1]);
      if (!width || *width == 0) throw ConfigError("bad dense width in '" + token + "'");
      LayerSpec l = LayerSpec::dense(static_cast<std::size_t>(*width));
      for (std::size_t i = 2; i < parts.size(); ++i) {
        if (parts[i] == "bn") {
          l.batch_norm = true;
        } else if (i == 2) {
          l.activation = parse_activation(parts[i]);
        } else {
          throw ConfigError("bad layer option '" + parts[i] + "' in '" + token + "'");
        }
      }
      layers.push_back(l);
    } else {
      throw ConfigError("bad layer '" + token + "'");
    }
  }
  return layers;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const LayerSpec& l : layers) {
    if (!out.empty()) out += ",";
    switch (l.kind) {
      case LayerKind::kDense:
        out += "dense:" + std::to_string(l.width) + ":" + to_string(l.activation);
        if (l.batch_norm) out += ":bn";
        break;
      case LayerKind::kContextGate:
        out += "gate";
        break;
      case LayerKind::kSwapPool:
        out += "swap";
        break;
    }
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  const Reader r(tree);
  ExperimentConfig c;

  DataConfig& d = c.data;
  r.choice("data.source", d.source, kSources);
  r.text("data.path", d.path);
  r.size("data.classes", d.classes);
  r.size("data.dim", d.dim);
  r.size("data.per_class", d.per_class);
  r.real("data.spread", d.spread);
  r.real("data.noise", d.noise);
  r.real("data.label_noise", d.label_noise);
  r.size("data.frames_min", d.frames_min);
  r.size("data.frames_max", d.frames_max);
  r.real("data.holdout", d.holdout);
  r.u64("data.seed", d.seed);

  ModelConfig& m = c.model;
  r.read("model.layers", m.layers, parse_layers);
  r.flag("model.input_batch_norm", m.input_batch_norm);
  r.size("model.fork", m.fork);
  r.real("model.shrink", m.shrink);
  r.size("model.branches", m.branches);
  r.choice("model.head", m.head, kHeads);
  r.size("model.experts", m.experts);

  LossStructure& loss = c.training.loss;
  if (!r.has("loss.structure")) throw ConfigError("loss.structure: required");
  r.choice("loss.structure", loss.kind, kStructures);
  const bool ensembling = loss.kind == LossStructure::Kind::kEnsembling;
  const std::string weight_key = ensembling ? "loss.lambda" : "loss.mu";
  const std::string other_key = ensembling ? "loss.mu" : "loss.lambda";
  if (r.has(other_key)) {
    throw ConfigError(other_key + ": does not apply to structure " +
                      name_of(kStructures, loss.kind));
  }
  if (!r.has(weight_key)) throw ConfigError(weight_key + ": required");
  r.real(weight_key, loss.weight);
  r.choice("loss.discrepancy", loss.discrepancy, kDiscrepancies);

  TrainConfig& t = c.training;
  r.u64("training.epochs", t.epochs);
  r.size("training.batch_size", t.batch_size);
  r.real("training.label_smoothing", t.label_smoothing);
  r.real("training.weight_decay", t.weight_decay);
  r.choice("training.optimizer", t.optimizer.kind, kOptimizers);
  r.real("training.momentum", t.optimizer.momentum);
  r.real("training.beta1", t.optimizer.beta1);
  r.real("training.beta2", t.optimizer.beta2);
  r.real("training.adam_epsilon", t.optimizer.epsilon);
  r.choice("training.schedule", t.schedule.kind, kSchedules);
  r.real("training.lr", t.schedule.base_lr);
  r.real("training.decay_factor", t.schedule.decay_factor);
  r.real("training.decay_interval", t.schedule.decay_interval);
  r.choice("training.decay_unit", t.schedule.unit, kUnits);
  r.u64("training.total_steps", t.schedule.total_steps);
  r.u64("training.checkpoint_every", t.checkpoint_every);

  r.read("run.seeds", c.run.seeds, parse_seeds);
  r.text("run.out", c.run.out);

  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string echo_config(const ExperimentConfig& c) {
  std::ostringstream o;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  const auto f = format_double;
  const DataConfig& d = c.data;
  o << "[data]\n"
    << "source = " << name_of(kSources, d.source) << "\n";
  if (!d.path.empty()) o << "path = " << d.path << "\n";
  o << "classes = " << d.classes << "\n"
    << "dim = " << d.dim << "\n"
    << "per_class = " << d.per_class << "\n"
    << "spread = " << f(d.spread) << "\n"
    << "noise = " << f(d.noise) << "\n"
    << "label_noise = " << f(d.label_noise) << "\n"
    << "frames_min = " << d.frames_min << "\n"
    << "frames_max = " << d.frames_max << "\n"
    << "holdout = " << f(d.holdout) << "\n"
    << "seed = " << d.seed << "\n\n";

  const ModelConfig& m = c.model;
  o << "[model]\n"
    << "layers = " << format_layers(m.layers) << "\n"
    << "input_batch_norm = " << b(m.input_batch_norm) << "\n"
    << "fork = " << m.fork << "\n"
    << "shrink = " << f(m.shrink) << "\n"
    << "branches = " << m.branches << "\n"
    << "head = " << name_of(kHeads, m.head) << "\n"
    << "experts = " << m.experts << "\n\n";

  const TrainConfig& t = c.training;
  const bool ensembling = t.loss.kind == LossStructure::Kind::kEnsembling;
  o << "[loss]\n"
    << "structure = " << name_of(kStructures, t.loss.kind) << "\n"
    << (ensembling ? "lambda = " : "mu = ") << f(t.loss.weight) << "\n"
    << "discrepancy = " << name_of(kDiscrepancies, t.loss.discrepancy) << "\n\n";

  o << "[training]\n"
    << "epochs = " << t.epochs << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "label_smoothing = " << f(t.label_smoothing) << "\n"
    << "weight_decay = " << f(t.weight_decay) << "\n"
    << "optimizer = " << name_of(kOptimizers, t.optimizer.kind) << "\n"
    << "momentum = " << f(t.optimizer.momentum) << "\n"
    << "beta1 = " << f(t.optimizer.beta1) << "\n"
    << "beta2 = " << f(t.optimizer.beta2) << "\n"
    << "adam_epsilon = " << f(t.optimizer.epsilon) << "\n"
    << "schedule = " << name_of(kSchedules, t.schedule.kind) << "\n"
    << "lr = " << f(t.schedule.base_lr) << "\n"
    << "decay_factor = " << f(t.schedule.decay_factor) << "\n"
    << "decay_interval = " << f(t.schedule.decay_interval) << "\n"
    << "decay_unit = " << name_of(kUnits, t.schedule.unit) << "\n"
    << "total_steps = " << t.schedule.total_steps << "\n"
    << "checkpoint_every = " << t.checkpoint_every << "\n\n";

  o << "[run]\nseeds = ";
  for (std::size_t i = 0; i < c.run.seeds.size(); ++i) o << (i ? "," : "") << c.run.seeds[i];
  o << "\nout = " << c.run.out << "\n";
  return o.str();
}

Dataset load_dataset(const DataConfig& d) {
  switch (d.source) {
    case DataSource::kGaussian:
      return gen_gaussian_mixture({d.classes, d.dim, d.per_class, d.spread, d.noise,
                                   d.label_noise, d.seed});
    case DataSource::kFrames:
      return gen_frame_sequences({d.classes, d.dim, d.frames_min, d.frames_max, d.per_class,
                                  d.noise, d.seed});
    case DataSource::kCsv:
      return load_table(d.path);
  }
  throw ConfigError("data.source: unsupported");
}

NetworkSpec network_spec(const ModelConfig& m, std::size_t input_dim, std::size_t classes,
                         std::vector<std::string>* warnings) {
  const HeadSpec head{m.head, classes, m.experts};
  NetworkSpec single = single_network(input_dim, m.layers, head, m.input_batch_norm);
  NetworkSpec spec = m.fork == 0 ? single : fork_network(single, m.fork, m.shrink, m.branches, warnings);
  spec.validate();
  return spec;
}

}  // namespace codistill
