// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "codistill/error.hpp"

namespace codistill {
namespace {

constexpr std::string_view kMagic = "CDST";

class Writer {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  void u32(std::uint32_t v) { little(v, 4); }
  void u64(std::uint64_t v) { little(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("checkpoint string too long");
    }
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void little(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::string out_;
};

class Parser {
 public:
  explicit Parser(std::string_view in) : in_(in) {}

  std::string_view bytes(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::string_view out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little(4)); }
  std::uint64_t u64() { return little(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(bytes(n));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::uint64_t little(int width) {
    const std::string_view b = bytes(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    }
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.str(c.config);
  w.u64(c.input_dim);
  w.u64(c.classes);
  w.u64(c.step);
  w.u64(c.epoch);
  w.str(c.rng_state);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  return w.take();
}

Checkpoint deserialize(std::string_view bytes) {
  Parser p(bytes);
  if (bytes.size() < kMagic.size() || p.bytes(kMagic.size()) != kMagic) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  const std::uint32_t version = p.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.config = p.str();
  c.input_dim = p.u64();
  c.classes = p.u64();
  c.step = p.u64();
  c.epoch = p.u64();
  c.rng_state = p.str();
  const std::uint32_t count = p.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = p.str();
    const std::uint32_t rank = p.u32();
    Shape shape;
    std::size_t size = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(p.u64()));
      if (shape.back() != 0 && size > bytes.size() / shape.back()) {
        throw FormatError("checkpoint tensor " + name + " is larger than the file");
      }
      size *= shape.back();
    }
    std::vector<double> values(size);
    for (double& v : values) v = p.f64();
    try {
      c.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
    } catch (const NumericError&) {
      throw FormatError("checkpoint tensor " + name + " holds non-finite values");
    }
  }
  if (!p.done()) throw FormatError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return deserialize(bytes.str());
}

Checkpoint make_checkpoint(const ExperimentConfig& config, const TrainState& state,
                           std::size_t input_dim, std::size_t classes) {
  Checkpoint c;
  c.config = echo_config(config);
  c.input_dim = input_dim;
  c.classes = classes;
  c.step = state.step;
  c.epoch = state.epoch;
  std::ostringstream rng;
  rng << state.rng;
  c.rng_state = rng.str();
  const ParameterStore& store = state.net.params();
  for (const auto& entry : store.entries()) c.tensors.emplace_back(entry.name, entry.value);
  for (auto& slot : state.optimizer.slots(store)) c.tensors.push_back(std::move(slot));
  return c;
}

RestoredRun restore(const Checkpoint& c) {
  ExperimentConfig config = parse_config(c.config);
  const NetworkSpec spec = network_spec(config.model, c.input_dim, c.classes);
  TrainState state{MultiHeadNet::build(spec, 0), {}, c.step, c.epoch, {}};
  ParameterStore& store = state.net.params();
  state.optimizer = OptimizerState::create(config.training.optimizer, store);
  state.optimizer.set_steps(c.step);

  std::set<std::string> seen;
  for (const auto& [name, value] : c.tensors) {
    if (!seen.insert(name).second) throw FormatError("checkpoint repeats tensor " + name);
    if (name.starts_with("opt/")) {
      state.optimizer.restore_slot(store, name, value);
      continue;
    }
    const auto id = store.find(name);
    if (!id) throw FormatError("checkpoint tensor " + name + " does not belong to the model");
    if (value.shape() != store.value(*id).shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + to_string(value.shape()) +
                        ", model expects " + to_string(store.value(*id).shape()));
    }
    store.set(*id, value);
  }
  for (const auto& entry : store.entries()) {
    if (!seen.contains(entry.name)) throw FormatError("checkpoint lacks tensor " + entry.name);
  }
  for (const auto& [name, value] : state.optimizer.slots(store)) {
    if (!seen.contains(name)) throw FormatError("checkpoint lacks optimizer slot " + name);
  }
  std::istringstream rng(c.rng_state);
  rng >> state.rng;
  if (!rng) throw FormatError("checkpoint RNG state is unreadable");
  return {std::move(config), std::move(state)};
}

}  // namespace codistill
