// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/checkpoint.hpp"

#include <fstream>

#include "moectc/binary_io.hpp"
#include "moectc/errors.hpp"

namespace moectc {
namespace {
constexpr char kMagic[8] = {'M', 'O', 'E', 'C', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

Checkpoint capture(const Model& model, const RunConfig& config, std::string stage, int epoch, double dev_wer) {
  Checkpoint c;
  c.config_text = to_text(config);
  c.stage = std::move(stage);
  c.epoch = epoch;
  c.dev_wer = dev_wer;
  for (const Param* p : model.params().all()) c.params.emplace_back(p->name, p->value);
  return c;
}

void restore(Model& model, const Checkpoint& ckpt) {
  if (ckpt.params.size() != model.params().size()) {
    throw ConfigError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                      std::to_string(model.params().size()));
  }
  for (const auto& [name, value] : ckpt.params) {
    Param* p = model.params().find(name);
    if (p == nullptr) throw ConfigError("checkpoint parameter '" + name + "' not in model");
    if (p->value.shape() != value.shape()) throw ConfigError("checkpoint parameter '" + name + "' has wrong shape");
    p->value = value;
  }
}

RunConfig checkpoint_config(const Checkpoint& ckpt) { return parse_run_config(ckpt.config_text); }

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  binio::write_u32(out, kVersion);
  binio::write_string(out, ckpt.config_text);
  binio::write_string(out, ckpt.stage);
  binio::write_u64(out, static_cast<std::uint64_t>(static_cast<std::int64_t>(ckpt.epoch)));
  binio::write_f64(out, ckpt.dev_wer);
  binio::write_u64(out, ckpt.params.size());
  for (const auto& [name, value] : ckpt.params) {
    binio::write_string(out, name);
    binio::write_u32(out, static_cast<std::uint32_t>(value.rank()));
    for (auto d : value.shape()) binio::write_u64(out, static_cast<std::uint64_t>(d));
    for (double v : value.values()) binio::write_f64(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  binio::expect_magic(in, kMagic, sizeof(kMagic), "checkpoint");
  const auto version = binio::read_u32(in);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_text = binio::read_string(in);
  c.stage = binio::read_string(in);
  c.epoch = static_cast<int>(static_cast<std::int64_t>(binio::read_u64(in)));
  c.dev_wer = binio::read_f64(in);
  const auto n = binio::read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = binio::read_string(in);
    const auto rank = binio::read_u32(in);
    if (rank > 8) throw IoError("checkpoint parameter '" + name + "' has invalid rank");
    Shape shape(rank);
    std::int64_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::int64_t>(binio::read_u64(in));
      if (d < 0 || d > (1 << 28)) throw IoError("checkpoint parameter '" + name + "' has invalid shape");
      count *= d;
    }
    if (count > (1 << 28)) throw IoError("checkpoint parameter '" + name + "' too large");
    Tensor t(shape);
    for (auto& v : t.values()) v = binio::read_f64(in);
    c.params.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.config_text != b.config_text || a.stage != b.stage || a.epoch != b.epoch || a.params.size() != b.params.size()) {
    return false;
  }
  if (std::bit_cast<std::uint64_t>(a.dev_wer) != std::bit_cast<std::uint64_t>(b.dev_wer)) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].first != b.params[i].first || !moectc::bitwise_equal(a.params[i].second, b.params[i].second)) {
      return false;
    }
  }
  return true;
}

}  // namespace moectc
