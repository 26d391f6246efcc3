// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "moectc/model.hpp"

namespace moectc {

struct TrainConfig {
  int batch_size = 16;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int stage1_epochs = 60;
  double stage1_lr = 1e-3;
  int stage2_epochs = 20;
  double stage2_lr = 1e-4;
  /// Single-stage budget for variants without an accent-aware stage.
  int agnostic_epochs = 80;
  double agnostic_lr = 1e-3;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything needed to reproduce a run. Serialized as flat `key = value`
/// lines; `#` starts a comment.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string manifest = "data/manifest.tsv";
  ModelConfig model;
  TrainConfig train;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses config text over the defaults. Unknown keys, duplicate keys and
/// malformed values are ConfigErrors naming the line.
RunConfig parse_run_config(const std::string& text);
/// Applies one `key = value` assignment (used for CLI overrides).
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
/// Normalized form: every key, fixed order, shortest round-trip numbers.
std::string to_text(const RunConfig& config);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace moectc
