// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "moectc/config.hpp"
#include "moectc/model.hpp"

namespace moectc {

/// Named parameter arrays plus the header needed to rebuild the model.
struct Checkpoint {
  std::string config_text;  // normalized RunConfig
  std::string stage;        // "init", "aware", "agnostic"
  int epoch = 0;
  double dev_wer = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint capture(const Model& model, const RunConfig& config, std::string stage, int epoch, double dev_wer);
/// Copies values into a model built from the same config. Missing or
/// mis-shaped parameters are ConfigErrors.
void restore(Model& model, const Checkpoint& ckpt);
RunConfig checkpoint_config(const Checkpoint& ckpt);

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every parameter bitwise equal, same order and names.
bool bitwise_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace moectc
