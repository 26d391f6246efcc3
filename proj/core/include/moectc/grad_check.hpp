// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "moectc/autograd.hpp"

namespace moectc {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Relative error uses max(|analytic|, |numeric|, abs_floor) as denominator.
  double abs_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of at most this many
  // entries per parameter.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string param;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t failures = 0;
  bool passed = false;
  std::string diagnostic;
};

/// Compares analytic gradients against central differences.
/// `loss` evaluates the scalar objective at the current parameter values;
/// `accumulate_grads` must add d loss / d param into every Param::grad
/// (grads are zeroed beforehand).
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& accumulate_grads,
                           std::span<Param* const> params, const GradCheckOptions& options = {});

/// Convenience form for objectives expressed as a single graph.
GradCheckReport grad_check(const std::function<Var()>& build, std::span<Param* const> params,
                           const GradCheckOptions& options = {});

}  // namespace moectc
