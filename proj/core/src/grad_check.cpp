// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "moectc/rng.hpp"

namespace moectc {

GradCheckReport grad_check(const std::function<double()>& loss, const std::function<void()>& accumulate_grads,
                           std::span<Param* const> params, const GradCheckOptions& options) {
  GradCheckReport report;
  for (Param* p : params) p->zero_grad();
  const double base = loss();
  if (!std::isfinite(base)) {
    report.diagnostic = "objective is not finite at the base point";
    return report;
  }
  accumulate_grads();

  Rng rng(derive_seed(options.seed, "grad_check"));
  for (Param* p : params) {
    std::vector<std::int64_t> indices(static_cast<std::size_t>(p->value.size()));
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_entries_per_param > 0 && indices.size() > options.max_entries_per_param) {
      // Partial Fisher-Yates; keeps the sample a pure function of the seed.
      for (std::size_t i = 0; i < options.max_entries_per_param; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.index(indices.size() - i));
        std::swap(indices[i], indices[j]);
      }
      indices.resize(options.max_entries_per_param);
      std::sort(indices.begin(), indices.end());
    }
    for (auto idx : indices) {
      const double saved = p->value[idx];
      p->value[idx] = saved + options.step;
      const double up = loss();
      p->value[idx] = saved - options.step;
      const double down = loss();
      p->value[idx] = saved;
      GradCheckEntry e;
      e.param = p->name;
      e.index = idx;
      e.analytic = p->grad[idx];
      e.numeric = (up - down) / (2.0 * options.step);
      if (!std::isfinite(up) || !std::isfinite(down)) {
        std::ostringstream os;
        os << "objective not finite when perturbing " << p->name << "[" << idx << "]";
        report.diagnostic = os.str();
        report.entries.push_back(e);
        report.failures++;
        report.max_rel_error = INFINITY;
        return report;
      }
      const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), options.abs_floor});
      e.rel_error = std::abs(e.analytic - e.numeric) / denom;
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (e.rel_error >= options.tolerance) report.failures++;
      report.entries.push_back(std::move(e));
    }
  }
  report.passed = report.failures == 0 && !report.entries.empty();
  if (report.failures > 0) {
    std::ostringstream os;
    os << report.failures << " of " << report.entries.size() << " entries exceed tolerance " << options.tolerance
       << " (max rel. error " << report.max_rel_error << ")";
    report.diagnostic = os.str();
  }
  return report;
}

GradCheckReport grad_check(const std::function<Var()>& build, std::span<Param* const> params,
                           const GradCheckOptions& options) {
  return grad_check([&] { return build().item(); }, [&] { backward(build()); }, params, options);
}

}  // namespace moectc
