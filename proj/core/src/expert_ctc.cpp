// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/expert_ctc.hpp"

#include <cmath>
#include <limits>

#include "moectc/errors.hpp"
#include "moectc/ops.hpp"

namespace moectc {

ExpertHeadBank ExpertHeadBank::create(ParamStore& store, HeadSharing mode,
                                      const std::vector<std::string>& layer_prefixes, int num_experts,
                                      std::int64_t d_model, std::int64_t vocab, const Linear& global_head,
                                      std::uint64_t seed) {
  ExpertHeadBank bank;
  bank.mode_ = mode;
  bank.global_ = global_head;
  for (const auto& prefix : layer_prefixes) {
    std::vector<Linear> layer;
    if (mode == HeadSharing::full_separation) {
      for (int j = 0; j < num_experts; ++j) {
        layer.push_back(Linear::create(store, prefix + ".heads." + std::to_string(j), d_model, vocab, seed));
      }
    } else if (mode == HeadSharing::layer_wise) {
      layer.push_back(Linear::create(store, prefix + ".head", d_model, vocab, seed));
    }
    bank.heads_.push_back(std::move(layer));
  }
  return bank;
}

const Linear& ExpertHeadBank::head(int layer, int expert) const {
  switch (mode_) {
    case HeadSharing::full_separation:
      return heads_.at(static_cast<std::size_t>(layer)).at(static_cast<std::size_t>(expert));
    case HeadSharing::layer_wise: return heads_.at(static_cast<std::size_t>(layer)).at(0);
    case HeadSharing::global: return global_;
  }
  throw ConfigError("unknown head sharing mode");
}

std::int64_t ExpertHeadBank::num_params() const {
  std::int64_t n = 0;
  for (const auto& layer : heads_)
    for (const auto& h : layer) n += h.num_params();
  return n;
}

LossBundle total_loss(double global_ctc, double local, double accent, double beta, double gamma) {
  if (beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights beta and gamma must be >= 0");
  LossBundle b;
  b.global_ctc = global_ctc;
  b.local = local;
  b.accent = accent;
  b.local_weight = beta;
  b.accent_weight = gamma;
  b.total = global_ctc + beta * local + gamma * accent;
  return b;
}

Var total_loss(const Var& global_ctc, const Var& local, const Var& accent, double beta, double gamma) {
  if (beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights beta and gamma must be >= 0");
  std::vector<Var> terms{global_ctc};
  if (local && beta != 0.0) terms.push_back(ops::scale(local, beta));
  if (accent && gamma != 0.0) terms.push_back(ops::scale(accent, gamma));
  return terms.size() == 1 ? terms[0] : ops::add_n(terms);
}

MoeCtcLayerOutput moectc_layer_forward(const Var& x, const RoutingState& routing, std::span<const Expert> experts,
                                       const ExpertHeadBank& heads, const Linear& projection, int layer,
                                       std::span<const Transcript* const> targets) {
  const auto B = x.dim(0);
  const auto N = routing.num_experts();
  if (routing.batch() != B) throw ConfigError("moectc_layer_forward: routing batch does not match input");
  if (static_cast<std::int64_t>(experts.size()) != N) throw ConfigError("moectc_layer_forward: expert count mismatch");
  const bool with_targets = !targets.empty();
  if (with_targets && static_cast<std::int64_t>(targets.size()) != B) {
    throw PipelineError("moectc_layer_forward: one target per sample is required");
  }

  MoeCtcLayerOutput out;
  out.expert_losses = Tensor({B, N}, std::numeric_limits<double>::quiet_NaN());
  std::vector<Var> rows;
  std::vector<Var> local_terms;
  for (std::int64_t i = 0; i < B; ++i) {
    const Var xi = B == 1 ? x : ops::select_batch(x, i);
    std::vector<Var> residual{xi};
    for (int j : routing.selected[static_cast<std::size_t>(i)]) {
      const auto gate_index = i * N + j;
      Var hidden = expert_forward(xi, experts[static_cast<std::size_t>(j)]);
      Var logits = heads.head(layer, j)(hidden);
      residual.push_back(ops::scale_by_entry(projection(logits), routing.renorm_gates, gate_index));
      if (with_targets) {
        const Transcript* y = targets[static_cast<std::size_t>(i)];
        if (y == nullptr) throw PipelineError("moectc_layer_forward: missing target in training mode");
        Var loss = ctc_loss_op(logits, *y);
        out.expert_losses.at(i, j) = loss.item();
        local_terms.push_back(ops::scale_by_entry(loss, routing.renorm_gates, gate_index));
      }
    }
    rows.push_back(ops::add_n(residual));
  }
  out.output = B == 1 ? rows[0] : ops::stack_batch(rows);
  if (with_targets) out.local = ops::scale(ops::add_n(local_terms), 1.0 / static_cast<double>(B));
  return out;
}

double local_loss_total(std::span<const double> per_layer) {
  double total = 0.0;
  for (double v : per_layer) total += v;
  return total;
}

Var local_loss_total(std::span<const Var> per_layer) {
  if (per_layer.empty()) throw ConfigError("local_loss_total: no layers");
  return per_layer.size() == 1 ? per_layer[0] : ops::add_n(per_layer);
}

}  // namespace moectc
