// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moectc/ctc.hpp"
#include "moectc/layers.hpp"
#include "moectc/moe.hpp"

namespace moectc {

/// CTC heads (D -> V) used by the experts of every MoE-CTC layer.
/// full_separation: one head per (layer, expert); layer_wise: one per layer;
/// global: the model's final head serves every expert.
class ExpertHeadBank {
 public:
  ExpertHeadBank() = default;
  /// Registers the heads the mode needs under `<prefix><layer>.head...`.
  static ExpertHeadBank create(ParamStore& store, HeadSharing mode, const std::vector<std::string>& layer_prefixes,
                               int num_experts, std::int64_t d_model, std::int64_t vocab, const Linear& global_head,
                               std::uint64_t seed);

  const Linear& head(int layer, int expert) const;
  HeadSharing mode() const { return mode_; }
  /// Parameters owned by the bank (0 in global mode).
  std::int64_t num_params() const;

 private:
  HeadSharing mode_ = HeadSharing::full_separation;
  std::vector<std::vector<Linear>> heads_;  // [layer][expert or 0]
  Linear global_;
};

/// Loss terms of one forward pass. total = global_ctc + local_weight * local
/// + accent_weight * accent.
struct LossBundle {
  double global_ctc = 0.0;
  double local = 0.0;
  double accent = 0.0;
  double local_weight = 0.0;
  double accent_weight = 0.0;
  double total = 0.0;
  /// [L,N] mean per-expert CTC loss over the samples that selected the
  /// expert; NaN where no sample did.
  Tensor per_layer_per_expert;
};

/// total = global + beta * local + gamma * accent. Negative weights are a
/// configuration error.
LossBundle total_loss(double global_ctc, double local, double accent, double beta, double gamma);
Var total_loss(const Var& global_ctc, const Var& local, const Var& accent, double beta, double gamma);

struct MoeCtcLayerOutput {
  Var output;  // X + sum_j g~_j Proj(C_j)
  Var local;   // batch mean of sum_j g~_j L_ctc^(j); empty without targets
  /// [B,N] per-expert CTC loss; NaN for unselected experts or without targets.
  Tensor expert_losses;
};

/// One MoE-CTC layer. `targets` is empty at inference; otherwise it holds
/// one transcript per sample.
MoeCtcLayerOutput moectc_layer_forward(const Var& x, const RoutingState& routing, std::span<const Expert> experts,
                                       const ExpertHeadBank& heads, const Linear& projection, int layer,
                                       std::span<const Transcript* const> targets);

double local_loss_total(std::span<const double> per_layer);
Var local_loss_total(std::span<const Var> per_layer);

}  // namespace moectc
