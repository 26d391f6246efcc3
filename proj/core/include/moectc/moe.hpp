// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moectc/autograd.hpp"
#include "moectc/layers.hpp"

namespace moectc {

/// Accent index of an utterance, or nullopt when withheld.
using AccentLabel = std::optional<int>;

/// Strength of the accent bias on the router logits. The infinite strength
/// is a hard routing mask, not an arithmetic infinity.
struct BiasStrength {
  double value = 0.0;
  bool infinite = false;

  static BiasStrength finite(double v) { return {v, false}; }
  static BiasStrength inf() { return {0.0, true}; }
  bool active() const { return infinite || value != 0.0; }

  /// "inf" or a decimal number.
  static BiasStrength parse(const std::string& text);
  std::string to_string() const;

  friend bool operator==(const BiasStrength&, const BiasStrength&) = default;
};

enum class HeadSharing { full_separation, layer_wise, global };

HeadSharing parse_head_sharing(const std::string& text);
std::string to_string(HeadSharing mode);

struct MoeConfig {
  int num_experts = 5;
  int top_k = 2;
  BiasStrength alpha = BiasStrength::finite(2.0);
  /// Local-loss weight; nullopt means 1 / (2 * L * N).
  std::optional<double> beta;
  double gamma = 0.1;
  /// 1-based encoder block indices after which an MoE layer is applied.
  std::vector<int> insert_layers{2, 4, 6};
  HeadSharing head_sharing = HeadSharing::full_separation;
  /// Accents with a designated expert (accent a -> expert a).
  int num_designated = 5;
  /// Share of stage-1 utterances whose bias target is a random spare expert.
  double spare_fraction = 0.0;

  int num_layers() const { return static_cast<int>(insert_layers.size()); }
  double effective_beta() const;
  void validate(int num_blocks) const;

  friend bool operator==(const MoeConfig&, const MoeConfig&) = default;
};

/// FFN2(ReLU(FFN1(x))), both D x D.
struct Expert {
  Linear ffn1;
  Linear ffn2;
};

/// Per-utterance routing decisions for a batch.
struct RoutingState {
  Var logits;         // [B,N] router output on the pooled input
  Var biased_logits;  // [B,N]; equals logits on forced or unbiased rows
  Var gates;          // [B,N] softmax of biased logits, one-hot on forced rows
  std::vector<std::vector<int>> selected;  // top-K indices per sample, by descending gate
  Var renorm_gates;   // [B,N], zero outside `selected`
  std::vector<bool> forced;                // rows routed by the hard mask

  std::int64_t batch() const { return gates.dim(0); }
  std::int64_t num_experts() const { return gates.dim(1); }
};

struct TopK {
  std::vector<std::vector<int>> selected;
  Var renorm_gates;
};

/// Keeps the K largest gates per row (ties to the lower index) and rescales
/// them to sum to one. Gradients flow through the kept entries only.
TopK top_k_renormalize(const Var& gates, int k);

/// Mean-pools H over valid frames, applies the router, adds alpha to the
/// designated expert's logit for labelled samples, softmaxes, then top-K.
/// With alpha infinite, labelled samples get an exact one-hot gate.
RoutingState route(const Var& h, std::span<const std::int64_t> lengths, const Linear& router,
                   std::span<const AccentLabel> accents, BiasStrength alpha, int top_k);

Var expert_forward(const Var& x, const Expert& expert);

/// Sum over selected experts of renormalized gate times expert output.
/// Unselected experts are never evaluated.
Var moe_combine(const Var& x, const RoutingState& routing, std::span<const Expert> experts);

/// Batch mean of -log softmax(g_i)[a_i], treating the gate vector itself as
/// logits. Every sample must carry a label.
Var accent_loss(const RoutingState& routing, std::span<const AccentLabel> accents);

}  // namespace moectc
