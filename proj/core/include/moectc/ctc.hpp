// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moectc/autograd.hpp"
#include "moectc/tensor.hpp"

namespace moectc {

/// Label sequence over vocabulary indices; never contains the blank.
using Transcript = std::vector<int>;

/// Ordered output units. Index 0 is always the CTC blank.
class Vocabulary {
 public:
  static constexpr int kBlank = 0;

  /// `symbols[0]` names the blank; the rest must be unique single units.
  explicit Vocabulary(std::vector<std::string> symbols);
  /// blank, a-z, space, apostrophe (29 units).
  static Vocabulary characters();

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int index) const { return symbols_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  /// Maps each character of `text` to its index; throws InputError on
  /// characters outside the vocabulary.
  Transcript encode(std::string_view text) const;
  std::string decode(std::span<const int> labels) const;
  /// Throws InputError if any label is blank or out of range.
  void validate(std::span<const int> labels) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> symbols_;
};

inline constexpr double kInfeasibleSentinel = 1e4;

struct CtcResult {
  /// -log p(target | log_probs); +infinity when no alignment exists.
  double loss = 0.0;
  bool feasible = true;
  /// [T,V] label occupancy probabilities (zeros when infeasible).
  Tensor posteriors;
  /// [T,V] d loss / d logits, assuming log_probs = log_softmax(logits).
  Tensor grad_logits;
};

/// Minimum number of frames an alignment of `target` needs: U plus one per
/// pair of equal adjacent labels.
std::int64_t min_frames(std::span<const int> target);

/// Log-space forward-backward over the blank-extended target.
/// `log_probs` is [T,V] and must hold normalized log-probabilities.
CtcResult ctc_loss(const Tensor& log_probs, std::span<const int> target);

/// Enumerates all V^T paths. Refuses instances with V^T > 1e7.
double ctc_brute_force(const Tensor& log_probs, std::span<const int> target);

/// Merges adjacent duplicates, then drops blanks.
Transcript collapse(std::span<const int> path);

/// Per-frame argmax (ties to the lowest index) followed by collapse.
Transcript greedy_decode(const Tensor& log_probs);

/// Graph op: per-utterance CTC loss from raw logits [T,V] (or [1,T,V]).
/// Infeasible targets yield kInfeasibleSentinel with zero gradient and a
/// warning on stderr; `feasible` reports which case occurred.
Var ctc_loss_op(const Var& logits, std::span<const int> target, bool* feasible = nullptr);

}  // namespace moectc
