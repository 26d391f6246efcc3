// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moectc/checkpoint.hpp"
#include "moectc/config.hpp"
#include "moectc/data.hpp"
#include "moectc/model.hpp"

namespace moectc {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adaptive moments with bias correction and decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<Param*> params, AdamWOptions options);
  /// One update from the current Param::grad values.
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Param*> params_;
  AdamWOptions options_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

/// Linear warmup to lr_max, then cosine decay to zero at total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double lr_max);

/// Word-level Levenshtein distance.
std::int64_t word_edit_distance(std::string_view ref, std::string_view hyp);
std::int64_t word_count(std::string_view text);
/// Edit distance over reference length. Empty references are InputErrors.
double wer(std::string_view ref, std::string_view hyp);

struct AccentScore {
  std::string name;
  int index = -1;  // -1 unseen
  std::int64_t count = 0;
  std::int64_t edits = 0;
  std::int64_t words = 0;
  double wer = 0.0;  // edits / words over the accent's utterances
};

struct Averages {
  double weighted = 0.0;    // sum count*WER / sum count
  double unweighted = 0.0;  // plain mean over accents
  int accents = 0;
};

Averages average(std::span<const AccentScore> scores);

struct EvalReport {
  bool oracle = false;
  std::vector<AccentScore> accents;  // seen accents in index order, then unseen
  Averages seen;
  Averages unseen;
  /// Per MoE layer top-1 routing accuracy against designated experts, over
  /// seen-accent utterances; NaN without such utterances.
  std::vector<double> routing_accuracy;
  /// Per MoE layer [accents, N] mean gate vectors, rows ordered as `accents`.
  std::vector<Tensor> gating;
  std::vector<std::string> warnings;
  std::vector<std::string> hypotheses;  // per evaluated utterance, input order
};

struct EvalOptions {
  /// Route labelled utterances with a hard mask; unseen accents are skipped.
  bool oracle = false;
  int batch_size = 16;
};

/// Greedy-decodes every utterance; accent labels are withheld unless
/// `oracle` is set.
EvalReport evaluate(Model& model, std::span<const Utterance* const> utterances, const EvalOptions& options = {});
EvalReport oracle_eval(Model& model, std::span<const Utterance* const> utterances);

std::string format_report(const EvalReport& report);
std::string wer_csv(const EvalReport& report);
std::string gating_csv(const EvalReport& report, int layer);

enum class Stage { aware, agnostic };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct StagePlan {
  Stage stage = Stage::agnostic;
  int epochs = 0;
  double lr = 0.0;
  bool accent_bias = false;
  BiasStrength alpha = BiasStrength::finite(0.0);
  bool accent_loss = false;
  bool local_loss = false;
};

/// Loss mask and budget of one stage. `after_aware` selects the fine-tuning
/// budget for the agnostic stage of a two-stage run.
StagePlan make_stage_plan(const RunConfig& config, Stage stage, bool after_aware);

struct EpochLog {
  Stage stage = Stage::agnostic;
  int epoch = 0;
  double loss = 0.0;
  double global_ctc = 0.0;
  double local = 0.0;
  double accent = 0.0;
  double dev_wer = 0.0;
  double routing_accuracy = 0.0;  // final MoE layer on dev, label-free; NaN without MoE
  double seconds = 0.0;
};

struct StageResult {
  Checkpoint best;
  std::vector<EpochLog> log;
};

struct TrainOptions {
  std::function<void(const EpochLog&)> on_epoch;
};

/// Trains one stage on the train split and selects the epoch with the lowest
/// dev WER (earliest on ties); the model holds the best parameters on
/// return. With zero epochs the initial parameters are returned.
StageResult train_stage(Model& model, const RunConfig& config, const Corpus& corpus, const StagePlan& plan,
                        const TrainOptions& options = {});

/// Transcripts of every utterance, encoded once.
std::vector<Transcript> encode_targets(const Vocabulary& vocab, std::span<const Utterance* const> utterances);

}  // namespace moectc
