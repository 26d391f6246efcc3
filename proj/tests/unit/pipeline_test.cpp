// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "moectc/errors.hpp"
#include "moectc/pipeline.hpp"
#include "moectc/rng.hpp"

namespace moectc {
namespace {

TEST(AdamW, ZeroGradientWithoutDecayIsNoop) {
  Param p("w", Tensor::vector({1.5, -2.0}));
  p.grad = Tensor({2}, 0.0);
  AdamW opt({&p}, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  EXPECT_EQ(p.value, Tensor::vector({1.5, -2.0}));
}

TEST(AdamW, FirstStepIsLearningRate) {
  Param p("w", Tensor::vector({0.0}));
  p.grad = Tensor::vector({1.0});
  AdamW opt({&p}, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  EXPECT_NEAR(p.value[0], -0.1, 1e-8);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, MatchesScalarReferenceOver100Steps) {
  const AdamWOptions o{0.9, 0.999, 1e-8, 0.05};
  Param p("w", Tensor::vector({0.7, -1.3, 0.0}));
  AdamW opt({&p}, o);
  double x[3] = {0.7, -1.3, 0.0}, m[3] = {}, v[3] = {};
  Rng rng(8);
  for (int t = 1; t <= 100; ++t) {
    const double lr = 0.01 * (1.0 + 0.5 * std::sin(t));
    p.grad = Tensor({3});
    for (int i = 0; i < 3; ++i) {
      const double g = rng.normal() + 0.3 * x[i];
      p.grad[i] = g;
      x[i] -= lr * o.weight_decay * x[i];
      m[i] = o.beta1 * m[i] + (1 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1 - o.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(o.beta1, t));
      const double vh = v[i] / (1 - std::pow(o.beta2, t));
      x[i] -= lr * mh / (std::sqrt(vh) + o.eps);
    }
    opt.step(lr);
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.value[i], x[i], 1e-12);
}

TEST(LrSchedule, WarmupThenCosine) {
  const double lr = 1e-3;
  EXPECT_EQ(lr_schedule(0, 100, 10, lr), 0.0);
  EXPECT_NEAR(lr_schedule(5, 100, 10, lr), 5e-4, 1e-18);
  EXPECT_NEAR(lr_schedule(10, 100, 10, lr), lr, 1e-18);
  EXPECT_NEAR(lr_schedule(55, 100, 10, lr), 0.5 * lr, 1e-15);
  EXPECT_NEAR(lr_schedule(100, 100, 10, lr), 0.0, 1e-18);
  EXPECT_NEAR(lr_schedule(1, 100, 0, lr), lr * 0.5 * (1 + std::cos(M_PI / 100)), 1e-18);
  double prev = lr;
  for (int s = 10; s <= 100; ++s) {
    const double cur = lr_schedule(s, 100, 10, lr);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
  EXPECT_THROW(lr_schedule(1, 10, 10, lr), ConfigError);
}

TEST(Wer, Examples) {
  EXPECT_EQ(word_edit_distance("a b c", "a b c"), 0);
  EXPECT_EQ(word_edit_distance("a b c", "a x c"), 1);
  EXPECT_EQ(word_edit_distance("a b c", "a c"), 1);
  EXPECT_EQ(word_edit_distance("a b", "a b c d"), 2);
  EXPECT_EQ(word_edit_distance("kitten sat down", "sitting sat"), 2);
  EXPECT_NEAR(wer("one two three", "one too three"), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(wer("one two", ""), 1.0);
  EXPECT_EQ(word_count("  a  b\tc "), 3);
  EXPECT_THROW(wer("", "x"), InputError);
  EXPECT_THROW(wer("   ", "x"), InputError);
}

TEST(Averages, WeightedByUtteranceCount) {
  std::vector<AccentScore> s(2);
  s[0].count = 2;
  s[0].wer = 0.10;
  s[1].count = 1;
  s[1].wer = 0.40;
  const Averages a = average(s);
  EXPECT_NEAR(a.weighted, 0.20, 1e-15);
  EXPECT_NEAR(a.unweighted, 0.25, 1e-15);
  EXPECT_EQ(a.accents, 2);
  EXPECT_TRUE(std::isnan(average({}).weighted));
}

GenOptions tiny_corpus_options() {
  GenOptions g;
  g.utts_per_accent = 10;
  g.num_seen = 3;
  g.num_unseen = 2;
  g.d_input = 6;
  return g;
}

RunConfig tiny_run(Variant variant) {
  RunConfig c;
  c.seed = 4;
  c.model.variant = variant;
  c.model.d_model = 8;
  c.model.num_blocks = 2;
  c.model.d_input = 6;
  c.model.moe.num_experts = 3;
  c.model.moe.num_designated = 3;
  c.model.moe.insert_layers = {1, 2};
  c.train.batch_size = 4;
  c.train.stage1_epochs = 2;
  c.train.stage2_epochs = 1;
  c.train.agnostic_epochs = 2;
  return c;
}

class PipelineFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { corpus_ = new Corpus(gen_corpus(tiny_corpus_options())); }
  static void TearDownTestSuite() {
    delete corpus_;
    corpus_ = nullptr;
  }
  static Corpus* corpus_;
};
Corpus* PipelineFixture::corpus_ = nullptr;

TEST_F(PipelineFixture, OracleGatingIsIdentityAndSkipsUnseen) {
  const RunConfig c = tiny_run(Variant::moe_ctc);
  Model model(c.model, c.seed);
  for (auto* p : model.params().all())
    for (auto& v : p->value.values()) v += 0.2 * std::sin(3.0 * v + 1.0);
  const auto test = corpus_->select(Split::test);
  const EvalReport r = oracle_eval(model, test);
  EXPECT_TRUE(r.oracle);
  ASSERT_EQ(r.accents.size(), 3u);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("unseen"), std::string::npos);
  ASSERT_EQ(r.gating.size(), 2u);
  for (const auto& g : r.gating)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) EXPECT_EQ(g.at(i, j), i == j ? 1.0 : 0.0);
  for (double acc : r.routing_accuracy) EXPECT_EQ(acc, 1.0);
  EXPECT_EQ(r.unseen.accents, 0);

  std::vector<const Utterance*> unseen_only;
  for (const auto* u : test)
    if (!u->seen()) unseen_only.push_back(u);
  const EvalReport empty = oracle_eval(model, unseen_only);
  EXPECT_TRUE(empty.accents.empty());
  EXPECT_FALSE(empty.warnings.empty());
}

TEST_F(PipelineFixture, LabelFreeReportShape) {
  const RunConfig c = tiny_run(Variant::moe);
  Model model(c.model, c.seed);
  const auto test = corpus_->select(Split::test);
  const EvalReport r = evaluate(model, test);
  ASSERT_EQ(r.accents.size(), 5u);
  EXPECT_EQ(r.seen.accents, 3);
  EXPECT_EQ(r.unseen.accents, 2);
  EXPECT_EQ(r.hypotheses.size(), test.size());
  for (const auto& g : r.gating) {
    ASSERT_EQ(g.dim(0), 5);
    for (int i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 3; ++j) sum += g.at(i, j);
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
  const std::string csv = wer_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_THROW(gating_csv(r, 2), ConfigError);
  EXPECT_NO_THROW(gating_csv(r, 1));
}

TEST(StagePlan, LossMasksPerVariant) {
  RunConfig c = tiny_run(Variant::moe_ctc);
  c.train.stage1_epochs = 6;
  c.train.stage2_epochs = 3;
  c.train.agnostic_epochs = 9;
  const StagePlan aware = make_stage_plan(c, Stage::aware, false);
  EXPECT_EQ(aware.epochs, 6);
  EXPECT_TRUE(aware.accent_bias && aware.accent_loss && aware.local_loss);
  EXPECT_EQ(aware.alpha, c.model.moe.alpha);
  const StagePlan after = make_stage_plan(c, Stage::agnostic, true);
  EXPECT_EQ(after.epochs, 3);
  EXPECT_EQ(after.lr, c.train.stage2_lr);
  EXPECT_FALSE(after.accent_bias || after.accent_loss);
  EXPECT_FALSE(after.alpha.active());
  EXPECT_TRUE(after.local_loss);
  EXPECT_EQ(make_stage_plan(c, Stage::agnostic, false).epochs, 9);

  c.model.variant = Variant::accent_moe;
  EXPECT_FALSE(make_stage_plan(c, Stage::aware, false).local_loss);
  EXPECT_TRUE(make_stage_plan(c, Stage::aware, false).accent_loss);
  const StagePlan am2 = make_stage_plan(c, Stage::agnostic, true);
  EXPECT_FALSE(am2.local_loss || am2.accent_loss || am2.accent_bias);

  for (Variant v : {Variant::dense, Variant::moe, Variant::inter_ctc}) {
    c.model.variant = v;
    EXPECT_THROW(make_stage_plan(c, Stage::aware, false), ConfigError);
    EXPECT_EQ(make_stage_plan(c, Stage::agnostic, false).local_loss, v == Variant::inter_ctc);
  }
}

TEST_F(PipelineFixture, ZeroEpochsReturnsInitialParameters) {
  RunConfig c = tiny_run(Variant::moe_ctc);
  c.train.stage1_epochs = 0;
  Model model(c.model, c.seed);
  Model reference(c.model, c.seed);
  const StageResult r = train_stage(model, c, *corpus_, make_stage_plan(c, Stage::aware, false));
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.best.epoch, 0);
  EXPECT_TRUE(bitwise_equal(r.best, capture(reference, c, "aware", 0, r.best.dev_wer)));
}

TEST_F(PipelineFixture, TrainingIsBitwiseDeterministic) {
  const RunConfig c = tiny_run(Variant::moe_ctc);
  auto run = [&] {
    Model model(c.model, c.seed);
    train_stage(model, c, *corpus_, make_stage_plan(c, Stage::aware, false));
    return train_stage(model, c, *corpus_, make_stage_plan(c, Stage::agnostic, true));
  };
  const StageResult a = run();
  const StageResult b = run();
  EXPECT_TRUE(bitwise_equal(a.best, b.best));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST_F(PipelineFixture, EpochLogsAndBestSelection) {
  RunConfig c = tiny_run(Variant::moe_ctc);
  c.train.stage1_epochs = 3;
  Model model(c.model, c.seed);
  std::vector<EpochLog> seen;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& l) { seen.push_back(l); };
  const StageResult r = train_stage(model, c, *corpus_, make_stage_plan(c, Stage::aware, false), opts);
  ASSERT_EQ(seen.size(), 3u);
  ASSERT_EQ(r.log.size(), 3u);
  double best = 1e300;
  int best_epoch = 0;
  for (const auto& l : r.log) {
    EXPECT_EQ(l.stage, Stage::aware);
    EXPECT_TRUE(std::isfinite(l.loss));
    EXPECT_GT(l.accent, 0.0);
    EXPECT_GT(l.local, 0.0);
    if (l.dev_wer < best) {
      best = l.dev_wer;
      best_epoch = l.epoch;
    }
  }
  EXPECT_EQ(r.best.epoch, best_epoch);
  EXPECT_EQ(r.best.stage, "aware");
  EXPECT_TRUE(bitwise_equal(capture(model, c, "aware", r.best.epoch, r.best.dev_wer), r.best));
}

TEST_F(PipelineFixture, AgnosticStageIgnoresAccentTerms) {
  const RunConfig c = tiny_run(Variant::moe_ctc);
  Model model(c.model, c.seed);
  const StageResult r = train_stage(model, c, *corpus_, make_stage_plan(c, Stage::agnostic, true));
  for (const auto& l : r.log) {
    EXPECT_EQ(l.accent, 0.0);
    EXPECT_GT(l.local, 0.0);
  }
}

TEST_F(PipelineFixture, RejectsUnusableTrainingData) {
  const RunConfig c = tiny_run(Variant::moe_ctc);
  Model model(c.model, c.seed);
  Corpus no_features = *corpus_;
  for (auto& u : no_features.utterances) u.features = Tensor();
  EXPECT_THROW(train_stage(model, c, no_features, make_stage_plan(c, Stage::aware, false)), InputError);
  Corpus bad_dim = *corpus_;
  for (auto& u : bad_dim.utterances) u.features = Tensor({u.features.dim(0), 5});
  EXPECT_ANY_THROW(train_stage(model, c, bad_dim, make_stage_plan(c, Stage::aware, false)));
}

TEST(Training, DenseFitsFiftyUtterances) {
  GenOptions g;
  g.utts_per_accent = 10;
  const Corpus corpus = gen_corpus(g);
  RunConfig c;
  c.seed = 3;
  c.model.variant = Variant::dense;
  c.train.agnostic_epochs = 200;
  Model model(c.model, c.seed);
  const StageResult r = train_stage(model, c, corpus, make_stage_plan(c, Stage::agnostic, false));
  const auto train = corpus.select(Split::train);
  ASSERT_EQ(train.size(), 50u);
  const EvalReport report = evaluate(model, train);
  EXPECT_LT(report.seen.weighted, 0.10);
  EXPECT_LE(report.seen.weighted, r.best.dev_wer);
}

}  // namespace
}  // namespace moectc
