// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "moectc/errors.hpp"
#include "moectc/grad_check.hpp"
#include "moectc/model.hpp"
#include "moectc/ops.hpp"
#include "test_util.hpp"

namespace moectc {
namespace {

using testing::random_tensor;

ModelConfig small_config(Variant variant) {
  ModelConfig c;
  c.d_model = 6;
  c.num_blocks = 3;
  c.d_input = 4;
  c.variant = variant;
  c.moe.num_experts = 3;
  c.moe.top_k = 2;
  c.moe.num_designated = 3;
  c.moe.insert_layers = {1, 3};
  return c;
}

struct Batch {
  std::vector<Tensor> feats;
  std::vector<Transcript> targets;
  std::vector<UtteranceInput> inputs;

  Batch(std::uint64_t seed, std::vector<std::int64_t> frames, std::vector<Transcript> ys, std::vector<AccentLabel> acc,
        std::int64_t d_input = 4)
      : targets(std::move(ys)) {
    Rng rng(seed);
    for (auto t : frames) feats.push_back(random_tensor({t, d_input}, rng));
    for (std::size_t i = 0; i < feats.size(); ++i) inputs.push_back({&feats[i], acc[i], &targets[i]});
  }
};

void perturb(Model& m, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto* p : m.params().all())
    for (auto& v : p->value.values()) v += scale * rng.normal();
}

TEST(Variant, ParseRoundTrip) {
  for (auto v : {Variant::dense, Variant::inter_ctc, Variant::moe, Variant::accent_moe, Variant::moe_ctc})
    EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("conformer"), ConfigError);
}

TEST(ModelConfig, Validation) {
  auto c = small_config(Variant::moe_ctc);
  EXPECT_NO_THROW(c.validate());
  c.moe.insert_layers = {1, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(Variant::moe);
  c.subsample = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Model(c, 1), ConfigError);
}

TEST(EncoderBlock, ZeroOutputWeightsGiveIdentity) {
  ParamStore store;
  auto block = create_encoder_block(store, "blocks.1", 5, 3);
  block.ffn2.weight->value.fill(0.0);
  Rng rng(1);
  const Tensor x = random_tensor({2, 4, 5}, rng);
  std::vector<std::int64_t> len{4, 2};
  auto y = encoder_block_forward(constant(x), block, len);
  EXPECT_TRUE(bitwise_equal(y.value(), x));
}

TEST(EncoderBlock, TwoBlockStackGradient) {
  ParamStore store;
  auto b1 = create_encoder_block(store, "blocks.1", 3, 4);
  auto b2 = create_encoder_block(store, "blocks.2", 3, 4);
  Rng rng(2);
  for (auto* p : store.all()) p->value.add_(random_tensor(p->value.shape(), rng, 0.3));
  const Tensor x = random_tensor({2, 5, 3}, rng);
  const Tensor w = random_tensor({30, 1}, rng);
  std::vector<std::int64_t> len{5, 3};
  auto build = [&] {
    Var y = encoder_block_forward(encoder_block_forward(constant(x), b1, len), b2, len);
    EXPECT_EQ(y.shape(), x.shape());
    return ops::sum(ops::affine(ops::reshape(y, {1, 30}), constant(w), constant(Tensor({1}, 0.0))));
  };
  auto params = store.all();
  auto report = grad_check(build, params, {.step = 1e-5, .tolerance = 1e-5, .abs_floor = 1e-5});
  EXPECT_TRUE(report.passed) << report.diagnostic << " max rel " << report.max_rel_error;
}

TEST(Model, ParameterNamesUniqueAndPrefixed) {
  Model m(small_config(Variant::moe_ctc), 7);
  std::set<std::string> names;
  for (const auto* p : m.params().all()) {
    EXPECT_TRUE(names.insert(p->name).second) << p->name;
    const bool known = p->name.starts_with("frontend.") || p->name.starts_with("blocks.") ||
                       p->name.starts_with("moe.") || p->name.starts_with("head.");
    EXPECT_TRUE(known) << p->name;
  }
  EXPECT_NE(m.params().find("moe.2.proj.weight"), nullptr);
  EXPECT_NE(m.params().find("moe.1.heads.2.weight"), nullptr);
  EXPECT_EQ(m.num_moe_layers(), 2);
}

TEST(Model, OutputLengthIsCeilHalf) {
  for (int sub : {1, 2}) {
    auto c = small_config(Variant::moe_ctc);
    c.subsample = sub;
    Model m(c, 3);
    for (std::int64_t T : {1, 2, 5, 8, 11}) {
      Rng rng(static_cast<std::uint64_t>(T));
      Tensor f = random_tensor({T, 4}, rng);
      std::vector<UtteranceInput> in{{&f, std::nullopt, nullptr}};
      auto r = m.forward(in, {});
      EXPECT_EQ(r.log_probs[0].dim(0), (T + sub - 1) / sub);
      EXPECT_EQ(r.log_probs[0].dim(1), 29);
      EXPECT_EQ(m.output_frames(T), (T + sub - 1) / sub);
      EXPECT_FALSE(r.losses);
    }
  }
}

TEST(Model, DenseIdentityBlockIsHeadOfFrontend) {
  auto c = small_config(Variant::dense);
  c.num_blocks = 1;
  c.moe.insert_layers = {1};
  Model m(c, 5);
  m.params().find("blocks.1.ffn2.weight")->value.fill(0.0);
  Rng rng(3);
  Tensor f = random_tensor({6, 4}, rng);
  std::vector<UtteranceInput> in{{&f, std::nullopt, nullptr}};
  auto r = m.forward(in, {});
  // Oracle: stack pairs of frames, apply frontend and head by hand.
  const Tensor& fw = m.params().find("frontend.weight")->value;
  const Tensor& fb = m.params().find("frontend.bias")->value;
  const Tensor& hw = m.params().find("head.weight")->value;
  const Tensor& hb = m.params().find("head.bias")->value;
  for (std::int64_t t = 0; t < 3; ++t) {
    std::vector<double> hidden(6), logits(29);
    for (std::int64_t d = 0; d < 6; ++d) {
      double s = fb[d];
      for (std::int64_t k = 0; k < 8; ++k) s += f[(2 * t + k / 4) * 4 + k % 4] * fw.at(k, d);
      hidden[static_cast<std::size_t>(d)] = s;
    }
    double mx = -1e300;
    for (std::int64_t v = 0; v < 29; ++v) {
      double s = hb[v];
      for (std::int64_t d = 0; d < 6; ++d) s += hidden[static_cast<std::size_t>(d)] * hw.at(d, v);
      logits[static_cast<std::size_t>(v)] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    for (std::int64_t v = 0; v < 29; ++v)
      EXPECT_NEAR(r.log_probs[0].at(t, v), logits[static_cast<std::size_t>(v)] - mx - std::log(z), 1e-12);
  }
}

TEST(Model, MoeCtcMatchesMoeAtInitialization) {
  Model a(small_config(Variant::moe_ctc), 11);
  Model b(small_config(Variant::moe), 11);
  Batch batch(4, {7, 10}, {{1, 2}, {3, 4, 5}}, {0, 2});
  for (bool bias : {false, true}) {
    ForwardOptions opt;
    opt.accent_bias = bias;
    opt.alpha = BiasStrength::finite(2.0);
    auto ra = a.forward(batch.inputs, opt);
    auto rb = b.forward(batch.inputs, opt);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_TRUE(bitwise_equal(ra.log_probs[i], rb.log_probs[i]));
  }
}

TEST(Model, DenseModelUnchangedByIdentityMoeCtcInsertion) {
  Model dense(small_config(Variant::dense), 12);
  Model mc(small_config(Variant::moe_ctc), 12);
  Batch batch(5, {6}, {{7}}, {1});
  auto rd = dense.forward(batch.inputs, {});
  auto rm = mc.forward(batch.inputs, {});
  EXPECT_TRUE(bitwise_equal(rd.log_probs[0], rm.log_probs[0]));
}

TEST(Model, InterCtcWithZeroLambdaEqualsDense) {
  auto ci = small_config(Variant::inter_ctc);
  ci.inter_lambda = 0.0;
  Model inter(ci, 13);
  Model dense(small_config(Variant::dense), 13);
  Batch batch(6, {8, 9}, {{1, 1}, {2, 3}}, {0, 1});
  ForwardOptions opt;
  opt.local_loss = true;
  auto ri = inter.forward(batch.inputs, opt);
  auto rd = dense.forward(batch.inputs, opt);
  ASSERT_TRUE(ri.losses && rd.losses);
  EXPECT_EQ(ri.losses->total, rd.losses->total);
  EXPECT_GT(ri.losses->local, 0.0);

  ci.inter_lambda = 0.3;
  Model inter2(ci, 13);
  auto r2 = inter2.forward(batch.inputs, opt);
  EXPECT_NEAR(r2.losses->total, r2.losses->global_ctc + 0.3 * r2.losses->local, 1e-12);
}

TEST(Model, LossBundleComposition) {
  auto c = small_config(Variant::moe_ctc);
  Model m(c, 14);
  perturb(m, 1, 0.2);
  Batch batch(7, {8, 9, 6}, {{1}, {2, 3}, {4}}, {0, 1, 2});
  ForwardOptions opt;
  opt.accent_bias = true;
  opt.alpha = BiasStrength::finite(2.0);
  opt.accent_loss = true;
  opt.local_loss = true;
  auto r = m.forward(batch.inputs, opt);
  ASSERT_TRUE(r.losses);
  const auto& L = *r.losses;
  EXPECT_DOUBLE_EQ(L.local_weight, 1.0 / (2.0 * 2 * 3));
  EXPECT_DOUBLE_EQ(L.accent_weight, 0.1);
  EXPECT_NEAR(L.total, L.global_ctc + L.local_weight * L.local + L.accent_weight * L.accent, 1e-12);
  EXPECT_GT(L.local, 0.0);
  EXPECT_GT(L.accent, 0.0);
  EXPECT_EQ(L.per_layer_per_expert.shape(), (Shape{2, 3}));
  ASSERT_EQ(r.routing.size(), 2u);
  for (const auto& layer : r.routing) {
    ASSERT_EQ(layer.size(), 3u);
    for (const auto& rec : layer) {
      double s = 0.0;
      for (double g : rec.gates) s += g;
      EXPECT_NEAR(s, 1.0, 1e-9);
      EXPECT_EQ(rec.selected.size(), 2u);
    }
  }
  // Stage-2 style: no bias, no accent term.
  ForwardOptions s2;
  s2.local_loss = true;
  auto r2 = m.forward(batch.inputs, s2);
  EXPECT_EQ(r2.losses->accent, 0.0);
  EXPECT_EQ(r2.losses->accent_weight, 0.0);
}

TEST(Model, TrainModeRequiresTargetsAndLabels) {
  Model m(small_config(Variant::moe_ctc), 15);
  Rng rng(8);
  Tensor f = random_tensor({6, 4}, rng);
  std::vector<UtteranceInput> no_target{{&f, 1, nullptr}};
  ForwardOptions train;
  train.mode = Mode::train;
  EXPECT_THROW(m.forward(no_target, train), PipelineError);
  Transcript y{1};
  std::vector<UtteranceInput> no_label{{&f, std::nullopt, &y}};
  train.accent_loss = true;
  EXPECT_THROW(m.forward(no_label, train), PipelineError);
  Tensor wrong = random_tensor({6, 5}, rng);
  std::vector<UtteranceInput> bad_dims{{&wrong, std::nullopt, nullptr}};
  EXPECT_THROW(m.forward(bad_dims, {}), ConfigError);
}

TEST(Model, InfiniteBiasRoutesToDesignatedExpert) {
  Model m(small_config(Variant::moe_ctc), 16);
  Batch batch(9, {6, 7, 8}, {{1}, {2}, {3}}, {0, 1, 2});
  ForwardOptions opt;
  opt.accent_bias = true;
  opt.alpha = BiasStrength::inf();
  auto r = m.forward(batch.inputs, opt);
  for (const auto& layer : r.routing)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(layer[i].selected[0], static_cast<int>(i));
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(layer[i].gates[j], i == j ? 1.0 : 0.0);
    }
}

TEST(Model, ForwardIsDeterministic) {
  Batch batch(10, {9, 5}, {{1, 2}, {3}}, {0, 1});
  ForwardOptions opt;
  opt.local_loss = true;
  opt.accent_loss = true;
  opt.accent_bias = true;
  opt.alpha = BiasStrength::finite(2.0);
  Model a(small_config(Variant::moe_ctc), 17);
  Model b(small_config(Variant::moe_ctc), 17);
  auto ra = a.forward(batch.inputs, opt);
  auto rb = b.forward(batch.inputs, opt);
  EXPECT_EQ(ra.losses->total, rb.losses->total);
  EXPECT_TRUE(bitwise_equal(ra.log_probs[1], rb.log_probs[1]));
}

TEST(Model, FullLossGradientMatchesFiniteDifferences) {
  auto c = small_config(Variant::moe_ctc);
  c.d_model = 4;
  c.num_blocks = 2;
  c.moe.insert_layers = {1, 2};
  Model m(c, 18);
  perturb(m, 2, 0.3);
  Batch batch(11, {8, 6}, {{1, 2}, {3}}, {0, 2});
  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.accent_bias = true;
  opt.alpha = BiasStrength::finite(2.0);
  opt.accent_loss = true;
  opt.local_loss = true;
  auto loss = [&] {
    auto o = opt;
    o.accumulate_grads = false;
    return m.forward(batch.inputs, o).losses->total;
  };
  auto grads = [&] {
    auto o = opt;
    o.accumulate_grads = true;
    m.forward(batch.inputs, o);
  };
  auto params = m.params().all();
  auto report = grad_check(loss, grads, params, {.step = 1e-5, .tolerance = 1e-4, .max_entries_per_param = 3, .seed = 4});
  EXPECT_TRUE(report.passed) << report.diagnostic << " max rel " << report.max_rel_error;
  EXPECT_GE(report.entries.size(), 100u);
}

TEST(ParamCounts, ByModuleAndMode) {
  ParamStore store;
  EXPECT_EQ(Linear::create(store, "x", 2, 3, 0).num_params(), 9);

  Model dense(small_config(Variant::dense), 1);
  auto cd = count_params(dense);
  EXPECT_EQ(cd.routers + cd.experts + cd.expert_heads + cd.projections, 0);
  EXPECT_EQ(cd.total, cd.frontend + cd.encoder + cd.global_head);

  const std::int64_t D = 6, V = 29, N = 3, L = 2;
  auto full_cfg = small_config(Variant::moe_ctc);
  auto lw_cfg = full_cfg;
  lw_cfg.moe.head_sharing = HeadSharing::layer_wise;
  auto gl_cfg = full_cfg;
  gl_cfg.moe.head_sharing = HeadSharing::global;
  Model full(full_cfg, 1), lw(lw_cfg, 1), gl(gl_cfg, 1);
  auto cf = count_params(full), cl = count_params(lw), cg = count_params(gl);
  EXPECT_EQ(cf.total - cl.total, (N - 1) * L * (D * V + V));
  EXPECT_EQ(cf.expert_heads, L * N * (D * V + V));
  EXPECT_EQ(cl.expert_heads, L * (D * V + V));
  EXPECT_EQ(cg.expert_heads, 0);
  EXPECT_EQ(cf.projections, L * (V * D + D));
  EXPECT_EQ(cf.routers, L * (D * N + N));
  EXPECT_EQ(cf.total, cf.frontend + cf.encoder + cf.routers + cf.experts + cf.expert_heads + cf.projections +
                          cf.global_head);
  std::int64_t module_sum = 0;
  for (const auto& [_, n] : cf.per_module) module_sum += n;
  EXPECT_EQ(module_sum, cf.total);
  EXPECT_EQ(cf.per_module.at("moe.1"), cf.per_module.at("moe.2"));
}

TEST(SpareExperts, IdentityWhenDisabled) {
  MoeConfig moe;
  auto s = configure_spare_experts(moe, 3);
  EXPECT_TRUE(s.identity());
  for (int a = 0; a < 5; ++a) EXPECT_EQ(s(a, "utt" + std::to_string(a)), a);
  EXPECT_EQ(s(std::nullopt, "x"), std::nullopt);
}

TEST(SpareExperts, MonteCarloShare) {
  SpareExpertSampler s(5, 8, 0.2, 42);
  int spare = 0;
  std::array<int, 8> hits{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    auto t = s(i % 5, "utt-" + std::to_string(i));
    ASSERT_TRUE(t);
    ++hits[static_cast<std::size_t>(*t)];
    if (*t >= 5) ++spare;
    else EXPECT_EQ(*t, i % 5);
  }
  EXPECT_NEAR(static_cast<double>(spare) / draws, 0.2, 0.01);
  for (int j = 5; j < 8; ++j) EXPECT_NEAR(hits[static_cast<std::size_t>(j)] / static_cast<double>(spare), 1.0 / 3, 0.02);
}

TEST(SpareExperts, DeterministicAndValidated) {
  SpareExpertSampler a(5, 8, 0.2, 7), b(5, 8, 0.2, 7);
  for (int i = 0; i < 200; ++i) {
    const std::string id = "u" + std::to_string(i);
    EXPECT_EQ(a(i % 5, id), b(i % 5, id));
    EXPECT_EQ(a(i % 5, id), a(i % 5, id));
  }
  EXPECT_THROW(SpareExpertSampler(5, 5, 0.2, 0), ConfigError);
  EXPECT_THROW(SpareExpertSampler(5, 8, 1.5, 0), ConfigError);
}

}  // namespace
}  // namespace moectc
