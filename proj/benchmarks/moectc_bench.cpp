// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "moectc/ctc.hpp"
#include "moectc/model.hpp"
#include "moectc/ops.hpp"
#include "moectc/pipeline.hpp"
#include "moectc/rng.hpp"

namespace moectc {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

Tensor log_softmax_rows(Tensor t) {
  const auto rows = t.dim(0), cols = t.dim(1);
  for (std::int64_t i = 0; i < rows; ++i) {
    double m = -1e300, s = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) m = std::max(m, t.at(i, j));
    for (std::int64_t j = 0; j < cols; ++j) s += std::exp(t.at(i, j) - m);
    const double lse = m + std::log(s);
    for (std::int64_t j = 0; j < cols; ++j) t.at(i, j) -= lse;
  }
  return t;
}

void BM_CtcLoss(benchmark::State& state) {
  const auto T = state.range(0);
  Rng rng(1);
  const Tensor lp = log_softmax_rows(random_tensor({T, 29}, rng));
  Transcript y;
  for (std::int64_t u = 0; u < T / 3; ++u) y.push_back(1 + static_cast<int>(rng.index(28)));
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss(lp, y).loss);
  state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_CtcLoss)->Arg(50)->Arg(100)->Arg(200);

void BM_AffineForwardBackward(benchmark::State& state) {
  const auto D = state.range(0);
  Rng rng(2);
  Param w("w", random_tensor({D, D}, rng));
  Param b("b", Tensor({D}, 0.0));
  const Tensor x = random_tensor({100, D}, rng);
  for (auto _ : state) {
    w.grad = Tensor({D, D});
    b.grad = Tensor({D});
    backward(ops::sum(ops::affine(constant(x), param_var(w), param_var(b))));
    benchmark::DoNotOptimize(w.grad.data());
  }
}
BENCHMARK(BM_AffineForwardBackward)->Arg(32)->Arg(64)->Arg(128);

ModelConfig bench_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  return c;
}

void BM_ModelTrainStep(benchmark::State& state) {
  const auto variant = static_cast<Variant>(state.range(0));
  Model model(bench_config(variant), 1);
  Rng rng(3);
  std::vector<Tensor> feats;
  std::vector<Transcript> targets;
  for (int i = 0; i < 4; ++i) {
    feats.push_back(random_tensor({106, 16}, rng));
    targets.push_back(model.config().vocab.encode("a test of the moe layers"));
  }
  std::vector<UtteranceInput> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({&feats[static_cast<std::size_t>(i)], AccentLabel(i), &targets[static_cast<std::size_t>(i)]});
  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.accumulate_grads = true;
  opt.local_loss = variant == Variant::moe_ctc;
  opt.accent_bias = opt.accent_loss = supports_accent_stage(variant);
  opt.alpha = BiasStrength::finite(2.0);
  for (auto _ : state) {
    model.params().zero_grad();
    benchmark::DoNotOptimize(model.forward(batch, opt).losses->total);
  }
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ModelTrainStep)
    ->Arg(static_cast<int>(Variant::dense))
    ->Arg(static_cast<int>(Variant::moe))
    ->Arg(static_cast<int>(Variant::moe_ctc))
    ->Unit(benchmark::kMillisecond);

void BM_ModelInference(benchmark::State& state) {
  Model model(bench_config(Variant::moe_ctc), 1);
  Rng rng(4);
  const Tensor f = random_tensor({106, 16}, rng);
  std::vector<UtteranceInput> batch{{&f, std::nullopt, nullptr}};
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(batch, {}).log_probs.size());
}
BENCHMARK(BM_ModelInference)->Unit(benchmark::kMillisecond);

void BM_Wer(benchmark::State& state) {
  const std::string ref = "the quick brown fox jumps over the lazy dog near the river bank";
  const std::string hyp = "the quick brown box jump over lazy dog near a river bank today";
  for (auto _ : state) benchmark::DoNotOptimize(word_edit_distance(ref, hyp));
}
BENCHMARK(BM_Wer);

}  // namespace
}  // namespace moectc

BENCHMARK_MAIN();
