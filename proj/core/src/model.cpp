// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moectc/errors.hpp"
#include "moectc/ops.hpp"

namespace moectc {

Variant parse_variant(const std::string& text) {
  if (text == "dense") return Variant::dense;
  if (text == "inter_ctc") return Variant::inter_ctc;
  if (text == "moe") return Variant::moe;
  if (text == "accent_moe") return Variant::accent_moe;
  if (text == "moe_ctc") return Variant::moe_ctc;
  throw ConfigError("unknown variant '" + text + "' (dense, inter_ctc, moe, accent_moe, moe_ctc)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::dense: return "dense";
    case Variant::inter_ctc: return "inter_ctc";
    case Variant::moe: return "moe";
    case Variant::accent_moe: return "accent_moe";
    case Variant::moe_ctc: return "moe_ctc";
  }
  return "?";
}

bool has_moe_layers(Variant v) { return v == Variant::moe || v == Variant::accent_moe || v == Variant::moe_ctc; }

bool supports_accent_stage(Variant v) { return v == Variant::accent_moe || v == Variant::moe_ctc; }

void ModelConfig::validate() const {
  if (d_model < 1 || num_blocks < 1 || d_input < 1) throw ConfigError("model dimensions must be positive");
  if (subsample != 1 && subsample != 2) throw ConfigError("subsample must be 1 or 2");
  if (inter_lambda < 0.0) throw ConfigError("inter_lambda must be >= 0");
  if (variant != Variant::dense) moe.validate(num_blocks);
}

EncoderBlock create_encoder_block(ParamStore& store, const std::string& name, std::int64_t d_model,
                                  std::uint64_t seed) {
  EncoderBlock b;
  b.ln_gain = &store.add(name + ".ln.gain", Tensor({d_model}, 1.0));
  b.ln_shift = &store.add(name + ".ln.shift", Tensor({d_model}, 0.0));
  Tensor kernel({kConvKernel, d_model});
  init_uniform(kernel, fan_balanced_bound(kConvKernel, kConvKernel), seed, name + ".conv.kernel");
  b.conv_kernel = &store.add(name + ".conv.kernel", std::move(kernel));
  b.conv_bias = &store.add(name + ".conv.bias", Tensor({d_model}, 0.0));
  b.ffn1 = Linear::create(store, name + ".ffn1", d_model, d_model, seed);
  b.ffn2 = Linear::create(store, name + ".ffn2", d_model, d_model, seed);
  return b;
}

Var encoder_block_forward(const Var& x, const EncoderBlock& block, std::span<const std::int64_t> lengths) {
  Var h = ops::layer_norm(x, param_var(*block.ln_gain), param_var(*block.ln_shift));
  h = ops::depthwise_conv_time(h, param_var(*block.conv_kernel), param_var(*block.conv_bias), lengths);
  h = block.ffn2(ops::relu(block.ffn1(ops::relu(h))));
  return ops::add(x, h);
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const std::int64_t D = config_.d_model;
  const std::int64_t V = config_.vocab.size();
  frontend_ = Linear::create(store_, "frontend", static_cast<std::int64_t>(config_.subsample) * config_.d_input, D, seed);
  for (int b = 1; b <= config_.num_blocks; ++b) {
    blocks_.push_back(create_encoder_block(store_, "blocks." + std::to_string(b), D, seed));
  }
  std::vector<std::string> prefixes;
  if (has_moe_layers(config_.variant)) {
    const auto& moe = config_.moe;
    for (int l = 0; l < moe.num_layers(); ++l) {
      const std::string prefix = "moe." + std::to_string(l + 1);
      prefixes.push_back(prefix);
      MoeLayer layer;
      layer.after_block = moe.insert_layers[static_cast<std::size_t>(l)];
      layer.router = Linear::create(store_, prefix + ".router", D, moe.num_experts, seed);
      for (double& w : layer.router.weight->value.values()) w *= kRouterInitScale;
      for (int j = 0; j < moe.num_experts; ++j) {
        const std::string ename = prefix + ".experts." + std::to_string(j);
        Expert e;
        e.ffn1 = Linear::create(store_, ename + ".ffn1", D, D, seed);
        e.ffn2 = Linear::create(store_, ename + ".ffn2", D, D, seed, Init::zeros);
        layer.experts.push_back(e);
      }
      if (config_.variant == Variant::moe_ctc) {
        layer.projection = Linear::create(store_, prefix + ".proj", V, D, seed, Init::zeros);
      }
      moe_layers_.push_back(std::move(layer));
    }
  }
  head_ = Linear::create(store_, "head", D, V, seed);
  if (config_.variant == Variant::moe_ctc) {
    heads_ = ExpertHeadBank::create(store_, config_.moe.head_sharing, prefixes, config_.moe.num_experts, D, V, head_,
                                    seed);
  }
}

std::int64_t Model::output_frames(std::int64_t input_frames) const {
  return (input_frames + config_.subsample - 1) / config_.subsample;
}

Model::Single Model::forward_one(const UtteranceInput& utt, const ForwardOptions& options, double grad_scale) {
  if (utt.features == nullptr) throw InputError("utterance without features");
  const Tensor& feats = *utt.features;
  if (feats.rank() != 2 || feats.dim(1) != config_.d_input) {
    throw ConfigError("features must be [T, " + std::to_string(config_.d_input) + "], got " +
                      shape_string(feats.shape()));
  }
  if (feats.dim(0) < 1) throw InputError("utterance with zero frames");
  const bool with_targets = utt.target != nullptr;
  if (options.mode == Mode::train && !with_targets) throw PipelineError("training forward requires targets");

  Single out;
  const std::vector<std::int64_t> lengths{output_frames(feats.dim(0))};
  Var x = constant(feats.reshaped({1, feats.dim(0), feats.dim(1)}));
  if (config_.subsample > 1) x = ops::stack_frames(x, config_.subsample);
  x = frontend_(x);

  const Variant variant = config_.variant;
  const AccentLabel routing_label = options.accent_bias ? utt.accent : AccentLabel{};
  const BiasStrength alpha = options.accent_bias ? options.alpha : BiasStrength::finite(0.0);
  std::vector<Var> local_terms;
  std::vector<Var> accent_terms;
  std::vector<const Transcript*> targets;
  if (with_targets) targets.push_back(utt.target);

  std::size_t next_layer = 0;
  for (int b = 1; b <= config_.num_blocks; ++b) {
    x = encoder_block_forward(x, blocks_[static_cast<std::size_t>(b - 1)], lengths);
    if (variant == Variant::inter_ctc) {
      const auto& layers = config_.moe.insert_layers;
      if (with_targets && options.local_loss && std::find(layers.begin(), layers.end(), b) != layers.end()) {
        local_terms.push_back(ctc_loss_op(head_(x), *utt.target));
      }
      continue;
    }
    if (next_layer >= moe_layers_.size() || moe_layers_[next_layer].after_block != b) continue;

    const MoeLayer& layer = moe_layers_[next_layer];
    const int l = static_cast<int>(next_layer);
    ++next_layer;
    std::span<const AccentLabel> labels(&routing_label, routing_label ? 1 : 0);
    RoutingState rs = route(x, lengths, layer.router, labels, alpha, config_.moe.top_k);
    out.routing.push_back({std::vector<double>(rs.gates.value().values().begin(), rs.gates.value().values().end()),
                           rs.selected[0],
                           std::vector<double>(rs.renorm_gates.value().values().begin(),
                                               rs.renorm_gates.value().values().end())});
    if (options.accent_loss && supports_accent_stage(variant)) {
      if (!utt.accent) throw PipelineError("accent loss requested for an utterance without accent label");
      std::span<const AccentLabel> own(&utt.accent, 1);
      accent_terms.push_back(accent_loss(rs, own));
    }
    if (variant == Variant::moe_ctc) {
      std::span<const Transcript* const> tg = (with_targets && options.local_loss) ? std::span<const Transcript* const>(targets)
                                                                                    : std::span<const Transcript* const>();
      auto res = moectc_layer_forward(x, rs, layer.experts, heads_, layer.projection, l, tg);
      x = res.output;
      if (res.local) local_terms.push_back(res.local);
      out.expert_losses.emplace_back(res.expert_losses.values().begin(), res.expert_losses.values().end());
    } else {
      x = ops::add(x, moe_combine(x, rs, layer.experts));
    }
  }

  Var logits = head_(x);
  Tensor lp = log_softmax(logits.value());
  out.log_probs = lp.reshaped({lp.dim(1), lp.dim(2)});
  if (!with_targets) return out;

  Var global = ctc_loss_op(logits, *utt.target);
  Var local = local_terms.empty() ? Var() : local_loss_total(local_terms);
  Var accent = accent_terms.empty() ? Var() : (accent_terms.size() == 1 ? accent_terms[0] : ops::add_n(accent_terms));
  const double local_weight = variant == Variant::inter_ctc ? config_.inter_lambda : config_.moe.effective_beta();
  const double accent_weight = config_.moe.gamma;
  Var total = total_loss(global, local, accent, local_weight, accent ? accent_weight : 0.0);
  out.global_ctc = global.item();
  out.local = local ? local.item() : 0.0;
  out.accent = accent ? accent.item() : 0.0;
  out.total = total.item();
  if (options.accumulate_grads) backward(total, grad_scale);
  return out;
}

ForwardResult Model::forward(std::span<const UtteranceInput> batch, const ForwardOptions& options) {
  if (batch.empty()) throw InputError("empty batch");
  ForwardResult result;
  result.routing.resize(moe_layers_.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const auto L = static_cast<std::int64_t>(moe_layers_.size());
  const std::int64_t N = has_moe_layers(config_.variant) ? config_.moe.num_experts : 0;
  Tensor expert_sum({L, N}, 0.0);
  Tensor expert_count({L, N}, 0.0);
  double g = 0.0, lo = 0.0, ac = 0.0, tot = 0.0;
  bool all_targets = true;
  for (const auto& utt : batch) {
    Single s = forward_one(utt, options, inv_b);
    result.log_probs.push_back(std::move(s.log_probs));
    for (std::size_t l = 0; l < s.routing.size(); ++l) result.routing[l].push_back(std::move(s.routing[l]));
    for (std::size_t l = 0; l < s.expert_losses.size(); ++l)
      for (std::int64_t j = 0; j < N; ++j) {
        const double v = s.expert_losses[l][static_cast<std::size_t>(j)];
        if (std::isnan(v)) continue;
        expert_sum.at(static_cast<std::int64_t>(l), j) += v;
        expert_count.at(static_cast<std::int64_t>(l), j) += 1.0;
      }
    if (utt.target == nullptr) all_targets = false;
    g += s.global_ctc;
    lo += s.local;
    ac += s.accent;
    tot += s.total;
  }
  if (all_targets) {
    const double local_weight = config_.variant == Variant::inter_ctc ? config_.inter_lambda : config_.moe.effective_beta();
    LossBundle bundle;
    bundle.global_ctc = g * inv_b;
    bundle.local = lo * inv_b;
    bundle.accent = ac * inv_b;
    bundle.local_weight = options.local_loss ? local_weight : 0.0;
    bundle.accent_weight = options.accent_loss && supports_accent_stage(config_.variant) ? config_.moe.gamma : 0.0;
    bundle.total = tot * inv_b;
    bundle.per_layer_per_expert = Tensor({L, N}, std::numeric_limits<double>::quiet_NaN());
    for (std::int64_t i = 0; i < expert_sum.size(); ++i) {
      if (expert_count[i] > 0.0) bundle.per_layer_per_expert[i] = expert_sum[i] / expert_count[i];
    }
    result.losses = std::move(bundle);
  }
  return result;
}

ParamCounts count_params(const Model& model) {
  ParamCounts c;
  for (const Param* p : model.params().all()) {
    const auto n = p->value.size();
    const std::string& name = p->name;
    c.total += n;
    std::string module = name.substr(0, name.find('.'));
    if (module == "blocks" || module == "moe") {
      const auto second = name.find('.', module.size() + 1);
      module = name.substr(0, second);
    }
    c.per_module[module] += n;
    if (name.starts_with("frontend.")) c.frontend += n;
    else if (name.starts_with("blocks.")) c.encoder += n;
    else if (name.starts_with("head.")) c.global_head += n;
    else if (name.find(".router.") != std::string::npos) c.routers += n;
    else if (name.find(".experts.") != std::string::npos) c.experts += n;
    else if (name.find(".heads.") != std::string::npos || name.find(".head.") != std::string::npos) c.expert_heads += n;
    else if (name.find(".proj.") != std::string::npos) c.projections += n;
  }
  return c;
}

SpareExpertSampler::SpareExpertSampler(int num_designated, int num_experts, double spare_fraction, std::uint64_t seed)
    : num_designated_(num_designated), num_experts_(num_experts), fraction_(spare_fraction), seed_(seed) {
  if (spare_fraction < 0.0 || spare_fraction > 1.0) throw ConfigError("spare_fraction must lie in [0, 1]");
  if (spare_fraction > 0.0 && num_experts <= num_designated) {
    throw ConfigError("spare experts need num_experts > num_designated");
  }
}

AccentLabel SpareExpertSampler::operator()(AccentLabel accent, std::string_view utterance_id) const {
  if (!accent || fraction_ == 0.0) return accent;
  Rng rng(derive_seed(seed_, utterance_id, 0x5BA4E));
  if (rng.uniform() >= fraction_) return accent;
  return num_designated_ + static_cast<int>(rng.index(static_cast<std::uint64_t>(num_experts_ - num_designated_)));
}

SpareExpertSampler configure_spare_experts(const MoeConfig& moe, std::uint64_t seed) {
  return SpareExpertSampler(moe.num_designated, moe.num_experts, moe.spare_fraction, seed);
}

}  // namespace moectc
