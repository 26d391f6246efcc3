// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moectc/ctc.hpp"
#include "moectc/expert_ctc.hpp"
#include "moectc/layers.hpp"
#include "moectc/moe.hpp"

namespace moectc {

enum class Variant { dense, inter_ctc, moe, accent_moe, moe_ctc };

Variant parse_variant(const std::string& text);
std::string to_string(Variant v);
bool has_moe_layers(Variant v);
/// Variants with an accent-aware first stage.
bool supports_accent_stage(Variant v);

struct ModelConfig {
  int d_model = 64;
  int num_blocks = 6;
  int d_input = 16;
  int subsample = 2;
  Vocabulary vocab = Vocabulary::characters();
  Variant variant = Variant::moe_ctc;
  MoeConfig moe;
  /// Weight of each auxiliary CTC loss in the inter_ctc variant.
  double inter_lambda = 0.3;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Residual conv/FFN encoder block:
///   X + FFN2(ReLU(FFN1(ReLU(DepthwiseConv3(LayerNorm(X))))))
struct EncoderBlock {
  Param* ln_gain = nullptr;
  Param* ln_shift = nullptr;
  Param* conv_kernel = nullptr;
  Param* conv_bias = nullptr;
  Linear ffn1;
  Linear ffn2;
};

inline constexpr int kConvKernel = 3;
/// Router weights start at this fraction of the fan-balanced bound so the
/// initial gates are close to uniform.
inline constexpr double kRouterInitScale = 0.01;

EncoderBlock create_encoder_block(ParamStore& store, const std::string& name, std::int64_t d_model,
                                  std::uint64_t seed);
Var encoder_block_forward(const Var& x, const EncoderBlock& block, std::span<const std::int64_t> lengths);

/// One MoE (or MoE-CTC) layer inserted after an encoder block.
struct MoeLayer {
  int after_block = 0;
  Linear router;
  std::vector<Expert> experts;
  Linear projection;  // V -> D, MoE-CTC only
};

enum class Mode { train, infer };

struct ForwardOptions {
  Mode mode = Mode::infer;
  /// Route labelled utterances with the accent bias; otherwise labels are
  /// ignored by the router.
  bool accent_bias = false;
  BiasStrength alpha = BiasStrength::finite(0.0);
  bool accent_loss = false;
  /// MoE-CTC local loss (or the auxiliary losses of inter_ctc).
  bool local_loss = false;
  /// Run backward per utterance, adding d(mean loss)/d param into grads.
  bool accumulate_grads = false;
};

struct UtteranceInput {
  const Tensor* features = nullptr;  // [T, d_input]
  AccentLabel accent;                // routing target for bias / accent loss
  const Transcript* target = nullptr;
};

/// Routing of one utterance at one MoE layer.
struct RoutingRecord {
  std::vector<double> gates;
  std::vector<int> selected;
  std::vector<double> renorm_gates;
};

struct ForwardResult {
  std::vector<Tensor> log_probs;                     // per utterance [T', V]
  std::optional<LossBundle> losses;                  // when targets are given
  std::vector<std::vector<RoutingRecord>> routing;   // [layer][utterance]
};

struct ParamCounts {
  std::int64_t total = 0;
  std::int64_t frontend = 0;
  std::int64_t encoder = 0;
  std::int64_t routers = 0;
  std::int64_t experts = 0;
  std::int64_t expert_heads = 0;
  std::int64_t projections = 0;
  std::int64_t global_head = 0;
  std::map<std::string, std::int64_t> per_module;  // keyed by "frontend", "blocks.3", "moe.1", "head"
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  int num_moe_layers() const { return static_cast<int>(moe_layers_.size()); }
  const ExpertHeadBank& head_bank() const { return heads_; }

  std::int64_t output_frames(std::int64_t input_frames) const;

  ForwardResult forward(std::span<const UtteranceInput> batch, const ForwardOptions& options);

 private:
  struct Single {
    Tensor log_probs;
    double global_ctc = 0.0, local = 0.0, accent = 0.0, total = 0.0;
    std::vector<RoutingRecord> routing;
    std::vector<std::vector<double>> expert_losses;  // [layer][expert], NaN if unselected
  };
  Single forward_one(const UtteranceInput& utt, const ForwardOptions& options, double grad_scale);

  ModelConfig config_;
  ParamStore store_;
  Linear frontend_;
  std::vector<EncoderBlock> blocks_;
  std::vector<MoeLayer> moe_layers_;
  Linear head_;
  ExpertHeadBank heads_;
};

ParamCounts count_params(const Model& model);

/// Replaces the bias target of a share of stage-1 utterances by a uniformly
/// drawn spare expert index in [A, N-1]. Deterministic in (seed, utterance id).
class SpareExpertSampler {
 public:
  SpareExpertSampler(int num_designated, int num_experts, double spare_fraction, std::uint64_t seed);

  AccentLabel operator()(AccentLabel accent, std::string_view utterance_id) const;
  bool identity() const { return fraction_ == 0.0; }

 private:
  int num_designated_;
  int num_experts_;
  double fraction_;
  std::uint64_t seed_;
};

SpareExpertSampler configure_spare_experts(const MoeConfig& moe, std::uint64_t seed);

}  // namespace moectc
