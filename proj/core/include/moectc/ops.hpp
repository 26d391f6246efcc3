// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moectc/autograd.hpp"

namespace moectc {

// Plain forward kernels over the last axis.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);
/// Drops the last axis.
Tensor log_sum_exp(const Tensor& logits);

namespace ops {

/// y = x W + b over the last axis of x. W is [Din, Dout], b is [Dout].
Var affine(const Var& x, const Var& weight, const Var& bias);
Var relu(const Var& x);
/// Per-row normalization over the last axis followed by gain and shift.
Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps = 1e-5);
Var softmax(const Var& logits);
Var log_softmax(const Var& logits);
Var log_sum_exp(const Var& logits);

/// [B,T,D] -> [B,D], averaging frames t < lengths[b] only.
Var mean_pool_time(const Var& h, std::span<const std::int64_t> lengths);

/// Depthwise convolution along time with an odd kernel [K,D] centred on each
/// frame. Frames at or beyond lengths[b] read as zero and produce zero.
Var depthwise_conv_time(const Var& x, const Var& kernel, const Var& bias,
                        std::span<const std::int64_t> lengths);

/// [B,T,D] -> [B,ceil(T/f),f*D] by concatenating f consecutive frames;
/// the tail is zero padded.
Var stack_frames(const Var& x, int factor);

Var add(const Var& a, const Var& b);
Var add_n(std::span<const Var> terms);
Var scale(const Var& x, double factor);
/// x * s[index] where s is any tensor; gradient flows into that entry.
Var scale_by_entry(const Var& x, const Var& s, std::int64_t index);
/// Scalar view of one entry.
Var pick(const Var& x, std::int64_t index);
Var sum(const Var& x);
Var reshape(const Var& x, Shape shape);

/// Row i of the leading axis, keeping a leading axis of size 1.
Var select_batch(const Var& x, std::int64_t i);
/// Concatenation along the leading axis; all trailing shapes must match.
Var stack_batch(std::span<const Var> rows);

}  // namespace ops
}  // namespace moectc
