// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "moectc/autograd.hpp"
#include "moectc/rng.hpp"
#include "moectc/tensor.hpp"

namespace moectc {

/// Owns every trainable tensor of a model, in registration order, with
/// stable addresses and unique names.
class ParamStore {
 public:
  Param& add(std::string name, Tensor value);
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  std::size_t size() const { return params_.size(); }

  /// Sum of element counts over params whose name starts with `prefix`.
  std::int64_t count(std::string_view prefix = {}) const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> index_;
};

enum class Init { fan_balanced, zeros };

/// Fan-balanced uniform bound sqrt(6 / (fan_in + fan_out)).
double fan_balanced_bound(std::int64_t fan_in, std::int64_t fan_out);

/// Fills `t` from a stream keyed by (seed, name) so the values do not depend
/// on the order in which parameters are created.
void init_uniform(Tensor& t, double bound, std::uint64_t seed, std::string_view name);

/// Affine map over the last axis; weight [in, out], bias [out].
struct Linear {
  Param* weight = nullptr;
  Param* bias = nullptr;

  static Linear create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                       std::uint64_t seed, Init init = Init::fan_balanced);

  Var operator()(const Var& x) const;
  std::int64_t in_features() const { return weight->value.dim(0); }
  std::int64_t out_features() const { return weight->value.dim(1); }
  std::int64_t num_params() const { return weight->value.size() + bias->value.size(); }
};

}  // namespace moectc
