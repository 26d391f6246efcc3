// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/layers.hpp"

#include <cmath>

#include "moectc/errors.hpp"
#include "moectc/ops.hpp"

namespace moectc {

Param& ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  params_.push_back(std::make_unique<Param>(name, std::move(value)));
  Param* p = params_.back().get();
  index_.emplace(std::move(name), p);
  return *p;
}

Param* ParamStore::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

const Param* ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : it->second;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::int64_t ParamStore::count(std::string_view prefix) const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p->name.starts_with(prefix)) n += p->value.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double fan_balanced_bound(std::int64_t fan_in, std::int64_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void init_uniform(Tensor& t, double bound, std::uint64_t seed, std::string_view name) {
  Rng rng(derive_seed(seed, name));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

Linear Linear::create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                      std::uint64_t seed, Init init) {
  Tensor w({in, out}, 0.0);
  if (init == Init::fan_balanced) init_uniform(w, fan_balanced_bound(in, out), seed, name + ".weight");
  Linear l;
  l.weight = &store.add(name + ".weight", std::move(w));
  l.bias = &store.add(name + ".bias", Tensor({out}, 0.0));
  return l;
}

Var Linear::operator()(const Var& x) const { return ops::affine(x, param_var(*weight), param_var(*bias)); }

}  // namespace moectc
