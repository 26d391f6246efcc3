// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/moe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "moectc/errors.hpp"
#include "moectc/ops.hpp"

namespace moectc {

BiasStrength BiasStrength::parse(const std::string& text) {
  if (text == "inf" || text == "INF" || text == "infinity") return inf();
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v) || v < 0.0) {
    throw ConfigError("alpha must be a nonnegative number or 'inf', got '" + text + "'");
  }
  return finite(v);
}

std::string BiasStrength::to_string() const {
  if (infinite) return "inf";
  std::ostringstream os;
  os.precision(17);
  os << value;
  return os.str();
}

HeadSharing parse_head_sharing(const std::string& text) {
  if (text == "full_separation") return HeadSharing::full_separation;
  if (text == "layer_wise") return HeadSharing::layer_wise;
  if (text == "global") return HeadSharing::global;
  throw ConfigError("unknown head sharing mode '" + text + "'");
}

std::string to_string(HeadSharing mode) {
  switch (mode) {
    case HeadSharing::full_separation: return "full_separation";
    case HeadSharing::layer_wise: return "layer_wise";
    case HeadSharing::global: return "global";
  }
  return "?";
}

double MoeConfig::effective_beta() const {
  if (beta) return *beta;
  return 1.0 / (2.0 * static_cast<double>(num_layers()) * static_cast<double>(num_experts));
}

void MoeConfig::validate(int num_blocks) const {
  if (num_experts < 1) throw ConfigError("num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) throw ConfigError("top_k must satisfy 1 <= K <= N");
  if (num_designated < 0 || num_designated > num_experts) throw ConfigError("num_designated must satisfy A <= N");
  if (beta && *beta < 0.0) throw ConfigError("beta must be >= 0");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (!alpha.infinite && alpha.value < 0.0) throw ConfigError("alpha must be >= 0");
  if (spare_fraction < 0.0 || spare_fraction > 1.0) throw ConfigError("spare_fraction must lie in [0, 1]");
  if (spare_fraction > 0.0 && num_experts == num_designated) {
    throw ConfigError("spare_fraction > 0 requires spare experts (num_experts > num_designated)");
  }
  if (insert_layers.empty()) throw ConfigError("insert_layers must not be empty");
  for (std::size_t i = 0; i < insert_layers.size(); ++i) {
    if (insert_layers[i] < 1 || insert_layers[i] > num_blocks) {
      throw ConfigError("insert layer " + std::to_string(insert_layers[i]) + " outside [1, " +
                        std::to_string(num_blocks) + "]");
    }
    if (i > 0 && insert_layers[i] <= insert_layers[i - 1]) throw ConfigError("insert_layers must be strictly increasing");
  }
}

TopK top_k_renormalize(const Var& gates, int k) {
  const Tensor& g = gates.value();
  if (g.rank() != 2) throw ConfigError("top_k_renormalize: gates must be [B,N]");
  const auto B = g.dim(0), N = g.dim(1);
  if (k < 1 || k > N) throw ConfigError("top_k_renormalize: K must satisfy 1 <= K <= N");

  TopK out;
  out.selected.resize(static_cast<std::size_t>(B));
  Tensor r({B, N}, 0.0);
  std::vector<double> kept_sum(static_cast<std::size_t>(B));
  for (std::int64_t i = 0; i < B; ++i) {
    std::vector<int> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return g.at(i, a) > g.at(i, b); });
    order.resize(static_cast<std::size_t>(k));
    double s = 0.0;
    for (int j : order) s += g.at(i, j);
    for (int j : order) r.at(i, j) = g.at(i, j) / s;
    kept_sum[static_cast<std::size_t>(i)] = s;
    out.selected[static_cast<std::size_t>(i)] = std::move(order);
  }
  auto selected = out.selected;
  out.renorm_gates = make_op(r, {gates}, [r, selected, kept_sum, N](Node& n) {
    Tensor& dg = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const auto row = static_cast<std::int64_t>(i) * N;
      double dot = 0.0;
      for (int j : selected[i]) dot += n.grad[row + j] * r[row + j];
      for (int j : selected[i]) dg[row + j] += (n.grad[row + j] - dot) / kept_sum[i];
    }
  });
  return out;
}

RoutingState route(const Var& h, std::span<const std::int64_t> lengths, const Linear& router,
                   std::span<const AccentLabel> accents, BiasStrength alpha, int top_k) {
  const auto B = h.dim(0);
  const auto N = router.out_features();
  if (!accents.empty() && static_cast<std::int64_t>(accents.size()) != B) {
    throw ConfigError("route: accent labels do not match batch size");
  }
  RoutingState st;
  st.logits = router(ops::mean_pool_time(h, lengths));

  Tensor bias({B, N}, 0.0);
  st.forced.assign(static_cast<std::size_t>(B), false);
  bool any_bias = false;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(accents.size()); ++i) {
    const auto& a = accents[static_cast<std::size_t>(i)];
    if (!a) continue;
    if (*a < 0 || *a >= N) {
      throw ConfigError("accent index " + std::to_string(*a) + " has no expert (N = " + std::to_string(N) + ")");
    }
    if (alpha.infinite) {
      st.forced[static_cast<std::size_t>(i)] = true;
    } else if (alpha.value != 0.0) {
      bias.at(i, *a) = alpha.value;
      any_bias = true;
    }
  }
  st.biased_logits = any_bias ? ops::add(st.logits, constant(std::move(bias))) : st.logits;

  // Softmax per row, with forced rows replaced by a constant one-hot.
  Tensor g = moectc::softmax(st.biased_logits.value());
  for (std::int64_t i = 0; i < B; ++i) {
    if (!st.forced[static_cast<std::size_t>(i)]) continue;
    for (std::int64_t j = 0; j < N; ++j) g.at(i, j) = 0.0;
    g.at(i, *accents[static_cast<std::size_t>(i)]) = 1.0;
  }
  auto forced = st.forced;
  st.gates = make_op(g, {st.biased_logits}, [g, forced, N](Node& n) {
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < forced.size(); ++i) {
      if (forced[i]) continue;
      const auto row = static_cast<std::int64_t>(i) * N;
      double dot = 0.0;
      for (std::int64_t j = 0; j < N; ++j) dot += n.grad[row + j] * g[row + j];
      for (std::int64_t j = 0; j < N; ++j) dx[row + j] += g[row + j] * (n.grad[row + j] - dot);
    }
  });

  auto topk = top_k_renormalize(st.gates, top_k);
  st.selected = std::move(topk.selected);
  st.renorm_gates = std::move(topk.renorm_gates);
  return st;
}

Var expert_forward(const Var& x, const Expert& expert) { return expert.ffn2(ops::relu(expert.ffn1(x))); }

Var moe_combine(const Var& x, const RoutingState& routing, std::span<const Expert> experts) {
  const auto B = x.dim(0);
  const auto N = routing.num_experts();
  if (routing.batch() != B) throw ConfigError("moe_combine: routing batch does not match input");
  if (static_cast<std::int64_t>(experts.size()) != N) throw ConfigError("moe_combine: expert count mismatch");
  std::vector<Var> rows;
  rows.reserve(static_cast<std::size_t>(B));
  for (std::int64_t i = 0; i < B; ++i) {
    const Var xi = B == 1 ? x : ops::select_batch(x, i);
    std::vector<Var> terms;
    for (int j : routing.selected[static_cast<std::size_t>(i)]) {
      terms.push_back(ops::scale_by_entry(expert_forward(xi, experts[static_cast<std::size_t>(j)]),
                                          routing.renorm_gates, i * N + j));
    }
    rows.push_back(terms.size() == 1 ? terms[0] : ops::add_n(terms));
  }
  return B == 1 ? rows[0] : ops::stack_batch(rows);
}

Var accent_loss(const RoutingState& routing, std::span<const AccentLabel> accents) {
  const auto B = routing.batch();
  const auto N = routing.num_experts();
  if (static_cast<std::int64_t>(accents.size()) != B) throw ConfigError("accent_loss: label count mismatch");
  Var log_p = ops::log_softmax(routing.gates);
  std::vector<Var> terms;
  for (std::int64_t i = 0; i < B; ++i) {
    const auto& a = accents[static_cast<std::size_t>(i)];
    if (!a) throw PipelineError("accent_loss called on an utterance without an accent label");
    if (*a < 0 || *a >= N) throw ConfigError("accent_loss: label outside expert range");
    terms.push_back(ops::pick(log_p, i * N + *a));
  }
  return ops::scale(ops::add_n(terms), -1.0 / static_cast<double>(B));
}

}  // namespace moectc
