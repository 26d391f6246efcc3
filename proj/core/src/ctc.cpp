// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <unordered_set>

#include "moectc/errors.hpp"
#include "moectc/ops.hpp"

namespace moectc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

void check_log_probs(const Tensor& log_probs) {
  if (log_probs.rank() != 2) throw ConfigError("ctc: log_probs must be [T,V], got " + shape_string(log_probs.shape()));
  if (log_probs.dim(0) < 1) throw InputError("ctc: empty utterance (T = 0)");
  if (log_probs.dim(1) < 2) throw ConfigError("ctc: vocabulary must have at least two units");
  for (double v : log_probs.values()) {
    if (std::isnan(v)) throw InputError("ctc: NaN in log-probabilities");
  }
}

void check_target(std::span<const int> target, std::int64_t V) {
  for (int l : target) {
    if (l <= Vocabulary::kBlank || l >= V) {
      throw InputError("ctc: target label " + std::to_string(l) + " outside [1, V-1]");
    }
  }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < 2) throw ConfigError("vocabulary needs the blank plus at least one unit");
  std::unordered_set<std::string> seen;
  for (const auto& s : symbols_) {
    if (!seen.insert(s).second) throw ConfigError("duplicate vocabulary unit '" + s + "'");
  }
  for (std::size_t i = 1; i < symbols_.size(); ++i) {
    if (symbols_[i].size() != 1) throw ConfigError("character vocabulary units must be single bytes");
  }
}

Vocabulary Vocabulary::characters() {
  std::vector<std::string> s{"<blank>"};
  for (char c = 'a'; c <= 'z'; ++c) s.emplace_back(1, c);
  s.emplace_back(" ");
  s.emplace_back("'");
  return Vocabulary(std::move(s));
}

Transcript Vocabulary::encode(std::string_view text) const {
  Transcript out;
  out.reserve(text.size());
  for (char c : text) {
    int found = -1;
    for (int i = 1; i < size(); ++i) {
      if (symbols_[static_cast<std::size_t>(i)][0] == c) {
        found = i;
        break;
      }
    }
    if (found < 0) throw InputError(std::string("character '") + c + "' is not in the vocabulary");
    out.push_back(found);
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> labels) const {
  validate(labels);
  std::string out;
  for (int l : labels) out += symbols_[static_cast<std::size_t>(l)];
  return out;
}

void Vocabulary::validate(std::span<const int> labels) const { check_target(labels, size()); }

std::int64_t min_frames(std::span<const int> target) {
  std::int64_t n = static_cast<std::int64_t>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

CtcResult ctc_loss(const Tensor& log_probs, std::span<const int> target) {
  check_log_probs(log_probs);
  const auto T = log_probs.dim(0);
  const auto V = log_probs.dim(1);
  check_target(target, V);

  CtcResult result;
  result.posteriors = Tensor({T, V}, 0.0);
  result.grad_logits = Tensor({T, V}, 0.0);
  if (T < min_frames(target)) {
    result.loss = std::numeric_limits<double>::infinity();
    result.feasible = false;
    return result;
  }

  // Blank-extended labels: blank, l1, blank, l2, ..., blank.
  const auto U = static_cast<std::int64_t>(target.size());
  const auto S = 2 * U + 1;
  std::vector<int> ext(static_cast<std::size_t>(S), Vocabulary::kBlank);
  for (std::int64_t u = 0; u < U; ++u) ext[static_cast<std::size_t>(2 * u + 1)] = target[static_cast<std::size_t>(u)];
  auto skip_allowed = [&](std::int64_t s) {
    return s >= 2 && ext[static_cast<std::size_t>(s)] != Vocabulary::kBlank &&
           ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)];
  };
  auto lp = [&](std::int64_t t, std::int64_t s) { return log_probs.at(t, ext[static_cast<std::size_t>(s)]); };

  std::vector<double> alpha(static_cast<std::size_t>(T * S), kNegInf);
  std::vector<double> beta(static_cast<std::size_t>(T * S), kNegInf);
  auto A = [&](std::int64_t t, std::int64_t s) -> double& { return alpha[static_cast<std::size_t>(t * S + s)]; };
  auto Bt = [&](std::int64_t t, std::int64_t s) -> double& { return beta[static_cast<std::size_t>(t * S + s)]; };

  A(0, 0) = lp(0, 0);
  if (S > 1) A(0, 1) = lp(0, 1);
  for (std::int64_t t = 1; t < T; ++t) {
    for (std::int64_t s = 0; s < S; ++s) {
      double a = A(t - 1, s);
      if (s >= 1) a = log_add(a, A(t - 1, s - 1));
      if (skip_allowed(s)) a = log_add(a, A(t - 1, s - 2));
      A(t, s) = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  double log_z = A(T - 1, S - 1);
  if (S > 1) log_z = log_add(log_z, A(T - 1, S - 2));
  if (log_z == kNegInf) {
    result.loss = std::numeric_limits<double>::infinity();
    result.feasible = false;
    return result;
  }
  result.loss = -log_z;

  Bt(T - 1, S - 1) = lp(T - 1, S - 1);
  if (S > 1) Bt(T - 1, S - 2) = lp(T - 1, S - 2);
  for (std::int64_t t = T - 2; t >= 0; --t) {
    for (std::int64_t s = 0; s < S; ++s) {
      double b = Bt(t + 1, s);
      if (s + 1 < S) b = log_add(b, Bt(t + 1, s + 1));
      if (s + 2 < S && skip_allowed(s + 2)) b = log_add(b, Bt(t + 1, s + 2));
      Bt(t, s) = b == kNegInf ? kNegInf : b + lp(t, s);
    }
  }

  // alpha and beta both include the emission at t, so it is counted twice.
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t s = 0; s < S; ++s) {
      const double a = A(t, s), b = Bt(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      result.posteriors.at(t, ext[static_cast<std::size_t>(s)]) += std::exp(a + b - lp(t, s) - log_z);
    }
    for (std::int64_t v = 0; v < V; ++v) {
      result.grad_logits.at(t, v) = std::exp(log_probs.at(t, v)) - result.posteriors.at(t, v);
    }
  }
  return result;
}

double ctc_brute_force(const Tensor& log_probs, std::span<const int> target) {
  check_log_probs(log_probs);
  const auto T = log_probs.dim(0);
  const auto V = log_probs.dim(1);
  check_target(target, V);
  double paths = 1.0;
  for (std::int64_t t = 0; t < T; ++t) paths *= static_cast<double>(V);
  if (paths > 1e7) throw InputError("ctc_brute_force: instance too large (V^T > 1e7)");

  const Transcript want(target.begin(), target.end());
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = kNegInf;
  const auto count = static_cast<std::int64_t>(paths);
  for (std::int64_t code = 0; code < count; ++code) {
    auto c = code;
    double lp = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(c % V);
      c /= V;
      lp += log_probs.at(t, path[static_cast<std::size_t>(t)]);
    }
    if (collapse(path) == want) total = log_add(total, lp);
  }
  return total == kNegInf ? std::numeric_limits<double>::infinity() : -total;
}

Transcript collapse(std::span<const int> path) {
  Transcript out;
  int prev = -1;
  for (int p : path) {
    if (p != prev && p != Vocabulary::kBlank) out.push_back(p);
    prev = p;
  }
  return out;
}

Transcript greedy_decode(const Tensor& log_probs) {
  if (log_probs.rank() != 2) throw ConfigError("greedy_decode: expected [T,V]");
  const auto T = log_probs.dim(0);
  const auto V = log_probs.dim(1);
  std::vector<int> path(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    int best = 0;
    for (std::int64_t v = 1; v < V; ++v) {
      if (log_probs.at(t, v) > log_probs.at(t, best)) best = static_cast<int>(v);
    }
    path[static_cast<std::size_t>(t)] = best;
  }
  return collapse(path);
}

Var ctc_loss_op(const Var& logits, std::span<const int> target, bool* feasible) {
  Tensor z = logits.value();
  if (z.rank() == 3 && z.dim(0) == 1) z = z.reshaped({z.dim(1), z.dim(2)});
  const Tensor lp = log_softmax(z);
  CtcResult r = ctc_loss(lp, target);
  if (feasible != nullptr) *feasible = r.feasible;
  if (!r.feasible) {
    std::cerr << "warning: infeasible CTC target (T=" << lp.dim(0) << ", needs " << min_frames(target)
              << " frames); using sentinel loss " << kInfeasibleSentinel << "\n";
    return make_op(Tensor::scalar(kInfeasibleSentinel), {logits}, [](Node&) {});
  }
  auto grad = std::make_shared<Tensor>(std::move(r.grad_logits));
  return make_op(Tensor::scalar(r.loss), {logits}, [grad](Node& n) {
    Tensor& dz = n.parents[0]->grad_buffer();
    const double g = n.grad[0];
    for (std::int64_t i = 0; i < dz.size(); ++i) dz[i] += g * (*grad)[i];
  });
}

}  // namespace moectc
