// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "moectc/errors.hpp"
#include "moectc/rng.hpp"

namespace moectc {
namespace {

std::vector<std::string_view> words(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

AdamW::AdamW(std::vector<Param*> params, AdamWOptions options) : params_(std::move(params)), options_(options) {
  for (const Param* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= lr * options_.weight_decay * p.value[i];
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double lr_max) {
  if (total_steps <= 0) return 0.0;
  if (warmup_steps >= total_steps) throw ConfigError("lr_schedule: warmup must be shorter than the run");
  if (step <= 0) return warmup_steps > 0 ? 0.0 : lr_max;
  if (step < warmup_steps) return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::int64_t word_edit_distance(std::string_view ref, std::string_view hyp) {
  const auto r = words(ref), h = words(hyp);
  std::vector<std::int64_t> prev(h.size() + 1), cur(h.size() + 1);
  for (std::size_t j = 0; j <= h.size(); ++j) prev[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= r.size(); ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= h.size(); ++j) {
      const std::int64_t sub = prev[j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[h.size()];
}

std::int64_t word_count(std::string_view text) { return static_cast<std::int64_t>(words(text).size()); }

double wer(std::string_view ref, std::string_view hyp) {
  const auto n = word_count(ref);
  if (n == 0) throw InputError("wer: empty reference");
  return static_cast<double>(word_edit_distance(ref, hyp)) / static_cast<double>(n);
}

Averages average(std::span<const AccentScore> scores) {
  Averages a;
  double weighted = 0.0, plain = 0.0;
  std::int64_t count = 0;
  for (const auto& s : scores) {
    weighted += static_cast<double>(s.count) * s.wer;
    plain += s.wer;
    count += s.count;
    ++a.accents;
  }
  if (a.accents > 0) a.unweighted = plain / a.accents;
  if (count > 0) a.weighted = weighted / static_cast<double>(count);
  if (a.accents == 0) a.weighted = a.unweighted = kNaN;
  return a;
}

std::vector<Transcript> encode_targets(const Vocabulary& vocab, std::span<const Utterance* const> utterances) {
  std::vector<Transcript> out;
  out.reserve(utterances.size());
  for (const Utterance* u : utterances) out.push_back(vocab.encode(u->text));
  return out;
}

EvalReport evaluate(Model& model, std::span<const Utterance* const> utterances, const EvalOptions& options) {
  EvalReport report;
  report.oracle = options.oracle;
  const Vocabulary& vocab = model.config().vocab;
  const int L = model.num_moe_layers();
  const int N = has_moe_layers(model.config().variant) ? model.config().moe.num_experts : 0;

  std::vector<const Utterance*> used;
  std::vector<std::string> skipped;
  for (const Utterance* u : utterances) {
    if (u->features.size() == 0) throw InputError("evaluate: features not loaded for " + u->id);
    if (options.oracle && !u->seen()) {
      if (std::find(skipped.begin(), skipped.end(), u->accent) == skipped.end()) skipped.push_back(u->accent);
      continue;
    }
    if (options.oracle && u->accent_index >= N) {
      throw ConfigError("oracle evaluation: accent " + u->accent + " has no designated expert");
    }
    used.push_back(u);
  }
  if (!skipped.empty()) {
    std::string msg = "oracle evaluation skips unseen accents:";
    for (const auto& s : skipped) msg += " " + s;
    report.warnings.push_back(msg);
  }
  if (options.oracle && !has_moe_layers(model.config().variant)) {
    report.warnings.push_back("oracle evaluation on a model without MoE layers equals label-free evaluation");
  }

  // Row order: seen accents by index, then unseen by first appearance.
  std::vector<std::pair<int, std::string>> rows;
  for (const Utterance* u : used) {
    const std::pair<int, std::string> key{u->seen() ? u->accent_index : -1, u->accent};
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    const bool sa = a.first >= 0, sb = b.first >= 0;
    if (sa != sb) return sa;
    return sa && a.first < b.first;
  });
  auto row_of = [&](const Utterance* u) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (rows[r].second == u->accent && rows[r].first == (u->seen() ? u->accent_index : -1)) return r;
    return rows.size();
  };
  for (const auto& [index, name] : rows) report.accents.push_back({name, index, 0, 0, 0, 0.0});
  report.gating.assign(static_cast<std::size_t>(L), Tensor({static_cast<std::int64_t>(rows.size()), N}, 0.0));
  std::vector<std::int64_t> correct(static_cast<std::size_t>(L), 0);
  std::int64_t seen_total = 0;

  ForwardOptions fwd;
  fwd.mode = Mode::infer;
  if (options.oracle) {
    fwd.accent_bias = true;
    fwd.alpha = BiasStrength::inf();
  }
  const std::size_t bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (std::size_t start = 0; start < used.size(); start += bs) {
    const std::size_t end = std::min(used.size(), start + bs);
    std::vector<UtteranceInput> batch;
    for (std::size_t i = start; i < end; ++i) {
      const Utterance* u = used[i];
      batch.push_back({&u->features, options.oracle ? AccentLabel(u->accent_index) : AccentLabel{}, nullptr});
    }
    ForwardResult res = model.forward(batch, fwd);
    for (std::size_t i = start; i < end; ++i) {
      const Utterance* u = used[i];
      const std::size_t local = i - start;
      std::string hyp = vocab.decode(greedy_decode(res.log_probs[local]));
      const std::size_t r = row_of(u);
      AccentScore& s = report.accents[r];
      ++s.count;
      s.edits += word_edit_distance(u->text, hyp);
      s.words += word_count(u->text);
      if (u->seen()) ++seen_total;
      for (int l = 0; l < L; ++l) {
        const RoutingRecord& rec = res.routing[static_cast<std::size_t>(l)][local];
        for (int j = 0; j < N; ++j) report.gating[static_cast<std::size_t>(l)].at(static_cast<std::int64_t>(r), j) += rec.gates[static_cast<std::size_t>(j)];
        if (u->seen()) {
          const auto top = std::max_element(rec.gates.begin(), rec.gates.end()) - rec.gates.begin();
          correct[static_cast<std::size_t>(l)] += top == u->accent_index;
        }
      }
      report.hypotheses.push_back(std::move(hyp));
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    AccentScore& s = report.accents[r];
    s.wer = s.words > 0 ? static_cast<double>(s.edits) / static_cast<double>(s.words) : 0.0;
    for (int l = 0; l < L; ++l)
      for (int j = 0; j < N; ++j) report.gating[static_cast<std::size_t>(l)].at(static_cast<std::int64_t>(r), j) /= static_cast<double>(s.count);
  }
  std::vector<AccentScore> seen, unseen;
  for (const auto& s : report.accents) (s.index >= 0 ? seen : unseen).push_back(s);
  report.seen = average(seen);
  report.unseen = average(unseen);
  for (int l = 0; l < L; ++l) {
    report.routing_accuracy.push_back(seen_total > 0 ? static_cast<double>(correct[static_cast<std::size_t>(l)]) /
                                                           static_cast<double>(seen_total)
                                                     : kNaN);
  }
  return report;
}

EvalReport oracle_eval(Model& model, std::span<const Utterance* const> utterances) {
  EvalOptions o;
  o.oracle = true;
  return evaluate(model, utterances, o);
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << (report.oracle ? "oracle routing" : "label-free routing") << "\n";
  for (const auto& w : report.warnings) os << "warning: " << w << "\n";
  os << std::left << std::setw(10) << "accent" << std::setw(8) << "kind" << std::right << std::setw(8) << "utts"
     << std::setw(10) << "WER%" << "\n";
  for (const auto& a : report.accents) {
    os << std::left << std::setw(10) << a.name << std::setw(8) << (a.index >= 0 ? "seen" : "unseen") << std::right
       << std::setw(8) << a.count << std::setw(10) << 100.0 * a.wer << "\n";
  }
  auto avg = [&](const char* name, const Averages& a) {
    if (a.accents == 0) return;
    os << name << " average WER%: weighted " << 100.0 * a.weighted << ", unweighted " << 100.0 * a.unweighted << "\n";
  };
  avg("seen", report.seen);
  avg("unseen", report.unseen);
  for (std::size_t l = 0; l < report.routing_accuracy.size(); ++l) {
    os << "routing top-1 accuracy, MoE layer " << l + 1 << ": " << 100.0 * report.routing_accuracy[l] << "%\n";
  }
  return os.str();
}

std::string wer_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "accent,kind,utterances,edits,words,wer\n";
  for (const auto& a : report.accents) {
    os << a.name << ',' << (a.index >= 0 ? "seen" : "unseen") << ',' << a.count << ',' << a.edits << ',' << a.words
       << ',' << format_double(a.wer) << '\n';
  }
  return os.str();
}

std::string gating_csv(const EvalReport& report, int layer) {
  if (layer < 0 || layer >= static_cast<int>(report.gating.size())) {
    throw ConfigError("gating_csv: layer " + std::to_string(layer + 1) + " out of range [1, " +
                      std::to_string(report.gating.size()) + "]");
  }
  const Tensor& g = report.gating[static_cast<std::size_t>(layer)];
  std::ostringstream os;
  os << "accent";
  for (std::int64_t j = 0; j < g.dim(1); ++j) os << ",expert" << j;
  os << '\n';
  for (std::int64_t r = 0; r < g.dim(0); ++r) {
    os << report.accents[static_cast<std::size_t>(r)].name;
    for (std::int64_t j = 0; j < g.dim(1); ++j) os << ',' << format_double(g.at(r, j));
    os << '\n';
  }
  return os.str();
}

std::string to_string(Stage stage) { return stage == Stage::aware ? "aware" : "agnostic"; }

Stage parse_stage(const std::string& text) {
  if (text == "aware") return Stage::aware;
  if (text == "agnostic") return Stage::agnostic;
  throw ConfigError("unknown stage '" + text + "' (aware, agnostic)");
}

StagePlan make_stage_plan(const RunConfig& config, Stage stage, bool after_aware) {
  const Variant v = config.model.variant;
  StagePlan plan;
  plan.stage = stage;
  if (stage == Stage::aware) {
    if (!supports_accent_stage(v)) throw ConfigError("variant " + to_string(v) + " has no accent-aware stage");
    plan.epochs = config.train.stage1_epochs;
    plan.lr = config.train.stage1_lr;
    plan.accent_bias = true;
    plan.alpha = config.model.moe.alpha;
    plan.accent_loss = true;
    plan.local_loss = v == Variant::moe_ctc;
    return plan;
  }
  if (after_aware) {
    plan.epochs = config.train.stage2_epochs;
    plan.lr = config.train.stage2_lr;
  } else {
    plan.epochs = config.train.agnostic_epochs;
    plan.lr = config.train.agnostic_lr;
  }
  plan.local_loss = v == Variant::moe_ctc || v == Variant::inter_ctc;
  return plan;
}

StageResult train_stage(Model& model, const RunConfig& config, const Corpus& corpus, const StagePlan& plan,
                        const TrainOptions& options) {
  const auto train = corpus.select(Split::train);
  const auto dev = corpus.select(Split::dev);
  if (train.empty()) throw InputError("training split is empty");
  if (dev.empty()) throw InputError("dev split is empty");
  const Vocabulary& vocab = model.config().vocab;
  const auto targets = encode_targets(vocab, train);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Utterance* u = train[i];
    if (u->features.size() == 0) throw InputError("features not loaded for " + u->id);
    if (plan.accent_bias || plan.accent_loss) {
      if (!u->seen()) throw PipelineError("accent-aware stage needs seen-accent labels; " + u->id + " has none");
    }
    if (model.output_frames(u->features.dim(0)) < min_frames(targets[i])) {
      throw InputError("utterance " + u->id + " is too short for its transcript");
    }
  }
  const auto spare = configure_spare_experts(model.config().moe, derive_seed(config.seed, "spare"));
  std::vector<AccentLabel> labels;
  for (const Utterance* u : train) {
    AccentLabel a = u->seen() ? AccentLabel(u->accent_index) : AccentLabel{};
    labels.push_back(plan.accent_bias && has_moe_layers(model.config().variant) ? spare(a, u->id) : a);
  }

  auto dev_eval = [&] {
    EvalReport r = evaluate(model, dev);
    std::int64_t edits = 0, nwords = 0;
    for (const auto& a : r.accents) {
      edits += a.edits;
      nwords += a.words;
    }
    const double w = nwords > 0 ? static_cast<double>(edits) / static_cast<double>(nwords) : 0.0;
    const double acc = r.routing_accuracy.empty() ? kNaN : r.routing_accuracy.back();
    return std::pair{w, acc};
  };

  StageResult result;
  const std::string stage_name = to_string(plan.stage);
  if (plan.epochs == 0) {
    result.best = capture(model, config, stage_name, 0, dev_eval().first);
    return result;
  }

  const auto bs = static_cast<std::size_t>(config.train.batch_size);
  const std::int64_t batches = static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  const std::int64_t total_steps = batches * plan.epochs;
  const auto warmup = static_cast<std::int64_t>(std::floor(config.train.warmup_fraction * static_cast<double>(total_steps)));
  AdamW opt(model.params().all(), {config.train.adam_beta1, config.train.adam_beta2, config.train.adam_eps,
                                   config.train.weight_decay});
  ForwardOptions fwd;
  fwd.mode = Mode::train;
  fwd.accent_bias = plan.accent_bias;
  fwd.alpha = plan.alpha;
  fwd.accent_loss = plan.accent_loss;
  fwd.local_loss = plan.local_loss;
  fwd.accumulate_grads = true;

  double best_wer = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, "shuffle-" + stage_name, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    EpochLog log;
    log.stage = plan.stage;
    log.epoch = epoch;
    for (std::int64_t b = 0; b < batches; ++b) {
      std::vector<UtteranceInput> batch;
      std::vector<std::size_t> batch_index;
      const auto first = static_cast<std::size_t>(b) * bs;
      for (std::size_t k = first; k < std::min(order.size(), first + bs); ++k) {
        const std::size_t i = order[k];
        batch.push_back({&train[i]->features, labels[i], &targets[i]});
        batch_index.push_back(i);
      }
      model.params().zero_grad();
      ForwardResult res = model.forward(batch, fwd);
      const LossBundle& lb = *res.losses;
      if (!std::isfinite(lb.total)) {
        std::string ids;
        for (std::size_t k : batch_index) ids += " " + train[k]->id;
        throw PipelineError("non-finite loss in " + stage_name + " stage, epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b) + "; utterances:" + ids);
      }
      const auto step = (epoch - 1) * batches + b;
      opt.step(lr_schedule(step + 1, total_steps, warmup, plan.lr));
      const double n = static_cast<double>(batch.size());
      log.loss += lb.total * n;
      log.global_ctc += lb.global_ctc * n;
      log.local += lb.local * n;
      log.accent += lb.accent * n;
    }
    const double n = static_cast<double>(train.size());
    log.loss /= n;
    log.global_ctc /= n;
    log.local /= n;
    log.accent /= n;
    std::tie(log.dev_wer, log.routing_accuracy) = dev_eval();
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.dev_wer < best_wer) {
      best_wer = log.dev_wer;
      result.best = capture(model, config, stage_name, epoch, log.dev_wer);
    }
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  model.params().zero_grad();
  restore(model, result.best);
  return result;
}

}  // namespace moectc
