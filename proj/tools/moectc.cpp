// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "moectc/checkpoint.hpp"
#include "moectc/config.hpp"
#include "moectc/data.hpp"
#include "moectc/errors.hpp"
#include "moectc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace moectc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : Error {
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<const Utterance*> pick_split(const Corpus& corpus, const std::string& split) {
  if (split == "all") {
    std::vector<const Utterance*> out;
    for (const auto& u : corpus.utterances) out.push_back(&u);
    return out;
  }
  return corpus.select(parse_split(split));
}

struct Loaded {
  RunConfig config;
  Checkpoint ckpt;
  std::unique_ptr<Model> model;
};

Loaded load_model(const fs::path& path) {
  Loaded l;
  l.ckpt = load_checkpoint(path);
  l.config = checkpoint_config(l.ckpt);
  l.model = std::make_unique<Model>(l.config.model, l.config.seed);
  restore(*l.model, l.ckpt);
  return l;
}

void check_vocabulary(const Model& model, std::span<const Utterance* const> utts) {
  for (const Utterance* u : utts) {
    try {
      model.config().vocab.encode(u->text);
    } catch (const InputError& e) {
      throw InputError("vocabulary mismatch for utterance " + u->id + ": " + e.what());
    }
  }
}

// gen-data ------------------------------------------------------------------

struct GenArgs {
  std::string out;
  GenOptions options;
};

int run_gen(const GenArgs& a) {
  if (a.options.utts_per_accent < 1) throw UsageError("--utts must be >= 1");
  a.options.validate();
  const Corpus corpus = gen_corpus(a.options);
  write_corpus(corpus, a.out);
  std::map<std::string, std::map<std::string, int>> counts;
  std::vector<std::string> order;
  for (const auto& u : corpus.utterances) {
    if (!counts.contains(u.accent)) order.push_back(u.accent);
    ++counts[u.accent][to_string(u.split)];
  }
  std::cout << std::left << std::setw(10) << "accent" << std::setw(8) << "kind" << std::right << std::setw(8)
            << "train" << std::setw(8) << "dev" << std::setw(8) << "test" << "\n";
  for (const auto& name : order) {
    const bool seen = std::find(corpus.accents.begin(), corpus.accents.end(), name) != corpus.accents.end();
    auto& c = counts[name];
    std::cout << std::left << std::setw(10) << name << std::setw(8) << (seen ? "seen" : "unseen") << std::right
              << std::setw(8) << c["train"] << std::setw(8) << c["dev"] << std::setw(8) << c["test"] << "\n";
  }
  std::cout << "wrote " << corpus.utterances.size() << " utterances to " << (fs::path(a.out) / "manifest.tsv").string()
            << "\n";
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string variant;
  std::string stage;
  std::string out;
  std::string manifest;
  std::string init;
  std::vector<std::string> overrides;
};

std::string format_log(const EpochLog& l) {
  std::ostringstream os;
  os << std::setprecision(6) << "stage=" << to_string(l.stage) << " epoch=" << l.epoch << " loss=" << l.loss
     << " global=" << l.global_ctc << " local=" << l.local << " accent=" << l.accent << " dev_wer=" << l.dev_wer
     << " routing_acc=";
  if (std::isnan(l.routing_accuracy)) os << "n/a";
  else os << l.routing_accuracy;
  os << std::setprecision(3) << " time=" << l.seconds << "s";
  return os.str();
}

int run_train(const TrainArgs& a) {
  RunConfig config = a.config_path.empty() ? RunConfig{} : load_run_config(a.config_path);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.variant.empty()) config.model.variant = parse_variant(a.variant);
  if (!a.manifest.empty()) config.manifest = a.manifest;
  config.validate();
  const Variant v = config.model.variant;
  const std::string stage = a.stage.empty() ? (supports_accent_stage(v) ? "both" : "agnostic") : a.stage;
  if (stage != "aware" && stage != "agnostic" && stage != "both") {
    throw UsageError("--stage must be aware, agnostic or both");
  }
  if (stage != "agnostic" && !supports_accent_stage(v)) {
    throw UsageError("variant " + to_string(v) + " has no accent-aware stage; use --stage agnostic");
  }
  if (!a.init.empty() && stage != "agnostic") throw UsageError("--init applies to --stage agnostic only");

  Corpus corpus = read_manifest(config.manifest);
  ensure_dir(a.out);
  Model model(config.model, config.seed);
  bool after_aware = false;
  if (!a.init.empty()) {
    Checkpoint init = load_checkpoint(a.init);
    restore(model, init);
    after_aware = init.stage == "aware";
  }
  std::ofstream log_file(fs::path(a.out) / "train.log", std::ios::app);
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& l) {
    const std::string line = format_log(l);
    std::cout << line << std::endl;
    log_file << line << std::endl;
  };
  auto run_stage = [&](Stage s) {
    const StagePlan plan = make_stage_plan(config, s, after_aware);
    StageResult r = train_stage(model, config, corpus, plan, opts);
    const fs::path ckpt = fs::path(a.out) / (to_string(s) + ".ckpt");
    save_checkpoint(r.best, ckpt);
    save_run_config(config, fs::path(a.out) / (to_string(s) + ".config"));
    std::cout << "best " << to_string(s) << " checkpoint: epoch " << r.best.epoch << ", dev WER " << r.best.dev_wer
              << " -> " << ckpt.string() << std::endl;
  };
  if (stage == "aware" || stage == "both") {
    run_stage(Stage::aware);
    after_aware = true;
  }
  if (stage == "agnostic" || stage == "both") run_stage(Stage::agnostic);
  return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string manifest;
  std::string split = "test";
  std::string csv;
  bool oracle = false;
};

void write_report_csv(const EvalReport& r, const fs::path& dir, const std::string& prefix) {
  write_text(dir / (prefix + "wer.csv"), wer_csv(r));
  for (std::size_t l = 0; l < r.gating.size(); ++l) {
    write_text(dir / (prefix + "gating_layer" + std::to_string(l + 1) + ".csv"), gating_csv(r, static_cast<int>(l)));
  }
}

int run_eval(const EvalArgs& a) {
  Loaded l = load_model(a.ckpt);
  const Corpus corpus = read_manifest(a.manifest);
  const auto utts = pick_split(corpus, a.split);
  check_vocabulary(*l.model, utts);
  const EvalReport free = evaluate(*l.model, utts);
  std::cout << format_report(free);
  std::optional<EvalReport> oracle;
  if (a.oracle) {
    oracle = oracle_eval(*l.model, utts);
    for (const auto& w : oracle->warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "\n" << format_report(*oracle);
    if (oracle->seen.accents > 0 && free.seen.accents > 0) {
      std::cout << std::fixed << std::setprecision(2) << "seen weighted WER%: label-free " << 100.0 * free.seen.weighted
                << ", oracle " << 100.0 * oracle->seen.weighted << "\n";
    }
  }
  if (!a.csv.empty()) {
    ensure_dir(a.csv);
    write_report_csv(free, a.csv, "");
    if (oracle) write_report_csv(*oracle, a.csv, "oracle_");
  }
  return 0;
}

// decode / inspect-routing / probe ------------------------------------------

int run_decode(const std::string& ckpt, const std::string& features) {
  Loaded l = load_model(ckpt);
  const Tensor f = read_features(features);
  std::vector<UtteranceInput> in{{&f, std::nullopt, nullptr}};
  ForwardResult r = l.model->forward(in, {});
  std::cout << l.model->config().vocab.decode(greedy_decode(r.log_probs[0])) << "\n";
  return 0;
}

struct InspectArgs {
  std::string ckpt;
  std::string manifest;
  std::string out;
  std::string split = "test";
  std::string alpha = "none";
  int layer = 0;
};

int run_inspect(const InspectArgs& a) {
  Loaded l = load_model(a.ckpt);
  const int L = l.model->num_moe_layers();
  if (L == 0) throw UsageError("checkpoint variant " + to_string(l.config.model.variant) + " has no MoE layers");
  const int layer = a.layer == 0 ? L : a.layer;
  if (layer < 1 || layer > L) {
    throw UsageError("--layer " + std::to_string(a.layer) + " out of range [1, " + std::to_string(L) + "]");
  }
  const Corpus corpus = read_manifest(a.manifest);
  const auto utts = pick_split(corpus, a.split);
  EvalReport r;
  if (a.alpha == "none") {
    r = evaluate(*l.model, utts);
  } else if (a.alpha == "inf" || (a.alpha == "config" && l.config.model.moe.alpha.infinite)) {
    r = oracle_eval(*l.model, utts);
  } else if (a.alpha == "config") {
    throw UsageError("--alpha config requires a checkpoint configured with moe.alpha = inf; use none or inf");
  } else {
    throw UsageError("--alpha must be none, config or inf");
  }
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  const std::string csv = gating_csv(r, layer - 1);
  if (a.out.empty()) std::cout << csv;
  else write_text(a.out, csv);
  return 0;
}

int run_probe(const std::string& manifest) {
  const Corpus corpus = read_manifest(manifest);
  const ProbeResult p = linear_probe(corpus, Split::train, Split::test);
  std::cout << std::fixed << std::setprecision(2) << "linear probe accent accuracy: train " << 100.0 * p.train_accuracy
            << "%, test " << 100.0 * p.eval_accuracy << "% (chance " << 100.0 * p.chance << "%)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Accent-robust CTC speech recognition with mixture-of-experts routing"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic accent corpus");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.options.seed, "Random seed");
  g->add_option("--seen", gen.options.num_seen, "Seen accents");
  g->add_option("--unseen", gen.options.num_unseen, "Unseen accents");
  g->add_option("--utts", gen.options.utts_per_accent, "Training utterances per seen accent");
  g->add_option("--d-input", gen.options.d_input, "Feature dimension");
  g->add_flag("--identity-transforms", gen.options.identity_transforms, "Negative control: no accent transforms");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config_path, "Run config file");
  t->add_option("--variant", train.variant, "dense, inter_ctc, moe, accent_moe or moe_ctc");
  t->add_option("--stage", train.stage, "aware, agnostic or both");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--manifest", train.manifest, "Manifest (overrides data.manifest)");
  t->add_option("--init", train.init, "Initial checkpoint for an agnostic stage");
  t->add_option("--set", train.overrides, "Config override key=value (repeatable)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--manifest", ev.manifest, "Manifest")->required();
  e->add_option("--split", ev.split, "train, dev, test or all");
  e->add_flag("--oracle", ev.oracle, "Also evaluate with ground-truth routing");
  e->add_option("--csv", ev.csv, "Directory for CSV outputs");

  std::string dec_ckpt, dec_feats;
  auto* d = app.add_subcommand("decode", "Greedy-decode one feature file");
  d->add_option("--ckpt", dec_ckpt, "Checkpoint")->required();
  d->add_option("--features", dec_feats, "Feature file")->required();

  InspectArgs ins;
  auto* r = app.add_subcommand("inspect-routing", "Write the mean gating matrix of one MoE layer");
  r->add_option("--ckpt", ins.ckpt, "Checkpoint")->required();
  r->add_option("--manifest", ins.manifest, "Manifest")->required();
  r->add_option("--layer", ins.layer, "MoE layer, 1-based (default: last)");
  r->add_option("--out", ins.out, "CSV output (default: stdout)");
  r->add_option("--split", ins.split, "train, dev, test or all");
  r->add_option("--alpha", ins.alpha, "none (label-free), inf (forced), or config");

  std::string probe_manifest;
  auto* p = app.add_subcommand("probe", "Linear accent probe on mean-pooled features");
  p->add_option("--manifest", probe_manifest, "Manifest")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(train);
    if (*e) return run_eval(ev);
    if (*d) return run_decode(dec_ckpt, dec_feats);
    if (*r) return run_inspect(ins);
    if (*p) return run_probe(probe_manifest);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const InputError& err) {
    std::cerr << "input error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
