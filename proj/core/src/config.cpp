// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "moectc/errors.hpp"

namespace moectc {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field int_field(T RunConfig::*group, int T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*group).*member = parse_int<int>(k, v); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <typename T>
Field double_field(T RunConfig::*group, double T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*group).*member = parse_double(k, v); },
          [=](const RunConfig& c) { return format_double((c.*group).*member); }};
}

Field moe_int(int MoeConfig::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.model.moe.*member = parse_int<int>(k, v); },
          [=](const RunConfig& c) { return std::to_string(c.model.moe.*member); }};
}

Field moe_double(double MoeConfig::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { c.model.moe.*member = parse_double(k, v); },
          [=](const RunConfig& c) { return format_double(c.model.moe.*member); }};
}

// Ordered table of keys; the order defines the normalized text.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.push_back({"seed",
                 {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_int<std::uint64_t>(k, v); },
                  [](const RunConfig& c) { return std::to_string(c.seed); }}});
    t.push_back({"data.manifest", {[](RunConfig& c, const std::string&, const std::string& v) { c.manifest = v; },
                                   [](const RunConfig& c) { return c.manifest; }}});
    t.push_back({"model.variant",
                 {[](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = parse_variant(v); },
                  [](const RunConfig& c) { return to_string(c.model.variant); }}});
    t.push_back({"model.d_model", int_field(&RunConfig::model, &ModelConfig::d_model)});
    t.push_back({"model.num_blocks", int_field(&RunConfig::model, &ModelConfig::num_blocks)});
    t.push_back({"model.d_input", int_field(&RunConfig::model, &ModelConfig::d_input)});
    t.push_back({"model.subsample", int_field(&RunConfig::model, &ModelConfig::subsample)});
    t.push_back({"model.inter_lambda", double_field(&RunConfig::model, &ModelConfig::inter_lambda)});
    t.push_back({"model.vocab", {[](RunConfig& c, const std::string& k, const std::string& v) {
                                   if (v != "characters") throw ConfigError(k + ": only 'characters' is supported");
                                   c.model.vocab = Vocabulary::characters();
                                 },
                                 [](const RunConfig&) { return std::string("characters"); }}});
    t.push_back({"moe.num_experts", moe_int(&MoeConfig::num_experts)});
    t.push_back({"moe.top_k", moe_int(&MoeConfig::top_k)});
    t.push_back({"moe.alpha", {[](RunConfig& c, const std::string&, const std::string& v) {
                                 c.model.moe.alpha = BiasStrength::parse(v);
                               },
                               [](const RunConfig& c) {
                                 return c.model.moe.alpha.infinite ? std::string("inf")
                                                                   : format_double(c.model.moe.alpha.value);
                               }}});
    t.push_back({"moe.beta", {[](RunConfig& c, const std::string& k, const std::string& v) {
                                if (v == "auto") c.model.moe.beta.reset();
                                else c.model.moe.beta = parse_double(k, v);
                              },
                              [](const RunConfig& c) {
                                return c.model.moe.beta ? format_double(*c.model.moe.beta) : std::string("auto");
                              }}});
    t.push_back({"moe.gamma", moe_double(&MoeConfig::gamma)});
    t.push_back({"moe.insert_layers", {[](RunConfig& c, const std::string& k, const std::string& v) {
                                         c.model.moe.insert_layers = parse_int_list(k, v);
                                       },
                                       [](const RunConfig& c) {
                                         std::string s;
                                         for (int l : c.model.moe.insert_layers) {
                                           if (!s.empty()) s += ",";
                                           s += std::to_string(l);
                                         }
                                         return s;
                                       }}});
    t.push_back({"moe.head_sharing", {[](RunConfig& c, const std::string&, const std::string& v) {
                                        c.model.moe.head_sharing = parse_head_sharing(v);
                                      },
                                      [](const RunConfig& c) { return to_string(c.model.moe.head_sharing); }}});
    t.push_back({"moe.num_designated", moe_int(&MoeConfig::num_designated)});
    t.push_back({"moe.spare_fraction", moe_double(&MoeConfig::spare_fraction)});
    t.push_back({"train.batch_size", int_field(&RunConfig::train, &TrainConfig::batch_size)});
    t.push_back({"train.warmup_fraction", double_field(&RunConfig::train, &TrainConfig::warmup_fraction)});
    t.push_back({"train.weight_decay", double_field(&RunConfig::train, &TrainConfig::weight_decay)});
    t.push_back({"train.adam_beta1", double_field(&RunConfig::train, &TrainConfig::adam_beta1)});
    t.push_back({"train.adam_beta2", double_field(&RunConfig::train, &TrainConfig::adam_beta2)});
    t.push_back({"train.adam_eps", double_field(&RunConfig::train, &TrainConfig::adam_eps)});
    t.push_back({"train.stage1_epochs", int_field(&RunConfig::train, &TrainConfig::stage1_epochs)});
    t.push_back({"train.stage1_lr", double_field(&RunConfig::train, &TrainConfig::stage1_lr)});
    t.push_back({"train.stage2_epochs", int_field(&RunConfig::train, &TrainConfig::stage2_epochs)});
    t.push_back({"train.stage2_lr", double_field(&RunConfig::train, &TrainConfig::stage2_lr)});
    t.push_back({"train.agnostic_epochs", int_field(&RunConfig::train, &TrainConfig::agnostic_epochs)});
    t.push_back({"train.agnostic_lr", double_field(&RunConfig::train, &TrainConfig::agnostic_lr)});
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("train.warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw ConfigError("train.adam_beta1/2 must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("train.adam_eps must be > 0");
  if (stage1_epochs < 0 || stage2_epochs < 0 || agnostic_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (stage1_lr < 0.0 || stage2_lr < 0.0 || agnostic_lr < 0.0) throw ConfigError("learning rates must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
  f->set(config, key, value);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_text(config);
  if (!out) throw IoError("failed writing config " + path.string());
}

}  // namespace moectc
