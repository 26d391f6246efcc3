// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "moectc/ctc.hpp"
#include "moectc/tensor.hpp"

namespace moectc {

enum class Split { train, dev, test };

Split parse_split(const std::string& text);
std::string to_string(Split split);

struct Utterance {
  std::string id;
  std::string feature_path;  // relative to the manifest directory
  std::string text;
  std::string accent;
  int accent_index = -1;  // -1 for unseen accents
  Split split = Split::train;
  Tensor features;  // [T, Din]; empty until loaded
  bool seen() const { return accent_index >= 0; }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Corpus {
  /// Seen accent names in index order.
  std::vector<std::string> accents;
  std::vector<Utterance> utterances;

  std::vector<const Utterance*> select(Split split) const;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// The characters generated texts are drawn from.
inline constexpr std::string_view kCorpusAlphabet = "abdeilmnorst";

struct AccentSpec {
  std::string name;
  Tensor rotation;  // [Din, Din], orthogonal
  int duration = 1;  // each prototype frame is held this many frames
  Tensor offset;     // [Din]
  /// Convex weights over seen accents (unseen accents only).
  std::vector<std::pair<int, double>> parents;
};

struct GenOptions {
  std::uint64_t seed = 1;
  int num_seen = 5;
  int num_unseen = 4;
  int utts_per_accent = 200;
  int d_input = 16;
  int subsample = 2;
  double noise = 0.1;
  double rotation_strength = 0.6;
  double offset_scale = 0.5;
  /// Negative control: every accent uses the identity transform.
  bool identity_transforms = false;

  void validate() const;
};

/// Default accent names: seen first, then unseen.
std::vector<std::string> default_seen_accents(int n);
std::vector<std::string> default_unseen_accents(int n);

std::vector<AccentSpec> make_accent_specs(const GenOptions& options);

/// Generates the whole corpus in memory. Pure function of the options.
Corpus gen_corpus(const GenOptions& options);

/// Lowercase, whitespace collapsed, characters outside the character
/// vocabulary removed. Empty results are InputErrors.
std::string normalize_text(std::string_view raw);

/// Manifest:
///   #accents<TAB>name0<TAB>name1...
///   id<TAB>features<TAB>text<TAB>accent<TAB>index<TAB>split
void write_manifest(const Corpus& corpus, const std::filesystem::path& path);
/// Reads records; with `load_features` also reads every feature file
/// (paths resolved against the manifest directory).
Corpus read_manifest(const std::filesystem::path& path, bool load_features = true);

/// Writes the manifest plus one feature file per utterance under `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Feature file: "FEAT", u32 version, u64 T, u64 Din, T*Din f64, little-endian.
void write_features(const Tensor& features, const std::filesystem::path& path);
Tensor read_features(const std::filesystem::path& path);

/// Frames needed so CTC stays feasible after subsampling.
bool ctc_feasible(const Utterance& utt, const Vocabulary& vocab, int subsample);

struct ProbeResult {
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  double chance = 0.0;
};

/// Multinomial logistic regression on mean-pooled features of seen-accent
/// utterances: fit on `fit`, score on `eval`.
ProbeResult linear_probe(const Corpus& corpus, Split fit, Split eval, std::uint64_t seed = 0);

}  // namespace moectc
