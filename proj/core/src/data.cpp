// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "moectc/binary_io.hpp"
#include "moectc/errors.hpp"
#include "moectc/rng.hpp"

namespace moectc {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor to_tensor(const Mat& m) {
  Tensor t({m.rows(), m.cols()});
  Eigen::Map<Mat>(t.data(), m.rows(), m.cols()) = m;
  return t;
}

Mat to_mat(const Tensor& t) { return Eigen::Map<const Mat>(t.data(), t.dim(0), t.dim(1)); }

// Nearest orthogonal matrix (polar factor).
Mat orthonormalize(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

Tensor normal_vector(Rng& rng, int n, double scale) {
  Tensor t({n});
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

struct Prototype {
  std::vector<Tensor> frames;  // each [Din]
};

// Prototypes for the corpus alphabet followed by the space.
std::map<char, Prototype> make_prototypes(const GenOptions& o) {
  std::map<char, Prototype> out;
  std::string symbols(kCorpusAlphabet);
  symbols += ' ';
  for (char c : symbols) {
    Rng rng(derive_seed(o.seed, "prototype", static_cast<unsigned char>(c)));
    Prototype p;
    const int n = 2 + static_cast<int>(rng.index(2));
    for (int f = 0; f < n; ++f) p.frames.push_back(normal_vector(rng, o.d_input, 1.0));
    out.emplace(c, std::move(p));
  }
  return out;
}

std::string random_text(Rng& rng) {
  const int words = static_cast<int>(rng.integer(3, 12));
  std::string text;
  for (int w = 0; w < words; ++w) {
    if (w > 0) text += ' ';
    const int len = static_cast<int>(rng.integer(1, 5));
    for (int i = 0; i < len; ++i) text += kCorpusAlphabet[rng.index(kCorpusAlphabet.size())];
  }
  return text;
}

Tensor render(const std::string& text, const AccentSpec& accent, const std::map<char, Prototype>& protos,
              const GenOptions& o, Rng& rng) {
  const Mat rot = to_mat(accent.rotation);
  const Eigen::Map<const Eigen::VectorXd> offset(accent.offset.data(), o.d_input);
  std::vector<Eigen::VectorXd> frames;
  auto emit = [&](const Eigen::VectorXd& clean) {
    Eigen::VectorXd v = clean + offset;
    for (int d = 0; d < o.d_input; ++d) v[d] += o.noise * rng.normal();
    frames.push_back(std::move(v));
  };
  char prev = '\0';
  for (char c : text) {
    if (c == prev) {
      // Gap before a repeated symbol keeps the transcript alignable.
      for (int g = 0; g < o.subsample; ++g) emit(Eigen::VectorXd::Zero(o.d_input));
    }
    for (const Tensor& f : protos.at(c).frames) {
      const Eigen::VectorXd clean = rot * Eigen::Map<const Eigen::VectorXd>(f.data(), o.d_input);
      for (int r = 0; r < accent.duration; ++r) emit(clean);
    }
    prev = c;
  }
  Tensor t({static_cast<std::int64_t>(frames.size()), o.d_input});
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (int d = 0; d < o.d_input; ++d) t.at(static_cast<std::int64_t>(i), d) = frames[i][d];
  return t;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "dev") return Split::dev;
  if (text == "test") return Split::test;
  throw InputError("unknown split '" + text + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<const Utterance*> Corpus::select(Split split) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances)
    if (u.split == split) out.push_back(&u);
  return out;
}

void GenOptions::validate() const {
  if (utts_per_accent < 1) throw ConfigError("utts_per_accent must be >= 1");
  if (num_seen < 1) throw ConfigError("num_seen must be >= 1");
  if (num_unseen < 0) throw ConfigError("num_unseen must be >= 0");
  if (num_unseen > 0 && num_seen < 2) throw ConfigError("unseen accents need at least two seen accents");
  if (d_input < 1) throw ConfigError("d_input must be >= 1");
  if (subsample != 1 && subsample != 2) throw ConfigError("subsample must be 1 or 2");
  if (noise < 0.0) throw ConfigError("noise must be >= 0");
}

std::vector<std::string> default_seen_accents(int n) {
  static const std::vector<std::string> names{"aus", "can", "eng", "sct", "us"};
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i)
    out.push_back(i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : "seen" + std::to_string(i));
  return out;
}

std::vector<std::string> default_unseen_accents(int n) {
  static const std::vector<std::string> names{"afr", "hkg", "ind", "irl"};
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i)
    out.push_back(i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : "unseen" + std::to_string(i));
  return out;
}

std::vector<AccentSpec> make_accent_specs(const GenOptions& o) {
  o.validate();
  const int D = o.d_input;
  std::vector<AccentSpec> specs;
  const auto seen = default_seen_accents(o.num_seen);
  const auto unseen = default_unseen_accents(o.num_unseen);
  for (int a = 0; a < o.num_seen; ++a) {
    AccentSpec s;
    s.name = seen[static_cast<std::size_t>(a)];
    if (o.identity_transforms) {
      s.rotation = to_tensor(Mat::Identity(D, D));
      s.offset = Tensor({D}, 0.0);
    } else {
      Rng rng(derive_seed(o.seed, "accent", static_cast<std::uint64_t>(a)));
      Mat g(D, D);
      for (int i = 0; i < D * D; ++i) g.data()[i] = rng.normal();
      s.rotation = to_tensor(orthonormalize(Mat::Identity(D, D) + o.rotation_strength / std::sqrt(D) * g));
      s.duration = 1 + static_cast<int>(rng.index(2));
      s.offset = normal_vector(rng, D, o.offset_scale);
    }
    specs.push_back(std::move(s));
  }
  for (int u = 0; u < o.num_unseen; ++u) {
    AccentSpec s;
    s.name = unseen[static_cast<std::size_t>(u)];
    Rng rng(derive_seed(o.seed, "unseen-accent", static_cast<std::uint64_t>(u)));
    const int p1 = static_cast<int>(rng.index(static_cast<std::uint64_t>(o.num_seen)));
    int p2 = static_cast<int>(rng.index(static_cast<std::uint64_t>(o.num_seen - 1)));
    if (p2 >= p1) ++p2;
    const double w = rng.uniform(0.3, 0.7);
    s.parents = {{p1, w}, {p2, 1.0 - w}};
    const auto& a = specs[static_cast<std::size_t>(p1)];
    const auto& b = specs[static_cast<std::size_t>(p2)];
    if (o.identity_transforms) {
      s.rotation = a.rotation;
      s.offset = Tensor({D}, 0.0);
    } else {
      s.rotation = to_tensor(orthonormalize(w * to_mat(a.rotation) + (1.0 - w) * to_mat(b.rotation)));
      s.offset = normal_vector(rng, D, 0.5 * o.offset_scale);
      for (int d = 0; d < D; ++d) s.offset[d] += w * a.offset[d] + (1.0 - w) * b.offset[d];
      s.duration = w >= 0.5 ? a.duration : b.duration;
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

Corpus gen_corpus(const GenOptions& o) {
  const auto specs = make_accent_specs(o);
  const auto protos = make_prototypes(o);
  Corpus corpus;
  for (int a = 0; a < o.num_seen; ++a) corpus.accents.push_back(specs[static_cast<std::size_t>(a)].name);

  const int held_out = (o.utts_per_accent + 9) / 10;
  std::set<std::string> train_texts;
  std::uint64_t index = 0;
  auto make = [&](int spec_index, Split split, int k) {
    const auto& spec = specs[static_cast<std::size_t>(spec_index)];
    Rng rng(derive_seed(o.seed, "utterance", index++));
    std::string text = random_text(rng);
    if (split == Split::train) {
      train_texts.insert(text);
    } else {
      while (train_texts.contains(text)) text = random_text(rng);
    }
    Utterance u;
    char num[16];
    std::snprintf(num, sizeof(num), "%04d", k);
    u.id = spec.name + "-" + to_string(split) + "-" + num;
    u.feature_path = "feats/" + u.id + ".feat";
    u.text = text;
    u.accent = spec.name;
    u.accent_index = spec_index < o.num_seen ? spec_index : -1;
    u.split = split;
    u.features = render(text, spec, protos, o, rng);
    corpus.utterances.push_back(std::move(u));
  };
  for (int a = 0; a < o.num_seen; ++a)
    for (int k = 0; k < o.utts_per_accent; ++k) make(a, Split::train, k);
  for (int a = 0; a < o.num_seen; ++a)
    for (int k = 0; k < held_out; ++k) make(a, Split::dev, k);
  for (int a = 0; a < o.num_seen + o.num_unseen; ++a)
    for (int k = 0; k < held_out; ++k) make(a, Split::test, k);
  return corpus;
}

std::string normalize_text(std::string_view raw) {
  std::string kept;
  for (char ch : raw) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      kept += ' ';
    } else if ((c >= 'a' && c <= 'z') || c == '\'') {
      kept += static_cast<char>(c);
    }
  }
  std::string out;
  for (char c : kept) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
    out += c;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  if (out.empty()) throw InputError("text is empty after normalization: '" + std::string(raw) + "'");
  return out;
}

void write_manifest(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "#accents";
  for (const auto& a : corpus.accents) out << '\t' << a;
  out << '\n';
  for (const auto& u : corpus.utterances) {
    out << u.id << '\t' << u.feature_path << '\t' << u.text << '\t' << u.accent << '\t' << u.accent_index << '\t'
        << to_string(u.split) << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

Corpus read_manifest(const std::filesystem::path& path, bool load_features) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Corpus corpus;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.starts_with("#accents")) {
      auto fields = split_tabs(line);
      if (!corpus.accents.empty() || !corpus.utterances.empty()) fail("#accents header must come first and once");
      corpus.accents.assign(fields.begin() + 1, fields.end());
      continue;
    }
    if (line[0] == '#') continue;
    auto f = split_tabs(line);
    if (f.size() != 6) fail("expected 6 tab-separated fields, got " + std::to_string(f.size()));
    Utterance u;
    u.id = f[0];
    u.feature_path = f[1];
    u.text = f[2];
    u.accent = f[3];
    if (u.id.empty() || u.feature_path.empty() || u.accent.empty()) fail("empty field");
    if (!ids.insert(u.id).second) fail("duplicate id '" + u.id + "'");
    try {
      if (normalize_text(u.text) != u.text) fail("text is not normalized: '" + u.text + "'");
      u.split = parse_split(f[5]);
    } catch (const InputError& e) {
      if (std::string(e.what()).starts_with(path.string())) throw;
      fail(e.what());
    }
    std::size_t used = 0;
    int index = 0;
    try {
      index = std::stoi(f[4], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f[4].size() || f[4].empty()) fail("accent index '" + f[4] + "' is not an integer");
    const auto known = std::find(corpus.accents.begin(), corpus.accents.end(), u.accent);
    if (index >= 0) {
      if (index >= static_cast<int>(corpus.accents.size()) || corpus.accents[static_cast<std::size_t>(index)] != u.accent) {
        fail("unknown accent '" + u.accent + "' with index " + std::to_string(index));
      }
    } else if (index == -1) {
      if (known != corpus.accents.end()) fail("seen accent '" + u.accent + "' marked as unseen");
    } else {
      fail("accent index must be >= -1");
    }
    u.accent_index = index;
    if (load_features) {
      std::filesystem::path fp(u.feature_path);
      if (fp.is_relative()) fp = path.parent_path() / fp;
      u.features = read_features(fp);
    }
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& u : corpus.utterances) {
    const auto fp = dir / u.feature_path;
    std::filesystem::create_directories(fp.parent_path(), ec);
    if (ec) throw IoError("cannot create " + fp.parent_path().string() + ": " + ec.message());
    write_features(u.features, fp);
  }
  write_manifest(corpus, dir / "manifest.tsv");
}

void write_features(const Tensor& features, const std::filesystem::path& path) {
  if (features.rank() != 2) throw InputError("features must be [T, Din]");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write features " + path.string());
  out.write("FEAT", 4);
  binio::write_u32(out, 1);
  binio::write_u64(out, static_cast<std::uint64_t>(features.dim(0)));
  binio::write_u64(out, static_cast<std::uint64_t>(features.dim(1)));
  for (double v : features.values()) binio::write_f64(out, v);
  if (!out) throw IoError("failed writing features " + path.string());
}

Tensor read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open features " + path.string());
  try {
    binio::expect_magic(in, "FEAT", 4, "feature file");
    const auto version = binio::read_u32(in);
    if (version != 1) throw IoError("unsupported feature version " + std::to_string(version));
    const auto T = binio::read_u64(in);
    const auto D = binio::read_u64(in);
    if (T > (1u << 24) || D > (1u << 16)) throw IoError("implausible feature dimensions");
    Tensor t({static_cast<std::int64_t>(T), static_cast<std::int64_t>(D)});
    for (auto& v : t.values()) v = binio::read_f64(in);
    return t;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

bool ctc_feasible(const Utterance& utt, const Vocabulary& vocab, int subsample) {
  const Transcript y = vocab.encode(utt.text);
  const std::int64_t frames = (utt.features.dim(0) + subsample - 1) / subsample;
  return frames >= min_frames(y);
}

ProbeResult linear_probe(const Corpus& corpus, Split fit, Split eval, std::uint64_t seed) {
  const int A = static_cast<int>(corpus.accents.size());
  if (A < 1) throw InputError("linear_probe: corpus has no seen accents");
  auto pooled = [&](Split split, std::vector<Eigen::VectorXd>& xs, std::vector<int>& ys) {
    for (const Utterance* u : corpus.select(split)) {
      if (!u->seen()) continue;
      if (u->features.size() == 0) throw InputError("linear_probe: features not loaded for " + u->id);
      const Mat f = to_mat(u->features);
      xs.push_back(f.colwise().mean().transpose());
      ys.push_back(u->accent_index);
    }
  };
  std::vector<Eigen::VectorXd> xf, xe;
  std::vector<int> yf, ye;
  pooled(fit, xf, yf);
  pooled(eval, xe, ye);
  if (xf.empty()) throw InputError("linear_probe: no seen-accent utterances to fit");
  const auto D = xf[0].size();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(D), sd = Eigen::VectorXd::Zero(D);
  for (const auto& x : xf) mean += x;
  mean /= static_cast<double>(xf.size());
  for (const auto& x : xf) sd += (x - mean).cwiseAbs2();
  sd = (sd / static_cast<double>(xf.size())).cwiseSqrt().cwiseMax(1e-8);
  auto standardize = [&](std::vector<Eigen::VectorXd>& xs) {
    for (auto& x : xs) x = (x - mean).cwiseQuotient(sd);
  };
  standardize(xf);
  standardize(xe);

  Rng rng(derive_seed(seed, "probe"));
  Mat w(D, A);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.01 * rng.normal();
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(A);
  const double lr = 0.5, l2 = 1e-4;
  const auto n = static_cast<double>(xf.size());
  for (int iter = 0; iter < 500; ++iter) {
    Mat gw = l2 * w;
    Eigen::RowVectorXd gb = Eigen::RowVectorXd::Zero(A);
    for (std::size_t i = 0; i < xf.size(); ++i) {
      Eigen::RowVectorXd z = xf[i].transpose() * w + b;
      z.array() -= z.maxCoeff();
      Eigen::RowVectorXd p = z.array().exp();
      p /= p.sum();
      p[yf[i]] -= 1.0;
      gw += xf[i] * p / n;
      gb += p / n;
    }
    w -= lr * gw;
    b -= lr * gb;
  }
  auto accuracy = [&](const std::vector<Eigen::VectorXd>& xs, const std::vector<int>& ys) {
    if (xs.empty()) return 0.0;
    int correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Eigen::RowVectorXd z = xs[i].transpose() * w + b;
      Eigen::Index best = 0;
      z.maxCoeff(&best);
      correct += static_cast<int>(best) == ys[i];
    }
    return static_cast<double>(correct) / static_cast<double>(xs.size());
  };
  return {accuracy(xf, yf), accuracy(xe, ye), 1.0 / A};
}

}  // namespace moectc
