#pragma once

// Tokenized corpus ingestion, length cropping, and synthetic desk-scale task
// generation. Corpus file format: UTF-8, one example per line,
// `source<TAB>target`, tokens separated by single spaces.

#include <fstream>
#include <string>
#include <vector>

#include "mixer/rng.hpp"
#include "mixer/vocab.hpp"

namespace mixer {

struct ExamplePair {
  std::vector<int> source;  // word indices, no markers
  std::vector<int> target;  // BOS-prefixed, EOS-suffixed
};

// Keep at most t_max content tokens; a trailing EOS does not count toward
// t_max and is re-appended when the sequence was cropped.
inline std::vector<int> crop(const std::vector<int>& seq, int t_max) {
  if (t_max < 1) throw CorpusError("crop: t_max must be >= 1");
  const bool has_eos = !seq.empty() && seq.back() == Vocabulary::kEos;
  const int content = static_cast<int>(seq.size()) - (has_eos ? 1 : 0);
  if (content <= t_max) return seq;
  std::vector<int> out(seq.begin(), seq.begin() + t_max);
  out.push_back(Vocabulary::kEos);
  return out;
}

inline std::vector<int> wrap_target(std::vector<int> content) {
  std::vector<int> t;
  t.reserve(content.size() + 2);
  t.push_back(Vocabulary::kBos);
  t.insert(t.end(), content.begin(), content.end());
  t.push_back(Vocabulary::kEos);
  return t;
}

// Reference content: target without BOS/EOS markers.
inline std::vector<int> target_content(const std::vector<int>& target) {
  std::vector<int> out;
  for (int w : target)
    if (w != Vocabulary::kBos && w != Vocabulary::kEos) out.push_back(w);
  return out;
}

// Reads `source<TAB>target` lines; target content is cropped to t_max and
// wrapped with BOS/EOS. Lines without a TAB are rejected.
inline std::vector<ExamplePair> read_corpus(const std::string& path, const Vocabulary& vocab,
                                            int t_max) {
  std::ifstream in(path);
  if (!in) throw CorpusError("corpus: cannot read " + path);
  std::vector<ExamplePair> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw CorpusError("corpus: missing TAB at " + path + ":" + std::to_string(lineno));
    ExamplePair ex;
    ex.source = vocab.encode(split_ws(line.substr(0, tab)));
    auto content = crop(vocab.encode(split_ws(line.substr(tab + 1))), t_max);
    if (!content.empty() && content.back() == Vocabulary::kEos) content.pop_back();
    ex.target = wrap_target(std::move(content));
    out.push_back(std::move(ex));
  }
  return out;
}

enum class SyntheticKind { copy, reverse, sort };

inline SyntheticKind synthetic_kind_from(const std::string& s) {
  if (s == "copy") return SyntheticKind::copy;
  if (s == "reverse") return SyntheticKind::reverse;
  if (s == "sort") return SyntheticKind::sort;
  throw CorpusError("unknown synthetic task kind: " + s);
}

// Vocabulary of `n_symbols` surface forms w0..w{n-1} at indices 4..3+n.
inline Vocabulary make_synthetic_vocab(int n_symbols) {
  std::vector<std::vector<std::string>> stream(1);
  for (int i = 0; i < n_symbols; ++i) stream[0].push_back("w" + std::to_string(i));
  return Vocabulary::build(stream, 1);
}

// Deterministic given seed: sources of uniform random symbols with lengths in
// [len_lo, len_hi], targets derived per kind (copy / reverse / ascending sort).
inline std::vector<ExamplePair> gen_synthetic(SyntheticKind kind, int n_symbols, int len_lo,
                                              int len_hi, int n, std::uint64_t seed) {
  if (n_symbols < 4) throw CorpusError("gen_synthetic: need at least 4 symbols");
  if (n < 1 || len_lo < 1 || len_hi < len_lo) throw CorpusError("gen_synthetic: bad sizes");
  Rng rng(seed);
  std::vector<ExamplePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int len = len_lo + rng.uniform_int(len_hi - len_lo + 1);
    ExamplePair ex;
    ex.source.reserve(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j)
      ex.source.push_back(Vocabulary::kReserved + rng.uniform_int(n_symbols));
    std::vector<int> content = ex.source;
    switch (kind) {
      case SyntheticKind::copy:
        break;
      case SyntheticKind::reverse:
        std::reverse(content.begin(), content.end());
        break;
      case SyntheticKind::sort:
        std::sort(content.begin(), content.end());
        break;
    }
    ex.target = wrap_target(std::move(content));
    out.push_back(std::move(ex));
  }
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<ExamplePair>& corpus,
                         const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw CorpusError("corpus: cannot write " + path);
  for (const auto& ex : corpus)
    out << vocab.decode(ex.source) << '\t' << vocab.decode(target_content(ex.target)) << '\n';
}

}  // namespace mixer
