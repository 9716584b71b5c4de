#pragma once

// Bidirectional word<->index map with reserved PAD/BOS/EOS/UNK slots.
//
// File format (`#mixer-vocab v1`): header line, then one token per line;
// the token on the i-th line after the header has index kReserved + i.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mixer {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary() {
    for (const char* w : {"<pad>", "\xE2\x88\x85", "</s>", "<unk>"}) push(w);
  }

  int size() const { return static_cast<int>(words_.size()); }

  const std::string& word(int idx) const {
    if (idx < 0 || idx >= size()) throw CorpusError("vocab: index out of range");
    return words_[static_cast<std::size_t>(idx)];
  }

  // UNK fallback for unknown surfaces.
  int encode_word(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& w) const { return index_.count(w) != 0; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(encode_word(t));
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += word(ids[i]);
    }
    return out;
  }

  // Words with count < min_count map to UNK. Indices are assigned by
  // descending count, ties broken by first occurrence.
  static Vocabulary build(const std::vector<std::vector<std::string>>& streams, int min_count) {
    if (min_count < 1) throw CorpusError("build_vocab: min_count must be >= 1");
    std::unordered_map<std::string, std::pair<long, long>> stats;  // count, first pos
    long pos = 0;
    for (const auto& stream : streams)
      for (const auto& tok : stream) {
        auto [it, inserted] = stats.try_emplace(tok, 0L, pos);
        ++it->second.first;
        ++pos;
      }
    if (pos == 0) throw CorpusError("build_vocab: empty corpus");

    std::vector<const std::pair<const std::string, std::pair<long, long>>*> kept;
    for (const auto& kv : stats)
      if (kv.second.first >= min_count) kept.push_back(&kv);
    std::sort(kept.begin(), kept.end(), [](const auto* a, const auto* b) {
      if (a->second.first != b->second.first) return a->second.first > b->second.first;
      return a->second.second < b->second.second;
    });

    Vocabulary v;
    for (const auto* kv : kept) v.push(kv->first);
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw CorpusError("vocab: cannot write " + path);
    out << "#mixer-vocab v1\n";
    for (int i = kReserved; i < size(); ++i) out << words_[static_cast<std::size_t>(i)] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("vocab: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "#mixer-vocab v1")
      throw CorpusError("vocab: bad header in " + path);
    Vocabulary v;
    while (std::getline(in, line))
      if (!line.empty()) v.push(line);
    return v;
  }

 private:
  void push(const std::string& w) {
    index_.emplace(w, size());
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace mixer
