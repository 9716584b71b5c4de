#pragma once

// Reward / evaluation metrics: BLEU up to 4-grams with brevity penalty
// (sentence- and corpus-level) and ROUGE-2 recall. All metrics see token
// indices only, so they are invariant under consistent re-indexing.

#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <vector>

namespace mixer {

constexpr int kBleuOrder = 4;

using NGramCounts = std::map<std::vector<int>, long>;

inline NGramCounts count_ngrams(const std::vector<int>& seq, int n) {
  NGramCounts counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<int>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

// Sufficient statistics for BLEU; additive across segments, which is what
// makes corpus-level BLEU a sum of per-sentence stats.
struct BleuStats {
  long matched[kBleuOrder] = {0, 0, 0, 0};
  long total[kBleuOrder] = {0, 0, 0, 0};
  long cand_len = 0;
  long ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < kBleuOrder; ++n) {
      matched[n] += o.matched[n];
      total[n] += o.total[n];
    }
    cand_len += o.cand_len;
    ref_len += o.ref_len;
    return *this;
  }
};

// Clipped n-gram matches against the max count over references; the effective
// reference length is the one closest to the candidate length (ties: shorter).
inline BleuStats bleu_stats(const std::vector<int>& candidate,
                            const std::vector<std::vector<int>>& references) {
  if (references.empty()) throw std::invalid_argument("bleu_stats: need at least one reference");
  BleuStats s;
  s.cand_len = static_cast<long>(candidate.size());

  long best_ref = static_cast<long>(references[0].size());
  for (const auto& ref : references) {
    const long rl = static_cast<long>(ref.size());
    const long d_new = std::labs(rl - s.cand_len);
    const long d_old = std::labs(best_ref - s.cand_len);
    if (d_new < d_old || (d_new == d_old && rl < best_ref)) best_ref = rl;
  }
  s.ref_len = best_ref;

  if (candidate.empty()) return s;  // zero-stats, not an error

  for (int n = 1; n <= kBleuOrder; ++n) {
    const auto cand_counts = count_ngrams(candidate, n);
    NGramCounts ref_max;
    for (const auto& ref : references)
      for (const auto& [gram, cnt] : count_ngrams(ref, n)) {
        auto& slot = ref_max[gram];
        if (cnt > slot) slot = cnt;
      }
    for (const auto& [gram, cnt] : cand_counts) {
      s.total[n - 1] += cnt;
      auto it = ref_max.find(gram);
      if (it != ref_max.end()) s.matched[n - 1] += std::min(cnt, it->second);
    }
  }
  return s;
}

enum class BleuSmoothing { none, add_k };

// BLEU = BP * exp(1/4 sum_n ln p_n), BP = 1 if c > r else exp(1 - r/c).
// With smoothing none, any zero (or undefined) precision gives 0; with add_k,
// zero precisions are floored at eps so partial matches keep a usable reward.
inline double bleu_score(const BleuStats& s, BleuSmoothing smoothing = BleuSmoothing::none,
                         double eps = 1e-9) {
  if (s.cand_len == 0) return 0.0;
  double log_prec = 0.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    if (s.matched[n] > 0 && s.total[n] > 0) {
      log_prec += std::log(static_cast<double>(s.matched[n]) / static_cast<double>(s.total[n]));
    } else if (smoothing == BleuSmoothing::add_k) {
      log_prec += std::log(eps);
    } else {
      return 0.0;
    }
  }
  const double bp =
      (s.cand_len > s.ref_len)
          ? 1.0
          : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.cand_len));
  return bp * std::exp(log_prec / kBleuOrder);
}

inline double sentence_bleu(const std::vector<int>& candidate,
                            const std::vector<std::vector<int>>& references,
                            BleuSmoothing smoothing = BleuSmoothing::add_k, double eps = 1e-9) {
  return bleu_score(bleu_stats(candidate, references), smoothing, eps);
}

// Max over single-reference scores (captioning-style ref_reduce=max);
// the pooled-clip route is bleu_stats on all references at once.
inline double sentence_bleu_max_ref(const std::vector<int>& candidate,
                                    const std::vector<std::vector<int>>& references,
                                    BleuSmoothing smoothing = BleuSmoothing::add_k,
                                    double eps = 1e-9) {
  double best = 0.0;
  for (const auto& ref : references)
    best = std::max(best, sentence_bleu(candidate, {ref}, smoothing, eps));
  return best;
}

// Recall over bigrams: clipped matched bigrams / reference bigram count.
// A reference with fewer than two tokens scores 0.
inline double rouge2(const std::vector<int>& candidate, const std::vector<int>& reference) {
  const auto ref_counts = count_ngrams(reference, 2);
  long ref_total = 0;
  for (const auto& [gram, cnt] : ref_counts) ref_total += cnt;
  if (ref_total == 0) return 0.0;
  long matched = 0;
  const auto cand_counts = count_ngrams(candidate, 2);
  for (const auto& [gram, cnt] : cand_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) matched += std::min(cnt, it->second);
  }
  return static_cast<double>(matched) / static_cast<double>(ref_total);
}

// Unsmoothed BLEU over pooled per-pair statistics.
inline double corpus_bleu(
    const std::vector<std::pair<std::vector<int>, std::vector<std::vector<int>>>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("corpus_bleu: need at least one pair");
  BleuStats pooled;
  for (const auto& [cand, refs] : pairs) pooled += bleu_stats(cand, refs);
  return bleu_score(pooled, BleuSmoothing::none);
}

enum class RewardMetric { bleu, rouge2 };

inline RewardMetric reward_metric_from(const std::string& s) {
  if (s == "bleu") return RewardMetric::bleu;
  if (s == "rouge2") return RewardMetric::rouge2;
  throw std::invalid_argument("unknown reward metric: " + s);
}

// Sentence-level reward used during REINFORCE training: candidate truncated at
// its first EOS by the caller, smoothed BLEU or ROUGE-2 against the reference.
inline double sentence_reward(RewardMetric metric, const std::vector<int>& candidate,
                              const std::vector<int>& reference) {
  switch (metric) {
    case RewardMetric::bleu:
      return sentence_bleu(candidate, {reference});
    case RewardMetric::rouge2:
      return rouge2(candidate, reference);
  }
  return 0.0;
}

}  // namespace mixer
