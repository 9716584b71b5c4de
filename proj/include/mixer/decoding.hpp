#pragma once

// Greedy and beam-search generation. Scores accumulate in log space (identical
// ranking to probability products, no underflow at long horizons). Hypotheses
// that emit EOS move to a completed pool and stop expanding; completed and
// ongoing hypotheses compare by total log-probability with no length
// normalization. All ties break deterministically: lower word index when
// expanding, lexicographically smaller word sequence between hypotheses.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mixer/model.hpp"

namespace mixer {

struct Hypothesis {
  std::vector<int> words;  // positions 1.. (BOS excluded); last is EOS iff finished
  double logp = 0.0;
  Vec h;
  Vec cell;
  bool finished = false;
};

struct GenResult {
  std::vector<int> words;
  double logp = 0.0;
};

// One decoder step shared by greedy and beam search.
class DecoderStepper {
 public:
  DecoderStepper(const std::vector<int>& source, const ModelParams& params)
      : params_(params), enc_(encode_source(source, params)) {}

  StepState step(const Vec& h, const Vec& cell, int word) const {
    const AttnOut attn = attentive_context(h, enc_, params_);
    const StepInput x = StepInput::from_word(word);
    return params_.cell == CellKind::elman ? elman_step(x, h, attn.ctx, params_)
                                           : lstm_step(x, h, cell, attn.ctx, params_);
  }

  Vec zero_state() const { return Vec(static_cast<std::size_t>(params_.hidden), 0.0); }

 private:
  const ModelParams& params_;
  EncoderState enc_;
};

// Argmax left-to-right generation; stops at EOS (kept in the output) or after
// t_max positions. Pass eos = -1 to run a fixed t_max steps with no
// termination (enumeration-style decoding).
inline GenResult greedy_generate(const std::vector<int>& source, const ModelParams& params,
                                 int t_max, int eos = Vocabulary::kEos) {
  DecoderStepper stepper(source, params);
  GenResult out;
  Vec h = stepper.zero_state();
  Vec cell = stepper.zero_state();
  int last = Vocabulary::kBos;
  for (int t = 0; t < t_max; ++t) {
    const StepState st = stepper.step(h, cell, last);
    const int w = argmax(st.p);
    out.words.push_back(w);
    out.logp += std::log(st.p[static_cast<std::size_t>(w)]);
    if (eos >= 0 && w == eos) break;
    h = st.h;
    if (params.cell == CellKind::lstm) cell = st.cell;
    last = w;
  }
  return out;
}

namespace detail {

inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.words < b.words;
}

inline std::vector<int> top_k_words(const Vec& p, int k) {
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  const int take = std::min<int>(k, static_cast<int>(p.size()));
  std::partial_sort(order.begin(), order.begin() + take, order.end(), [&](int a, int b) {
    if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)])
      return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(take));
  return order;
}

}  // namespace detail

// Beam search with beam size k: keeps the k highest-scoring partial
// hypotheses per step, expanding each by its k most likely next words.
// Returns the best hypothesis from the completed pool, or from the surviving
// (longest) ongoing ones when nothing completed. With k = 1 this is exactly
// greedy_generate. When `all_ranked` is given it receives the final pool in
// rank order.
inline GenResult beam_generate(const std::vector<int>& source, const ModelParams& params, int k,
                               int t_max, int eos = Vocabulary::kEos,
                               std::vector<GenResult>* all_ranked = nullptr) {
  if (k < 1) throw ShapeError("beam_generate: beam size must be >= 1");
  DecoderStepper stepper(source, params);

  std::vector<Hypothesis> live(1);
  live[0].h = stepper.zero_state();
  live[0].cell = stepper.zero_state();
  std::vector<Hypothesis> completed;

  for (int t = 0; t < t_max && !live.empty(); ++t) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(k));
    for (const Hypothesis& hyp : live) {
      const int last = hyp.words.empty() ? Vocabulary::kBos : hyp.words.back();
      const StepState st = stepper.step(hyp.h, hyp.cell, last);
      for (int w : detail::top_k_words(st.p, k)) {
        Hypothesis child = hyp;
        child.words.push_back(w);
        child.logp += std::log(st.p[static_cast<std::size_t>(w)]);
        child.h = st.h;
        if (params.cell == CellKind::lstm) child.cell = st.cell;
        if (eos >= 0 && w == eos) {
          child.finished = true;
          completed.push_back(std::move(child));
        } else {
          candidates.push_back(std::move(child));
        }
      }
    }
    std::sort(candidates.begin(), candidates.end(), detail::hyp_better);
    if (static_cast<int>(candidates.size()) > k) candidates.resize(static_cast<std::size_t>(k));
    live = std::move(candidates);
  }

  std::vector<Hypothesis>& pool = completed.empty() ? live : completed;
  std::sort(pool.begin(), pool.end(), detail::hyp_better);
  if (all_ranked) {
    all_ranked->clear();
    for (const auto& hyp : pool) all_ranked->push_back({hyp.words, hyp.logp});
  }
  return {pool.front().words, pool.front().logp};
}

// Log-probability of a fixed word sequence under the model (fresh forward
// replay); used to cross-check decoder scores.
inline double sequence_logprob(const std::vector<int>& source, const ModelParams& params,
                               const std::vector<int>& words) {
  DecoderStepper stepper(source, params);
  Vec h = stepper.zero_state();
  Vec cell = stepper.zero_state();
  int last = Vocabulary::kBos;
  double total = 0.0;
  for (int w : words) {
    const StepState st = stepper.step(h, cell, last);
    total += std::log(st.p[static_cast<std::size_t>(w)]);
    h = st.h;
    if (params.cell == CellKind::lstm) cell = st.cell;
    last = w;
  }
  return total;
}

}  // namespace mixer
