#pragma once

// The four training regimes (XENT, DAD, E2E, MIXER) produce per-position
// logit gradients that model::backward turns into parameter gradients. The
// MIXER driver anneals the teacher-forced prefix length s from T down to 1.
//
// Minibatch protocol: one pass over the shuffled corpus in minibatches,
// per-example gradients merged in example order, meaned, globally rescaled to
// max_norm, then one SGD step. Hidden states reset at every sequence. The
// reward baseline regressor is fit per minibatch and never propagates into
// the recurrent network.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mixer/corpus.hpp"
#include "mixer/decoding.hpp"
#include "mixer/metrics.hpp"
#include "mixer/model.hpp"
#include "mixer/rng.hpp"

namespace mixer {

enum class Regime { xent, dad, e2e, mixer };

inline Regime regime_from(const std::string& s) {
  if (s == "xent") return Regime::xent;
  if (s == "dad") return Regime::dad;
  if (s == "e2e") return Regime::e2e;
  if (s == "mixer") return Regime::mixer;
  throw ShapeError("unknown regime: " + s);
}

struct TrainingSchedule {
  // Algorithm-1 phase parameters
  int n_xent = 20;
  int n_xer = 5;
  int delta = 2;
  int unroll = 16;  // T: max prediction steps per sequence
  // optimization protocol
  double lr = 0.2;
  double lr_baseline = 0.05;
  double max_norm = 10.0;
  int batch = 32;
  int epochs = 10;  // standalone xent / dad / e2e runs
  // DAD annealing: ground-truth feed probability decays linearly
  double dad_p_start = 1.0;
  double dad_p_end = 0.5;
  // E2E annealing: mix width k, and +1 self-fed step every `e2e_stride` epochs
  int e2e_k = 2;
  int e2e_stride = 5;
  RewardMetric reward = RewardMetric::bleu;

  void validate() const {
    if (delta < 1 || n_xent < 1 || n_xer < 1) throw ShapeError("schedule: N_XENT, N_XE+R, delta must be >= 1");
    if (unroll < delta) throw ShapeError("schedule: T must be >= delta");
    if (lr <= 0.0 || max_norm <= 0.0 || batch < 1) throw ShapeError("schedule: bad optimizer settings");
  }
};

// Annealed prefix lengths: T, T-delta, ... while >= 1, with a final s=1 phase
// appended when the arithmetic sequence does not land on it exactly.
inline std::vector<int> mixer_phase_sequence(int unroll, int delta) {
  if (unroll < 1 || delta < 1) throw ShapeError("mixer_phase_sequence: bad arguments");
  std::vector<int> out;
  for (int s = unroll; s >= 1; s -= delta) out.push_back(s);
  if (out.back() != 1) out.push_back(1);
  return out;
}

// ---------------------------------------------------------------------------
// reward baseline (linear regressor over hidden states)

inline double baseline_predict(const ModelParams& p, const Vec& h) {
  double acc = p.baseline_b(0, 0);
  for (int r = 0; r < p.hidden; ++r) acc += p.baseline_w(0, r) * h[static_cast<std::size_t>(r)];
  return acc;
}

// Accumulates the MSE gradient 2(rbar - r) h over a minibatch; apply() takes
// one mean-gradient step on the regressor only.
struct BaselineAccumulator {
  Vec dw;
  double db = 0.0;
  double sqerr = 0.0;
  long n = 0;

  explicit BaselineAccumulator(int hidden) : dw(static_cast<std::size_t>(hidden), 0.0) {}

  void add(const Vec& h, double rbar, double r) {
    const double err = rbar - r;
    for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += 2.0 * err * h[i];
    db += 2.0 * err;
    sqerr += err * err;
    ++n;
  }

  void apply(ModelParams& p, double lr_b) {
    if (n == 0) return;
    const double inv = 1.0 / static_cast<double>(n);
    for (int r = 0; r < p.hidden; ++r) p.baseline_w(0, r) -= lr_b * dw[static_cast<std::size_t>(r)] * inv;
    p.baseline_b(0, 0) -= lr_b * db * inv;
  }

  double mean_sqerr() const { return n ? sqerr / static_cast<double>(n) : 0.0; }
};

// Single-trace fit: predicts rbar_t from every hidden state, then applies one
// mean MSE-gradient step. Returns the predictions made before the update.
inline std::vector<double> baseline_update(ModelParams& p, const RolloutTrace& trace, double r,
                                           double lr_b) {
  BaselineAccumulator acc(p.hidden);
  std::vector<double> rbar;
  rbar.reserve(trace.steps.size());
  for (const auto& st : trace.steps) {
    const double pred = baseline_predict(p, st.h);
    rbar.push_back(pred);
    acc.add(st.h, pred, r);
  }
  acc.apply(p, lr_b);
  return rbar;
}

// ---------------------------------------------------------------------------
// per-example regime gradients

struct ExampleGrads {
  RolloutTrace trace;
  std::vector<Vec> dlogits;  // aligned with trace.steps
  double xent_loss = 0.0;    // sum of -ln p[target] over supervised positions
  long xent_steps = 0;
  double reward = 0.0;
  bool has_reward = false;
  std::vector<std::pair<std::size_t, double>> reinforce_rbar;  // (position, rbar)
};

namespace detail {

// XENT gradient p - onehot(target) and loss -ln p[target] at position i.
inline void add_xent_position(ExampleGrads& eg, std::size_t i, const std::vector<int>& target,
                              int vocab) {
  const StepState& st = eg.trace.steps[i];
  const int y = target[i + 1];
  if (y < 0 || y >= vocab) throw ShapeError("xent: target word out of vocabulary");
  eg.dlogits[i] = st.p;
  eg.dlogits[i][static_cast<std::size_t>(y)] -= 1.0;
  eg.xent_loss += log_sum_exp(st.logits) - st.logits[static_cast<std::size_t>(y)];
  ++eg.xent_steps;
}

inline std::vector<int> truncate_at_eos(const std::vector<int>& words) {
  std::vector<int> out;
  for (int w : words) {
    if (w == Vocabulary::kEos) break;
    out.push_back(w);
  }
  return out;
}

}  // namespace detail

// Teacher-forced cross-entropy: loss = -sum_t ln p_t[target_t].
inline ExampleGrads xent_grads(const ExamplePair& ex, const ModelParams& p, Rng& rng) {
  const std::size_t n = ex.target.size() - 1;
  ExampleGrads eg;
  eg.trace = rollout(ex.source, ex.target, p, uniform_plan(FeedMode::ground_truth, static_cast<int>(n)), rng);
  eg.dlogits.assign(n, Vec());
  for (std::size_t i = 0; i < n; ++i) detail::add_xent_position(eg, i, ex.target, p.vocab);
  return eg;
}

// Gradient view of an existing teacher-forced trace (spec-shaped op).
inline std::pair<std::vector<Vec>, double> xent_grads(const RolloutTrace& trace,
                                                      const std::vector<int>& target, int vocab) {
  if (trace.steps.size() != target.size() - 1)
    throw ShapeError("xent_grads: trace/target length mismatch");
  ExampleGrads eg;
  eg.trace = trace;
  eg.dlogits.assign(trace.steps.size(), Vec());
  for (std::size_t i = 0; i < trace.steps.size(); ++i)
    detail::add_xent_position(eg, i, target, vocab);
  return {std::move(eg.dlogits), eg.xent_loss};
}

// Inputs are ground truth with probability p_truth, else the model's previous
// argmax; the loss always targets the reference next word, and no gradient
// flows through the chosen inputs.
inline ExampleGrads dad_grads(const ExamplePair& ex, const ModelParams& p, double p_truth,
                              Rng& rng) {
  if (p_truth < 0.0 || p_truth > 1.0) throw ShapeError("dad_grads: p_truth out of [0,1]");
  const std::size_t n = ex.target.size() - 1;
  FeedPlan plan;
  plan.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    plan.push_back({rng.uniform01() < p_truth ? FeedMode::ground_truth : FeedMode::model_argmax});
  ExampleGrads eg;
  eg.trace = rollout(ex.source, ex.target, p, plan, rng);
  eg.dlogits.assign(n, Vec());
  for (std::size_t i = 0; i < n; ++i) detail::add_xent_position(eg, i, ex.target, p.vocab);
  return eg;
}

// The last `steps_mixed` input positions carry the renormalized top-k of the
// previous distribution instead of a word; the loss is still XENT against the
// reference and gradients flow through the mix into the previous logits.
inline ExampleGrads e2e_grads(const ExamplePair& ex, const ModelParams& p, int k,
                              int steps_mixed) {
  if (k < 1 || k > p.vocab) throw ShapeError("e2e_grads: k out of range");
  const std::size_t n = ex.target.size() - 1;
  // positions 1..n-1 can feed the next step; clamp the mixed span to them
  const std::size_t mixable = n > 0 ? n - 1 : 0;
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(std::max(steps_mixed, 0)), mixable);
  FeedPlan plan(n, FeedStep{FeedMode::ground_truth});
  for (std::size_t i = n > 1 ? n - 1 - m : 0; i + 1 < n; ++i) plan[i] = {FeedMode::kmax_mix};
  Rng unused(0);
  ExampleGrads eg;
  eg.trace = rollout(ex.source, ex.target, p, plan, unused, k);
  eg.dlogits.assign(n, Vec());
  // mixed positions still carry the XENT loss against the reference
  for (std::size_t i = 0; i < n; ++i) detail::add_xent_position(eg, i, ex.target, p.vocab);
  return eg;
}

// Exactly the policy-gradient update: at sampled positions,
// dL/dlogits = (r - rbar_t)(p - onehot(sampled word)); zero elsewhere.
inline std::vector<Vec> reinforce_grads(const RolloutTrace& trace, double reward,
                                        const std::vector<double>& rbar, int vocab) {
  if (rbar.size() != trace.steps.size())
    throw ShapeError("reinforce_grads: rbar/trace length mismatch");
  std::vector<Vec> dlogits(trace.steps.size(), Vec(static_cast<std::size_t>(vocab), 0.0));
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const StepState& st = trace.steps[i];
    if (st.mode != FeedMode::model_sample) continue;
    const double adv = reward - rbar[i];
    for (int w = 0; w < vocab; ++w)
      dlogits[i][static_cast<std::size_t>(w)] = adv * st.p[static_cast<std::size_t>(w)];
    dlogits[i][static_cast<std::size_t>(st.word)] -= adv;
  }
  return dlogits;
}

// One MIXER sequence: positions 1..s teacher-forced with XENT, positions
// s+1..T sampled with REINFORCE; the reward scores the ground-truth prefix
// plus the sampled suffix (truncated at its first EOS) against the reference.
inline ExampleGrads mixer_example_grads(const ExamplePair& ex, const ModelParams& p, int s,
                                        int unroll, RewardMetric metric, Rng& rng) {
  const std::size_t ref_n = ex.target.size() - 1;
  const std::size_t nx = std::min<std::size_t>(static_cast<std::size_t>(std::max(s, 0)), ref_n);
  ExampleGrads eg;
  if (nx == ref_n) {
    // the whole reference fits in the teacher-forced prefix: plain XENT
    return xent_grads(ex, p, rng);
  }
  FeedPlan plan;
  plan.reserve(static_cast<std::size_t>(unroll));
  for (std::size_t i = 0; i < nx; ++i) plan.push_back({FeedMode::ground_truth});
  for (std::size_t i = nx; i < static_cast<std::size_t>(unroll); ++i)
    plan.push_back({FeedMode::model_sample});
  eg.trace = rollout(ex.source, ex.target, p, plan, rng);
  const std::size_t n = eg.trace.steps.size();
  eg.dlogits.assign(n, Vec(static_cast<std::size_t>(p.vocab), 0.0));
  for (std::size_t i = 0; i < nx; ++i) detail::add_xent_position(eg, i, ex.target, p.vocab);
  if (n <= nx) return eg;  // no sampled suffix (unroll shorter than the prefix)

  const std::vector<int> generated = detail::truncate_at_eos(trace_words(eg.trace));
  eg.reward = sentence_reward(metric, generated, target_content(ex.target));
  eg.has_reward = true;
  for (std::size_t i = nx; i < n; ++i) {
    const StepState& st = eg.trace.steps[i];
    const double rbar = baseline_predict(p, st.h);
    const double adv = eg.reward - rbar;
    for (int w = 0; w < p.vocab; ++w)
      eg.dlogits[i][static_cast<std::size_t>(w)] = adv * st.p[static_cast<std::size_t>(w)];
    eg.dlogits[i][static_cast<std::size_t>(st.word)] -= adv;
    eg.reinforce_rbar.emplace_back(i, rbar);
  }
  return eg;
}

// ---------------------------------------------------------------------------
// epoch driver

// Regime knobs resolved for one epoch.
struct EpochPlanSpec {
  Regime regime = Regime::xent;
  double dad_p_truth = 1.0;
  int e2e_mixed = 0;
  int mixer_s = 0;
};

struct EpochStats {
  double train_loss = 0.0;    // mean XENT loss per supervised position
  double reward_mean = 0.0;   // mean terminal reward over REINFORCE sequences
  double baseline_mse = 0.0;  // mean squared baseline error per REINFORCE step
  long batches = 0;           // SGD updates applied this epoch
};

inline EpochStats train_epoch(const std::vector<ExamplePair>& corpus, ModelParams& params,
                              const TrainingSchedule& sched, const EpochPlanSpec& plan,
                              std::uint64_t seed, int epoch_index) {
  if (corpus.empty()) throw CorpusError("train_epoch: empty corpus");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(Rng::mix(seed ^ 0xA11CEDULL, static_cast<std::uint64_t>(epoch_index), 0));
  shuffle(order, shuffle_rng);

  GradAccumulator acc(params);
  double loss_sum = 0.0;
  long loss_steps = 0;
  double reward_sum = 0.0;
  long reward_n = 0;
  double bl_sqerr = 0.0;
  long bl_steps = 0;
  long batches = 0;

  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(sched.batch));
    acc.zero();
    BaselineAccumulator bacc(params.hidden);
    for (std::size_t slot = start; slot < stop; ++slot) {
      const ExamplePair& ex = corpus[order[slot]];
      Rng ex_rng(Rng::mix(seed, static_cast<std::uint64_t>(epoch_index), slot));
      ExampleGrads eg;
      switch (plan.regime) {
        case Regime::xent:
          eg = xent_grads(ex, params, ex_rng);
          break;
        case Regime::dad:
          eg = dad_grads(ex, params, plan.dad_p_truth, ex_rng);
          break;
        case Regime::e2e:
          eg = e2e_grads(ex, params, sched.e2e_k, plan.e2e_mixed);
          break;
        case Regime::mixer:
          eg = mixer_example_grads(ex, params, plan.mixer_s, sched.unroll, sched.reward, ex_rng);
          break;
      }
      if (!std::isfinite(eg.xent_loss)) throw NumericError("train_epoch: non-finite loss");
      backward(eg.trace, eg.dlogits, params, acc);
      loss_sum += eg.xent_loss;
      loss_steps += eg.xent_steps;
      if (eg.has_reward) {
        reward_sum += eg.reward;
        ++reward_n;
      }
      for (const auto& [pos, rbar] : eg.reinforce_rbar) {
        bacc.add(eg.trace.steps[pos].h, rbar, eg.reward);
        const double err = rbar - eg.reward;
        bl_sqerr += err * err;
        ++bl_steps;
      }
    }
    acc.scale(1.0 / static_cast<double>(stop - start));
    sgd_step(params, acc, sched.lr, sched.max_norm);
    bacc.apply(params, sched.lr_baseline);
    ++batches;
  }

  EpochStats stats;
  stats.batches = batches;
  stats.train_loss = loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0;
  stats.reward_mean = reward_n ? reward_sum / static_cast<double>(reward_n) : 0.0;
  stats.baseline_mse = bl_steps ? bl_sqerr / static_cast<double>(bl_steps) : 0.0;
  return stats;
}

// Mean sentence-level metric of greedy generations against the references.
inline double evaluate_greedy(const std::vector<ExamplePair>& corpus, const ModelParams& params,
                              RewardMetric metric, int gen_max_len) {
  if (corpus.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : corpus) {
    const GenResult gen = greedy_generate(ex.source, params, gen_max_len);
    total += sentence_reward(metric, detail::truncate_at_eos(gen.words), target_content(ex.target));
  }
  return total / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------
// full training runs (metric log: epoch,phase,s,train_loss,val_metric,...)

struct EpochLogRow {
  int epoch = 0;
  std::string phase;
  int s = 0;
  EpochStats stats;
  double val_metric = 0.0;
};

inline void write_log_header(std::ostream& out) {
  out << "epoch,phase,s,train_loss,val_metric,reward_mean,baseline_mse\n";
}

inline void write_log_row(std::ostream& out, const EpochLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%s,%d,%.10g,%.10g,%.10g,%.10g\n", row.epoch,
                row.phase.c_str(), row.s, row.stats.train_loss, row.val_metric,
                row.stats.reward_mean, row.stats.baseline_mse);
  out << buf;
}

// Algorithm-1 driver: s == T trains N_XENT epochs of pure XENT, every other
// phase trains N_XE+R epochs of the mixed XENT/REINFORCE loss.
inline std::vector<EpochLogRow> mixer_train(const std::vector<ExamplePair>& train_set,
                                            const std::vector<ExamplePair>& val_set,
                                            ModelParams& params, const TrainingSchedule& sched,
                                            std::uint64_t seed) {
  sched.validate();
  std::vector<EpochLogRow> rows;
  int epoch = 0;
  for (int s : mixer_phase_sequence(sched.unroll, sched.delta)) {
    const bool pure_xent = s == sched.unroll;
    const int n_epochs = pure_xent ? sched.n_xent : sched.n_xer;
    for (int e = 0; e < n_epochs; ++e) {
      ++epoch;
      EpochPlanSpec plan;
      plan.regime = Regime::mixer;
      plan.mixer_s = s;
      EpochLogRow row;
      row.epoch = epoch;
      row.phase = pure_xent ? "xent" : "xe+r";
      row.s = s;
      row.stats = train_epoch(train_set, params, sched, plan, seed, epoch);
      row.val_metric = evaluate_greedy(val_set, params, sched.reward, sched.unroll);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// Standalone XENT / DAD / E2E runs over sched.epochs with their annealing.
inline std::vector<EpochLogRow> train_regime(Regime regime,
                                             const std::vector<ExamplePair>& train_set,
                                             const std::vector<ExamplePair>& val_set,
                                             ModelParams& params, const TrainingSchedule& sched,
                                             std::uint64_t seed) {
  if (regime == Regime::mixer) return mixer_train(train_set, val_set, params, sched, seed);
  std::vector<EpochLogRow> rows;
  for (int e = 1; e <= sched.epochs; ++e) {
    EpochPlanSpec plan;
    plan.regime = regime;
    std::string phase;
    int s_col = 0;
    switch (regime) {
      case Regime::xent:
        phase = "xent";
        s_col = sched.unroll;
        break;
      case Regime::dad: {
        phase = "dad";
        const double frac = sched.epochs > 1 ? static_cast<double>(e - 1) / (sched.epochs - 1) : 0.0;
        plan.dad_p_truth = sched.dad_p_start + (sched.dad_p_end - sched.dad_p_start) * frac;
        break;
      }
      case Regime::e2e:
        phase = "e2e";
        plan.e2e_mixed = (e - 1) / sched.e2e_stride;
        break;
      case Regime::mixer:
        break;
    }
    EpochLogRow row;
    row.epoch = e;
    row.phase = phase;
    row.s = s_col;
    row.stats = train_epoch(train_set, params, sched, plan, seed, e);
    row.val_metric = evaluate_greedy(val_set, params, sched.reward, sched.unroll);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mixer
