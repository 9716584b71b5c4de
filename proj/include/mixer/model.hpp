#pragma once

// The parametric generator: Elman / LSTM decoder cells conditioned on an
// attention-derived context vector, forward rollouts under per-step feed
// modes, and the hand-derived backward pass (full BPTT over the unrolled
// sequence; hidden state is reset at every sequence).
//
// Step convention: position j (1-based) is produced by consuming the word (or
// sparse mix) at position j-1, the previous hidden state h_{j-1}, and the
// context queried with h_{j-1}. Position 0 is always BOS and h_0 is the zero
// vector. StepState stores everything the backward pass needs.

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mixer/numkern.hpp"
#include "mixer/rng.hpp"
#include "mixer/vocab.hpp"

namespace mixer {

enum class CellKind { elman, lstm };

inline CellKind cell_kind_from(const std::string& s) {
  if (s == "elman") return CellKind::elman;
  if (s == "lstm") return CellKind::lstm;
  throw ShapeError("unknown cell kind: " + s);
}

// Gate order for the LSTM blocks.
enum GateIndex { kGateIn = 0, kGateForget = 1, kGateOut = 2, kGateCand = 3 };

struct ModelParams {
  CellKind cell = CellKind::elman;
  int vocab = 0;    // W
  int hidden = 0;   // H
  int edim = 0;     // d, encoder embedding and context width
  int max_src = 0;  // position-embedding table size
  int window = 5;   // aggregate-embedding window q (odd)

  // Elman decoder, bias-free: h' = sigmoid(In x + Rec h + Ctx c)
  Mat dec_in;   // H x W
  Mat dec_rec;  // H x H
  Mat dec_ctx;  // H x d
  Mat dec_out;  // W x H, logits = dec_out h'

  // LSTM decoder: per gate one block each for input, recurrent and context
  // paths plus a bias, mirroring the context matrix role of the Elman cell.
  std::array<Mat, 4> lstm_in;    // H x W
  std::array<Mat, 4> lstm_rec;   // H x H
  std::array<Mat, 4> lstm_ctx;   // H x d
  std::array<Mat, 4> lstm_bias;  // H x 1

  // Attentive encoder: word embeddings (the PAD row doubles as the learned
  // boundary dummy) and position embeddings.
  Mat enc_word;  // vocab x d
  Mat enc_pos;   // max_src x d

  // Linear reward baseline over hidden states (not part of model SGD).
  Mat baseline_w;  // 1 x H
  Mat baseline_b;  // 1 x 1

  // Learnable tensors touched by the model gradient, in checkpoint order.
  std::vector<std::pair<std::string, Mat*>> model_tensors() {
    std::vector<std::pair<std::string, Mat*>> out;
    if (cell == CellKind::elman) {
      out = {{"dec_in", &dec_in}, {"dec_rec", &dec_rec}, {"dec_ctx", &dec_ctx}};
    } else {
      static const char* gate_names[4] = {"i", "f", "o", "g"};
      for (int g = 0; g < 4; ++g) out.emplace_back(std::string("lstm_in_") + gate_names[g], &lstm_in[g]);
      for (int g = 0; g < 4; ++g) out.emplace_back(std::string("lstm_rec_") + gate_names[g], &lstm_rec[g]);
      for (int g = 0; g < 4; ++g) out.emplace_back(std::string("lstm_ctx_") + gate_names[g], &lstm_ctx[g]);
      for (int g = 0; g < 4; ++g) out.emplace_back(std::string("lstm_bias_") + gate_names[g], &lstm_bias[g]);
    }
    out.emplace_back("dec_out", &dec_out);
    out.emplace_back("enc_word", &enc_word);
    out.emplace_back("enc_pos", &enc_pos);
    return out;
  }

  std::vector<std::pair<std::string, const Mat*>> model_tensors() const {
    auto mut = const_cast<ModelParams*>(this)->model_tensors();
    std::vector<std::pair<std::string, const Mat*>> out;
    out.reserve(mut.size());
    for (auto& [n, m] : mut) out.emplace_back(n, m);
    return out;
  }

  // Everything persisted in a checkpoint.
  std::vector<std::pair<std::string, Mat*>> all_tensors() {
    auto out = model_tensors();
    out.emplace_back("baseline_w", &baseline_w);
    out.emplace_back("baseline_b", &baseline_b);
    return out;
  }
};

// The attention score z_j . h_t couples the encoder embedding width to the
// hidden size, so edim == hidden throughout. Vocabularies smaller than the
// reserved count are allowed for bare fixed-horizon models (enumeration-size
// MDPs); corpus-backed models always have vocab >= 4.
inline ModelParams make_params(CellKind cell, int vocab, int hidden, int max_src, int window) {
  if (vocab < 2 || hidden < 1 || max_src < 1) throw ShapeError("make_params: bad dimensions");
  if (window < 1 || window % 2 == 0) throw ShapeError("make_params: window must be odd");
  ModelParams p;
  p.cell = cell;
  p.vocab = vocab;
  p.hidden = hidden;
  p.edim = hidden;
  p.max_src = max_src;
  p.window = window;
  if (cell == CellKind::elman) {
    p.dec_in = Mat(hidden, vocab);
    p.dec_rec = Mat(hidden, hidden);
    p.dec_ctx = Mat(hidden, p.edim);
  } else {
    for (int g = 0; g < 4; ++g) {
      p.lstm_in[g] = Mat(hidden, vocab);
      p.lstm_rec[g] = Mat(hidden, hidden);
      p.lstm_ctx[g] = Mat(hidden, p.edim);
      p.lstm_bias[g] = Mat(hidden, 1);
    }
  }
  p.dec_out = Mat(vocab, hidden);
  p.enc_word = Mat(vocab, p.edim);
  p.enc_pos = Mat(max_src, p.edim);
  p.baseline_w = Mat(1, hidden);
  p.baseline_b = Mat(1, 1);
  return p;
}

inline void init_params(ModelParams& p, Rng& rng, double scale = 0.05) {
  for (auto& [name, m] : p.all_tensors())
    for (double& v : m->a) v = rng.uniform(-scale, scale);
}

// ---------------------------------------------------------------------------
// gradients

struct GradAccumulator {
  Mat dec_in, dec_rec, dec_ctx, dec_out;
  std::array<Mat, 4> lstm_in, lstm_rec, lstm_ctx, lstm_bias;
  Mat enc_word, enc_pos;
  CellKind cell = CellKind::elman;

  GradAccumulator() = default;
  explicit GradAccumulator(const ModelParams& p) : cell(p.cell) {
    if (p.cell == CellKind::elman) {
      dec_in = Mat(p.hidden, p.vocab);
      dec_rec = Mat(p.hidden, p.hidden);
      dec_ctx = Mat(p.hidden, p.edim);
    } else {
      for (int g = 0; g < 4; ++g) {
        lstm_in[g] = Mat(p.hidden, p.vocab);
        lstm_rec[g] = Mat(p.hidden, p.hidden);
        lstm_ctx[g] = Mat(p.hidden, p.edim);
        lstm_bias[g] = Mat(p.hidden, 1);
      }
    }
    dec_out = Mat(p.vocab, p.hidden);
    enc_word = Mat(p.vocab, p.edim);
    enc_pos = Mat(p.max_src, p.edim);
  }

  // Same order as ModelParams::model_tensors().
  std::vector<Mat*> tensors() {
    std::vector<Mat*> out;
    if (cell == CellKind::elman) {
      out = {&dec_in, &dec_rec, &dec_ctx};
    } else {
      for (int g = 0; g < 4; ++g) out.push_back(&lstm_in[g]);
      for (int g = 0; g < 4; ++g) out.push_back(&lstm_rec[g]);
      for (int g = 0; g < 4; ++g) out.push_back(&lstm_ctx[g]);
      for (int g = 0; g < 4; ++g) out.push_back(&lstm_bias[g]);
    }
    out.push_back(&dec_out);
    out.push_back(&enc_word);
    out.push_back(&enc_pos);
    return out;
  }

  std::vector<const Mat*> tensors() const {
    auto mut = const_cast<GradAccumulator*>(this)->tensors();
    return {mut.begin(), mut.end()};
  }

  void zero() {
    for (Mat* m : tensors()) m->zero();
  }

  void add(const GradAccumulator& o) {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t]->a.size(); ++i) a[t]->a[i] += b[t]->a[i];
  }

  void scale(double s) {
    for (Mat* m : tensors())
      for (double& v : m->a) v *= s;
  }

  Vec flatten() const {
    Vec out;
    for (const Mat* m : tensors()) out.insert(out.end(), m->a.begin(), m->a.end());
    return out;
  }
};

// p <- p - lr * g with global-norm rescaling; baseline tensors untouched.
inline void sgd_step(ModelParams& params, const GradAccumulator& grads, double lr,
                     double max_norm) {
  std::vector<Mat*> ps;
  std::vector<std::string> names;
  for (auto& [n, m] : params.model_tensors()) {
    ps.push_back(m);
    names.push_back(n);
  }
  sgd_step(ps, grads.tensors(), lr, max_norm, &names);
}

// ---------------------------------------------------------------------------
// inputs and step states

// Renormalized top-k slice of a distribution (the k-max layer output).
struct SparseMix {
  std::vector<int> idx;
  Vec val;
};

// Zero all but the k largest entries and renormalize the survivors to sum to
// one. Ties broken toward the lower word index.
inline SparseMix kmax_renormalize(const Vec& p, int k) {
  const int w = static_cast<int>(p.size());
  if (k < 1 || k > w) throw ShapeError("kmax_renormalize: k out of range");
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)])
      return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
    return a < b;
  });
  SparseMix mix;
  mix.idx.assign(order.begin(), order.begin() + k);
  mix.val.resize(static_cast<std::size_t>(k));
  double total = 0.0;
  for (int l = 0; l < k; ++l) {
    mix.val[static_cast<std::size_t>(l)] = p[static_cast<std::size_t>(mix.idx[static_cast<std::size_t>(l)])];
    total += mix.val[static_cast<std::size_t>(l)];
  }
  for (double& v : mix.val) v /= total;
  return mix;
}

struct StepInput {
  int word = -1;
  SparseMix mix;
  bool is_mix() const { return word < 0; }

  static StepInput from_word(int w) {
    StepInput x;
    x.word = w;
    return x;
  }
  static StepInput from_mix(SparseMix m) {
    StepInput x;
    x.mix = std::move(m);
    return x;
  }
};

enum class FeedMode { ground_truth, model_argmax, model_sample, kmax_mix };

struct FeedStep {
  FeedMode mode;
};
using FeedPlan = std::vector<FeedStep>;

inline FeedPlan uniform_plan(FeedMode mode, int n) { return FeedPlan(static_cast<std::size_t>(n), FeedStep{mode}); }

struct StepState {
  StepInput input;  // representation fed into this step
  FeedMode mode = FeedMode::ground_truth;
  int word = -1;       // word chosen at this position (-1 for k-max positions)
  SparseMix mix;       // set when mode == kmax_mix
  Vec ctx, alpha;      // context consumed by this step + attention weights
  Vec h;               // hidden state after this step
  Vec cell;            // LSTM cell state after this step (empty for Elman)
  std::array<Vec, 4> gates;  // LSTM gate activations (empty for Elman)
  Vec logits, p;
};

// ---------------------------------------------------------------------------
// attentive encoder

struct EncoderState {
  std::vector<int> source;
  std::vector<Vec> z;  // aggregate embeddings, one per source position
};

// Aggregate embeddings z_i: mean of full embeddings (word + position) over a
// window of `window` consecutive positions centered at i; boundary positions
// are padded with the learned dummy (the PAD row of enc_word).
inline EncoderState encode_source(const std::vector<int>& source, const ModelParams& p) {
  const int m = static_cast<int>(source.size());
  if (m == 0) throw ShapeError("encode_source: empty source");
  if (m > p.max_src)
    throw ShapeError("encode_source: source length " + std::to_string(m) +
                     " exceeds position table " + std::to_string(p.max_src));
  for (int w : source)
    if (w < 0 || w >= p.vocab) throw ShapeError("encode_source: word index out of range");

  EncoderState enc;
  enc.source = source;
  enc.z.assign(static_cast<std::size_t>(m), Vec(static_cast<std::size_t>(p.edim), 0.0));
  const int half = p.window / 2;
  const double inv_q = 1.0 / static_cast<double>(p.window);
  for (int i = 0; i < m; ++i) {
    Vec& z = enc.z[static_cast<std::size_t>(i)];
    for (int off = -half; off <= half; ++off) {
      const int pos = i + off;
      if (pos >= 0 && pos < m) {
        const double* we = p.enc_word.row(source[static_cast<std::size_t>(pos)]);
        const double* pe = p.enc_pos.row(pos);
        for (int e = 0; e < p.edim; ++e) z[static_cast<std::size_t>(e)] += inv_q * (we[e] + pe[e]);
      } else {
        const double* dummy = p.enc_word.row(Vocabulary::kPad);
        for (int e = 0; e < p.edim; ++e) z[static_cast<std::size_t>(e)] += inv_q * dummy[e];
      }
    }
  }
  return enc;
}

struct AttnOut {
  Vec alpha;  // probability vector over source positions
  Vec ctx;    // alpha-weighted sum of source *word* embeddings
};

inline AttnOut attentive_context(const Vec& h, const EncoderState& enc, const ModelParams& p) {
  const std::size_t m = enc.z.size();
  if (m == 0) throw ShapeError("attentive_context: empty source");
  Vec scores(m);
  for (std::size_t j = 0; j < m; ++j) scores[j] = dot(enc.z[j], h);
  AttnOut out;
  out.alpha = softmax(scores);
  out.ctx.assign(static_cast<std::size_t>(p.edim), 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double* we = p.enc_word.row(enc.source[j]);
    const double aj = out.alpha[j];
    for (int e = 0; e < p.edim; ++e) out.ctx[static_cast<std::size_t>(e)] += aj * we[e];
  }
  return out;
}

// ---------------------------------------------------------------------------
// decoder cells

// u += M columns gathered by the input (one-hot word or weighted mix). The
// one-hot path is the mix path with a single unit weight, so feeding the
// exact one-hot mix of w is bitwise identical to feeding the index w.
inline void add_input_columns(const Mat& m, const StepInput& x, Vec& u) {
  if (x.is_mix()) {
    for (std::size_t l = 0; l < x.mix.idx.size(); ++l) {
      const int col = x.mix.idx[l];
      if (col < 0 || col >= m.cols) throw ShapeError("input word index out of range");
      const double v = x.mix.val[l];
      for (int r = 0; r < m.rows; ++r) u[static_cast<std::size_t>(r)] += v * m(r, col);
    }
  } else {
    if (x.word < 0 || x.word >= m.cols) throw ShapeError("input word index out of range");
    for (int r = 0; r < m.rows; ++r) u[static_cast<std::size_t>(r)] += m(r, x.word);
  }
}

inline StepState elman_step(const StepInput& x, const Vec& h, const Vec& ctx,
                            const ModelParams& p) {
  Vec u(static_cast<std::size_t>(p.hidden), 0.0);
  add_input_columns(p.dec_in, x, u);
  affine_acc(p.dec_rec, h, u);
  affine_acc(p.dec_ctx, ctx, u);
  StepState st;
  st.input = x;
  st.ctx = ctx;
  st.h = sigmoid_vec(u);
  st.logits = affine(p.dec_out, st.h);
  st.p = softmax(st.logits);
  return st;
}

inline StepState lstm_step(const StepInput& x, const Vec& h, const Vec& cell, const Vec& ctx,
                           const ModelParams& p) {
  StepState st;
  st.input = x;
  st.ctx = ctx;
  std::array<Vec, 4> pre;
  for (int g = 0; g < 4; ++g) {
    pre[g].assign(static_cast<std::size_t>(p.hidden), 0.0);
    for (int r = 0; r < p.hidden; ++r) pre[g][static_cast<std::size_t>(r)] = p.lstm_bias[g](r, 0);
    add_input_columns(p.lstm_in[g], x, pre[g]);
    affine_acc(p.lstm_rec[g], h, pre[g]);
    affine_acc(p.lstm_ctx[g], ctx, pre[g]);
  }
  st.gates[kGateIn] = sigmoid_vec(pre[kGateIn]);
  st.gates[kGateForget] = sigmoid_vec(pre[kGateForget]);
  st.gates[kGateOut] = sigmoid_vec(pre[kGateOut]);
  st.gates[kGateCand] = tanh_vec(pre[kGateCand]);
  st.cell.resize(static_cast<std::size_t>(p.hidden));
  st.h.resize(static_cast<std::size_t>(p.hidden));
  for (int r = 0; r < p.hidden; ++r) {
    const std::size_t i = static_cast<std::size_t>(r);
    st.cell[i] = st.gates[kGateForget][i] * cell[i] + st.gates[kGateIn][i] * st.gates[kGateCand][i];
    st.h[i] = st.gates[kGateOut][i] * std::tanh(st.cell[i]);
  }
  st.logits = affine(p.dec_out, st.h);
  st.p = softmax(st.logits);
  return st;
}

// ---------------------------------------------------------------------------
// rollout

struct RolloutTrace {
  EncoderState enc;
  std::vector<StepState> steps;  // positions 1..n
  double reward = 0.0;           // filled by REINFORCE-bearing regimes
};

inline int argmax(const Vec& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Executes positions 1..plan.size() left to right. Per position the feed mode
// decides how its word is produced: ground_truth reads target[j], model_argmax
// / model_sample read the step's own distribution, kmax_mix carries the
// renormalized top-k of the distribution forward instead of a single word.
// A model_sample position emitting EOS ends the rollout early unless
// stop_at_sampled_eos is cleared (fixed-horizon MDPs).
inline RolloutTrace rollout(const std::vector<int>& source, const std::vector<int>& target,
                            const ModelParams& p, const FeedPlan& plan, Rng& rng, int kmax_k = 1,
                            bool stop_at_sampled_eos = true) {
  RolloutTrace trace;
  trace.enc = encode_source(source, p);
  Vec h(static_cast<std::size_t>(p.hidden), 0.0);  // h_1 constant: zeros
  Vec cell(static_cast<std::size_t>(p.hidden), 0.0);
  trace.steps.reserve(plan.size());

  for (std::size_t i = 0; i < plan.size(); ++i) {
    StepInput input;
    if (i == 0) {
      input = StepInput::from_word(Vocabulary::kBos);
    } else {
      const StepState& prev = trace.steps[i - 1];
      input = (prev.mode == FeedMode::kmax_mix) ? StepInput::from_mix(prev.mix)
                                                : StepInput::from_word(prev.word);
    }
    const AttnOut attn = attentive_context(h, trace.enc, p);
    StepState st = (p.cell == CellKind::elman) ? elman_step(input, h, attn.ctx, p)
                                               : lstm_step(input, h, cell, attn.ctx, p);
    st.alpha = attn.alpha;
    st.mode = plan[i].mode;
    const std::size_t j = i + 1;  // position index
    switch (st.mode) {
      case FeedMode::ground_truth:
        if (j >= target.size()) throw ShapeError("rollout: ground-truth plan exceeds target");
        st.word = target[j];
        if (st.word < 0 || st.word >= p.vocab) throw ShapeError("rollout: target word out of range");
        break;
      case FeedMode::model_argmax:
        st.word = argmax(st.p);
        break;
      case FeedMode::model_sample:
        st.word = rng.categorical(st.p);
        break;
      case FeedMode::kmax_mix:
        st.mix = kmax_renormalize(st.p, kmax_k);
        break;
    }
    h = st.h;
    if (p.cell == CellKind::lstm) cell = st.cell;
    const bool sampled_eos = stop_at_sampled_eos && st.mode == FeedMode::model_sample &&
                             st.word == Vocabulary::kEos;
    trace.steps.push_back(std::move(st));
    if (sampled_eos) break;
  }
  return trace;
}

// Words at positions 1..n (k-max positions have none and are skipped).
inline std::vector<int> trace_words(const RolloutTrace& trace) {
  std::vector<int> out;
  out.reserve(trace.steps.size());
  for (const auto& st : trace.steps)
    if (st.word >= 0) out.push_back(st.word);
  return out;
}

// ---------------------------------------------------------------------------
// backward

// Accumulates dL/dtheta for every parameter tensor given per-position logit
// gradients. Propagates through the hidden recurrence and the attentive
// context; flows through k-max mix inputs (adding to the previous position's
// logit gradient) but never through discretely chosen words.
inline void backward(const RolloutTrace& trace, const std::vector<Vec>& dlogits,
                     const ModelParams& p, GradAccumulator& grads) {
  const std::size_t n = trace.steps.size();
  if (dlogits.size() != n) throw ShapeError("backward: trace/gradient length mismatch");
  const std::size_t m = trace.enc.z.size();
  const Vec zero_h(static_cast<std::size_t>(p.hidden), 0.0);

  Vec dh_next(static_cast<std::size_t>(p.hidden), 0.0);
  Vec dcell_next(static_cast<std::size_t>(p.hidden), 0.0);
  Vec mix_backflow;  // extra dL/dlogits for the previous position

  for (std::size_t i = n; i-- > 0;) {
    const StepState& st = trace.steps[i];
    if (dlogits[i].size() != static_cast<std::size_t>(p.vocab))
      throw ShapeError("backward: bad logit gradient width");

    Vec g_logits = dlogits[i];
    if (!mix_backflow.empty()) {
      for (std::size_t w = 0; w < g_logits.size(); ++w) g_logits[w] += mix_backflow[w];
      mix_backflow.clear();
    }

    // output projection
    add_outer(grads.dec_out, g_logits, st.h);
    Vec dh = mat_tvec(p.dec_out, g_logits);
    axpy(1.0, dh_next, dh);

    const Vec& h_prev = (i == 0) ? zero_h : trace.steps[i - 1].h;
    const Vec& cell_prev =
        (p.cell == CellKind::lstm && i > 0) ? trace.steps[i - 1].cell : zero_h;

    Vec dh_prev(static_cast<std::size_t>(p.hidden), 0.0);
    Vec dcell_prev(static_cast<std::size_t>(p.hidden), 0.0);
    Vec dctx(static_cast<std::size_t>(p.edim), 0.0);
    Vec dmix_val;  // dL/d mix weights, when the input was a mix

    if (p.cell == CellKind::elman) {
      // h = sigmoid(u)
      Vec du(static_cast<std::size_t>(p.hidden));
      for (int r = 0; r < p.hidden; ++r) {
        const std::size_t ri = static_cast<std::size_t>(r);
        du[ri] = dh[ri] * st.h[ri] * (1.0 - st.h[ri]);
      }
      if (st.input.is_mix()) {
        dmix_val.assign(st.input.mix.idx.size(), 0.0);
        for (std::size_t l = 0; l < st.input.mix.idx.size(); ++l) {
          const int col = st.input.mix.idx[l];
          double acc = 0.0;
          for (int r = 0; r < p.hidden; ++r) {
            grads.dec_in(r, col) += st.input.mix.val[l] * du[static_cast<std::size_t>(r)];
            acc += du[static_cast<std::size_t>(r)] * p.dec_in(r, col);
          }
          dmix_val[l] = acc;
        }
      } else {
        for (int r = 0; r < p.hidden; ++r) grads.dec_in(r, st.input.word) += du[static_cast<std::size_t>(r)];
      }
      add_outer(grads.dec_rec, du, h_prev);
      add_outer(grads.dec_ctx, du, st.ctx);
      mat_tvec_acc(p.dec_rec, du, dh_prev);
      mat_tvec_acc(p.dec_ctx, du, dctx);
    } else {
      // h = o * tanh(cell'), cell' = f * cell + i * g
      Vec dcell(static_cast<std::size_t>(p.hidden));
      std::array<Vec, 4> du;
      for (auto& v : du) v.assign(static_cast<std::size_t>(p.hidden), 0.0);
      const Vec& gi = st.gates[kGateIn];
      const Vec& gf = st.gates[kGateForget];
      const Vec& go = st.gates[kGateOut];
      const Vec& gc = st.gates[kGateCand];
      for (int r = 0; r < p.hidden; ++r) {
        const std::size_t ri = static_cast<std::size_t>(r);
        const double tc = std::tanh(st.cell[ri]);
        const double dgo = dh[ri] * tc;
        dcell[ri] = dcell_next[ri] + dh[ri] * go[ri] * (1.0 - tc * tc);
        const double dgf = dcell[ri] * cell_prev[ri];
        const double dgi = dcell[ri] * gc[ri];
        const double dgc = dcell[ri] * gi[ri];
        dcell_prev[ri] = dcell[ri] * gf[ri];
        du[kGateIn][ri] = dgi * gi[ri] * (1.0 - gi[ri]);
        du[kGateForget][ri] = dgf * gf[ri] * (1.0 - gf[ri]);
        du[kGateOut][ri] = dgo * go[ri] * (1.0 - go[ri]);
        du[kGateCand][ri] = dgc * (1.0 - gc[ri] * gc[ri]);
      }
      if (st.input.is_mix()) dmix_val.assign(st.input.mix.idx.size(), 0.0);
      for (int g = 0; g < 4; ++g) {
        if (st.input.is_mix()) {
          for (std::size_t l = 0; l < st.input.mix.idx.size(); ++l) {
            const int col = st.input.mix.idx[l];
            double acc = 0.0;
            for (int r = 0; r < p.hidden; ++r) {
              grads.lstm_in[g](r, col) += st.input.mix.val[l] * du[g][static_cast<std::size_t>(r)];
              acc += du[g][static_cast<std::size_t>(r)] * p.lstm_in[g](r, col);
            }
            dmix_val[l] += acc;
          }
        } else {
          for (int r = 0; r < p.hidden; ++r)
            grads.lstm_in[g](r, st.input.word) += du[g][static_cast<std::size_t>(r)];
        }
        add_outer(grads.lstm_rec[g], du[g], h_prev);
        add_outer(grads.lstm_ctx[g], du[g], st.ctx);
        for (int r = 0; r < p.hidden; ++r) grads.lstm_bias[g](r, 0) += du[g][static_cast<std::size_t>(r)];
        mat_tvec_acc(p.lstm_rec[g], du[g], dh_prev);
        mat_tvec_acc(p.lstm_ctx[g], du[g], dctx);
      }
    }

    // attention backward: ctx = sum_j alpha_j * enc_word[src_j],
    // alpha = softmax_j(z_j . h_prev)
    {
      Vec dalpha(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const int src_w = trace.enc.source[j];
        const double aj = st.alpha[j];
        double acc = 0.0;
        for (int e = 0; e < p.edim; ++e) {
          grads.enc_word(src_w, e) += aj * dctx[static_cast<std::size_t>(e)];
          acc += p.enc_word(src_w, e) * dctx[static_cast<std::size_t>(e)];
        }
        dalpha[j] = acc;
      }
      const Vec dscores = softmax_backward(st.alpha, dalpha);
      const int half = p.window / 2;
      const double inv_q = 1.0 / static_cast<double>(p.window);
      const int src_len = static_cast<int>(m);
      for (std::size_t j = 0; j < m; ++j) {
        // scores_j = z_j . h_prev
        axpy(dscores[j], trace.enc.z[j], dh_prev);
        // dz_j = dscores_j * h_prev, then distribute through the window mean
        for (int off = -half; off <= half; ++off) {
          const int pos = static_cast<int>(j) + off;
          if (pos >= 0 && pos < src_len) {
            const int src_w = trace.enc.source[static_cast<std::size_t>(pos)];
            for (int e = 0; e < p.edim; ++e) {
              const double dz = dscores[j] * h_prev[static_cast<std::size_t>(e)];
              grads.enc_word(src_w, e) += inv_q * dz;
              grads.enc_pos(pos, e) += inv_q * dz;
            }
          } else {
            for (int e = 0; e < p.edim; ++e) {
              const double dz = dscores[j] * h_prev[static_cast<std::size_t>(e)];
              grads.enc_word(Vocabulary::kPad, e) += inv_q * dz;
            }
          }
        }
      }
    }

    // mix input: renormalization + softmax backward into the previous logits
    if (st.input.is_mix() && i > 0) {
      const StepState& prev = trace.steps[i - 1];
      const SparseMix& mix = st.input.mix;
      double sel_sum = 0.0;
      for (int col : mix.idx) sel_sum += prev.p[static_cast<std::size_t>(col)];
      double vdv = 0.0;
      for (std::size_t l = 0; l < mix.idx.size(); ++l) vdv += dmix_val[l] * mix.val[l];
      Vec dp(static_cast<std::size_t>(p.vocab), 0.0);
      for (std::size_t l = 0; l < mix.idx.size(); ++l)
        dp[static_cast<std::size_t>(mix.idx[l])] = (dmix_val[l] - vdv) / sel_sum;
      mix_backflow = softmax_backward(prev.p, dp);
    }

    dh_next = std::move(dh_prev);
    dcell_next = std::move(dcell_prev);
  }
}

inline GradAccumulator backward(const RolloutTrace& trace, const std::vector<Vec>& dlogits,
                                const ModelParams& p) {
  GradAccumulator grads(p);
  backward(trace, dlogits, p, grads);
  return grads;
}

}  // namespace mixer
