#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mixer/training.hpp"

using namespace mixer;

namespace {

ModelParams tiny_params(CellKind cell, int vocab, int hidden, int max_src, int window,
                        std::uint64_t seed, double scale = 0.3) {
  ModelParams p = make_params(cell, vocab, hidden, max_src, window);
  Rng rng(seed);
  init_params(p, rng, scale);
  return p;
}

bool same_grads(const GradAccumulator& a, const GradAccumulator& b) {
  const Vec fa = a.flatten();
  const Vec fb = b.flatten();
  if (fa.size() != fb.size()) return false;
  for (std::size_t i = 0; i < fa.size(); ++i)
    if (fa[i] != fb[i]) return false;
  return true;
}

Vec flatten_model(ModelParams& p) {
  Vec out;
  for (auto& [n, m] : p.model_tensors()) out.insert(out.end(), m->a.begin(), m->a.end());
  return out;
}

Vec flatten_all(ModelParams& p) {
  Vec out;
  for (auto& [n, m] : p.all_tensors()) out.insert(out.end(), m->a.begin(), m->a.end());
  return out;
}

std::vector<ExamplePair> small_corpus(SyntheticKind kind, int n, std::uint64_t seed) {
  return gen_synthetic(kind, 8, 2, 4, n, seed);
}

}  // namespace

TEST_CASE("xent: a probability-one model has zero loss and zero gradients") {
  ModelParams p = make_params(CellKind::elman, 6, 3, 2, 3);
  // drive the distribution to (almost exactly) one-hot on word 4
  for (int w = 0; w < 6; ++w)
    for (int j = 0; j < 3; ++j) p.dec_out(w, j) = (w == 4) ? 5000.0 : -5000.0;
  const ExamplePair ex{{4}, {Vocabulary::kBos, 4, 4}};
  Rng rng(0);
  const ExampleGrads eg = xent_grads(ex, p, rng);
  REQUIRE(eg.xent_loss == Catch::Approx(0.0).margin(1e-12));
  const Vec g = backward(eg.trace, eg.dlogits, p).flatten();
  for (double v : g) REQUIRE(std::fabs(v) < 1e-12);
}

TEST_CASE("xent: uniform model with W=4 and two steps loses 2 ln 4") {
  ModelParams p = make_params(CellKind::elman, 4, 3, 2, 3);  // all-zero params: uniform softmax
  const ExamplePair ex{{0}, {Vocabulary::kBos, 3, Vocabulary::kEos}};
  Rng rng(0);
  const ExampleGrads eg = xent_grads(ex, p, rng);
  REQUIRE(eg.xent_steps == 2);
  REQUIRE(eg.xent_loss == Catch::Approx(2.0 * std::log(4.0)).margin(1e-12));
}

TEST_CASE("xent: per-step logit gradient sums to zero across the vocabulary") {
  ModelParams p = tiny_params(CellKind::lstm, 7, 4, 3, 3, 5);
  const ExamplePair ex{{4, 5}, {Vocabulary::kBos, 5, 6, Vocabulary::kEos}};
  Rng rng(0);
  const ExampleGrads eg = xent_grads(ex, p, rng);
  for (const Vec& g : eg.dlogits) {
    double sum = 0.0;
    for (double v : g) sum += v;
    REQUIRE(sum == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("xent: out-of-vocabulary target is an error") {
  ModelParams p = tiny_params(CellKind::elman, 5, 3, 2, 3, 6);
  const ExamplePair ex{{4}, {Vocabulary::kBos, 9, Vocabulary::kEos}};
  Rng rng(0);
  REQUIRE_THROWS_AS(xent_grads(ex, p, rng), ShapeError);
}

TEST_CASE("dad with p_truth = 1 reproduces xent gradients bitwise") {
  ModelParams p = tiny_params(CellKind::elman, 8, 4, 3, 3, 7);
  const ExamplePair ex{{4, 5, 6}, {Vocabulary::kBos, 6, 5, 4, Vocabulary::kEos}};
  Rng r1(11), r2(11);
  const ExampleGrads x = xent_grads(ex, p, r1);
  const ExampleGrads d = dad_grads(ex, p, 1.0, r2);
  REQUIRE(x.xent_loss == d.xent_loss);
  REQUIRE(same_grads(backward(x.trace, x.dlogits, p), backward(d.trace, d.dlogits, p)));
}

TEST_CASE("dad with p_truth = 0 feeds model argmaxes after BOS") {
  ModelParams p = tiny_params(CellKind::elman, 8, 4, 3, 3, 8);
  const ExamplePair ex{{4, 5}, {Vocabulary::kBos, 6, 5, 4, Vocabulary::kEos}};
  Rng rng(13);
  const ExampleGrads d = dad_grads(ex, p, 0.0, rng);
  REQUIRE(d.trace.steps[0].input.word == Vocabulary::kBos);
  for (std::size_t i = 1; i < d.trace.steps.size(); ++i) {
    REQUIRE(d.trace.steps[i - 1].mode == FeedMode::model_argmax);
    REQUIRE(d.trace.steps[i].input.word == argmax(d.trace.steps[i - 1].p));
  }
}

TEST_CASE("dad targets are always the reference words") {
  ModelParams p = tiny_params(CellKind::lstm, 8, 3, 3, 3, 9);
  const ExamplePair ex{{4, 5, 7}, {Vocabulary::kBos, 7, 7, 5, Vocabulary::kEos}};
  Rng rng(17);
  const ExampleGrads d = dad_grads(ex, p, 0.5, rng);
  for (std::size_t i = 0; i < d.trace.steps.size(); ++i) {
    // gradient must be p - onehot(reference), whatever was fed
    const Vec& g = d.dlogits[i];
    const Vec& prob = d.trace.steps[i].p;
    const int y = ex.target[i + 1];
    for (int w = 0; w < p.vocab; ++w) {
      const double expect = prob[static_cast<std::size_t>(w)] - (w == y ? 1.0 : 0.0);
      REQUIRE(g[static_cast<std::size_t>(w)] == Catch::Approx(expect).margin(1e-15));
    }
  }
}

TEST_CASE("k-max renormalization hand fixture") {
  const SparseMix mix = kmax_renormalize({0.5, 0.3, 0.1, 0.1}, 2);
  REQUIRE(mix.idx == std::vector<int>{0, 1});
  REQUIRE(mix.val[0] == Catch::Approx(0.625).margin(1e-15));
  REQUIRE(mix.val[1] == Catch::Approx(0.375).margin(1e-15));
  REQUIRE_THROWS_AS(kmax_renormalize({0.5, 0.5}, 3), ShapeError);
}

TEST_CASE("e2e with k = 1 matches the argmax forward pass") {
  ModelParams p = tiny_params(CellKind::elman, 7, 4, 3, 3, 10);
  const ExamplePair ex{{4, 6}, {Vocabulary::kBos, 5, 6, 4, Vocabulary::kEos}};
  const ExampleGrads e = e2e_grads(ex, p, 1, 2);
  Rng rng(0);
  FeedPlan plan{{FeedMode::ground_truth},
                {FeedMode::model_argmax},
                {FeedMode::model_argmax},
                {FeedMode::ground_truth}};
  const RolloutTrace argmax_trace = rollout(ex.source, ex.target, p, plan, rng);
  for (std::size_t i = 0; i < e.trace.steps.size(); ++i) {
    REQUIRE(e.trace.steps[i].h == argmax_trace.steps[i].h);
    REQUIRE(e.trace.steps[i].p == argmax_trace.steps[i].p);
  }
}

TEST_CASE("e2e with zero mixed steps reduces to xent bitwise") {
  ModelParams p = tiny_params(CellKind::lstm, 7, 3, 3, 3, 12);
  const ExamplePair ex{{4, 5}, {Vocabulary::kBos, 5, 6, Vocabulary::kEos}};
  Rng rng(0);
  const ExampleGrads x = xent_grads(ex, p, rng);
  const ExampleGrads e = e2e_grads(ex, p, 2, 0);
  REQUIRE(x.xent_loss == e.xent_loss);
  REQUIRE(same_grads(backward(x.trace, x.dlogits, p), backward(e.trace, e.dlogits, p)));
}

TEST_CASE("e2e k > W is an error") {
  ModelParams p = tiny_params(CellKind::elman, 5, 3, 2, 3, 13);
  const ExamplePair ex{{4}, {Vocabulary::kBos, 4, Vocabulary::kEos}};
  REQUIRE_THROWS_AS(e2e_grads(ex, p, 6, 1), ShapeError);
}

TEST_CASE("reinforce: zero advantage gives zero gradients") {
  ModelParams p = tiny_params(CellKind::elman, 6, 3, 2, 3, 14);
  const std::vector<int> target{Vocabulary::kBos, 4};
  Rng rng(3);
  const RolloutTrace trace =
      rollout({4}, target, p, uniform_plan(FeedMode::model_sample, 3), rng, 1, false);
  const double r = 0.7;
  const std::vector<double> rbar(trace.steps.size(), r);
  const auto dlogits = reinforce_grads(trace, r, rbar, p.vocab);
  for (const Vec& g : dlogits)
    for (double v : g) REQUIRE(v == 0.0);
}

TEST_CASE("reinforce: positive advantage pushes the sampled word's logit up") {
  ModelParams p = tiny_params(CellKind::elman, 6, 3, 2, 3, 15);
  const std::vector<int> target{Vocabulary::kBos, 4};
  Rng rng(4);
  const RolloutTrace trace =
      rollout({4}, target, p, uniform_plan(FeedMode::model_sample, 2), rng, 1, false);
  const std::vector<double> rbar(trace.steps.size(), 0.2);
  const auto dlogits = reinforce_grads(trace, 0.9, rbar, p.vocab);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    // entry at the sampled word is (r - rbar)(p - 1) < 0: descent raises it
    REQUIRE(dlogits[i][static_cast<std::size_t>(trace.steps[i].word)] < 0.0);
    double sum = 0.0;
    for (double v : dlogits[i]) sum += v;
    REQUIRE(sum == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("reinforce gradients are zero at non-sampled positions") {
  ModelParams p = tiny_params(CellKind::elman, 6, 3, 2, 3, 16);
  const std::vector<int> target{Vocabulary::kBos, 4, 5, Vocabulary::kEos};
  Rng rng(5);
  FeedPlan plan{{FeedMode::ground_truth}, {FeedMode::ground_truth}, {FeedMode::model_sample}};
  const RolloutTrace trace = rollout({4}, target, p, plan, rng, 1, false);
  const std::vector<double> rbar(trace.steps.size(), 0.0);
  const auto dlogits = reinforce_grads(trace, 1.0, rbar, p.vocab);
  for (double v : dlogits[0]) REQUIRE(v == 0.0);
  for (double v : dlogits[1]) REQUIRE(v == 0.0);
  double any = 0.0;
  for (double v : dlogits[2]) any += std::fabs(v);
  REQUIRE(any > 0.0);
}

TEST_CASE("baseline: zero weights predict the bias everywhere") {
  ModelParams p = tiny_params(CellKind::elman, 6, 3, 2, 3, 17);
  p.baseline_w.zero();
  p.baseline_b(0, 0) = 0.42;
  for (double h1 : {-0.5, 0.0, 1.5})
    REQUIRE(baseline_predict(p, {h1, 2.0 * h1, -h1}) == 0.42);
}

TEST_CASE("baseline: single-pair hand gradient 2(rbar - r) h") {
  ModelParams p = tiny_params(CellKind::elman, 6, 2, 2, 3, 18);
  const Vec w0{p.baseline_w(0, 0), p.baseline_w(0, 1)};
  const double b0 = p.baseline_b(0, 0);
  // one-step trace with a known hidden state
  const std::vector<int> target{Vocabulary::kBos, 4};
  Rng rng(0);
  RolloutTrace trace = rollout({4}, target, p, uniform_plan(FeedMode::ground_truth, 1), rng);
  const Vec h = trace.steps[0].h;
  const double r = 0.6;
  const double lr_b = 0.1;
  const double rbar = baseline_predict(p, h);
  const auto preds = baseline_update(p, trace, r, lr_b);
  REQUIRE(preds.size() == 1);
  REQUIRE(preds[0] == rbar);
  for (int j = 0; j < 2; ++j)
    REQUIRE(p.baseline_w(0, j) ==
            Catch::Approx(w0[j] - lr_b * 2.0 * (rbar - r) * h[j]).margin(1e-12));
  REQUIRE(p.baseline_b(0, 0) == Catch::Approx(b0 - lr_b * 2.0 * (rbar - r)).margin(1e-12));
}

TEST_CASE("baseline: converges to a constant reward") {
  ModelParams p = tiny_params(CellKind::elman, 6, 3, 2, 3, 19);
  const std::vector<int> target{Vocabulary::kBos, 4, 5};
  const double c = 0.8;
  for (int it = 0; it < 4000; ++it) {
    Rng rng(static_cast<std::uint64_t>(it));
    RolloutTrace trace =
        rollout({4, 5}, target, p, uniform_plan(FeedMode::model_sample, 2), rng, 1, false);
    baseline_update(p, trace, c, 0.05);
  }
  Rng rng(999);
  RolloutTrace probe =
      rollout({4, 5}, target, p, uniform_plan(FeedMode::model_sample, 2), rng, 1, false);
  for (const auto& st : probe.steps)
    REQUIRE(baseline_predict(p, st.h) == Catch::Approx(c).margin(0.05));
}

TEST_CASE("baseline update never touches model parameters") {
  ModelParams p = tiny_params(CellKind::lstm, 7, 3, 3, 3, 20);
  const std::vector<int> target{Vocabulary::kBos, 4};
  Rng rng(2);
  RolloutTrace trace = rollout({4, 5}, target, p, uniform_plan(FeedMode::model_sample, 3), rng, 1, false);
  const Vec before = flatten_model(p);
  baseline_update(p, trace, 0.33, 0.1);
  REQUIRE(flatten_model(p) == before);
}

TEST_CASE("mixer phase sequence follows Algorithm 1") {
  REQUIRE(mixer_phase_sequence(15, 2) == std::vector<int>{15, 13, 11, 9, 7, 5, 3, 1});
  REQUIRE(mixer_phase_sequence(10, 3) == std::vector<int>{10, 7, 4, 1});
  REQUIRE(mixer_phase_sequence(15, 3) == std::vector<int>{15, 12, 9, 6, 3, 1});
  // delta == T: one XENT warmup phase, then the appended final s=1 phase
  REQUIRE(mixer_phase_sequence(4, 4) == std::vector<int>{4, 1});
  REQUIRE(mixer_phase_sequence(1, 1) == std::vector<int>{1});
}

TEST_CASE("mixer sequence semantics: prefix teacher-forced, suffix sampled") {
  ModelParams p = tiny_params(CellKind::elman, 8, 4, 4, 3, 21);
  const ExamplePair ex{{4, 5, 6}, {Vocabulary::kBos, 6, 5, 4, 7, Vocabulary::kEos}};
  Rng rng(77);
  const int s = 2, unroll = 8;
  const ExampleGrads eg = mixer_example_grads(ex, p, s, unroll, RewardMetric::bleu, rng);
  REQUIRE(eg.has_reward);
  REQUIRE(eg.trace.steps.size() >= static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    REQUIRE(eg.trace.steps[i].mode == FeedMode::ground_truth);
    REQUIRE(eg.trace.steps[i].word == ex.target[i + 1]);
  }
  for (std::size_t i = s; i < eg.trace.steps.size(); ++i)
    REQUIRE(eg.trace.steps[i].mode == FeedMode::model_sample);
  // reward matches an independent recomputation
  std::vector<int> gen;
  for (const auto& st : eg.trace.steps) {
    if (st.word == Vocabulary::kEos) break;
    gen.push_back(st.word);
  }
  REQUIRE(eg.reward ==
          Catch::Approx(sentence_bleu(gen, {target_content(ex.target)})).margin(1e-15));
  // REINFORCE gradients carry the advantage structure at sampled positions
  for (const auto& [pos, rbar] : eg.reinforce_rbar) {
    const StepState& st = eg.trace.steps[pos];
    const double adv = eg.reward - rbar;
    for (int w = 0; w < p.vocab; ++w) {
      const double expect =
          adv * (st.p[static_cast<std::size_t>(w)] - (w == st.word ? 1.0 : 0.0));
      REQUIRE(eg.dlogits[pos][static_cast<std::size_t>(w)] == Catch::Approx(expect).margin(1e-15));
    }
  }
}

TEST_CASE("train_epoch: 64 examples make exactly 2 batches of 32") {
  auto corpus = small_corpus(SyntheticKind::copy, 64, 31);
  ModelParams p = tiny_params(CellKind::elman, 12, 6, 4, 3, 22, 0.05);
  TrainingSchedule sched;
  sched.unroll = 6;
  sched.batch = 32;
  const EpochStats stats = train_epoch(corpus, p, sched, {Regime::xent}, 5, 1);
  REQUIRE(stats.batches == 2);
  const EpochStats stats33 =
      train_epoch(corpus, p, sched, {Regime::xent}, 5, 2);
  REQUIRE(stats33.batches == 2);
}

TEST_CASE("train_epoch is bitwise deterministic under a fixed seed") {
  auto corpus = small_corpus(SyntheticKind::reverse, 20, 41);
  for (Regime regime : {Regime::xent, Regime::dad, Regime::mixer}) {
    ModelParams a = tiny_params(CellKind::elman, 12, 5, 4, 3, 23, 0.05);
    ModelParams b = tiny_params(CellKind::elman, 12, 5, 4, 3, 23, 0.05);
    TrainingSchedule sched;
    sched.unroll = 6;
    sched.batch = 8;
    EpochPlanSpec plan;
    plan.regime = regime;
    plan.dad_p_truth = 0.6;
    plan.mixer_s = 2;
    train_epoch(corpus, a, sched, plan, 7, 1);
    train_epoch(corpus, b, sched, plan, 7, 1);
    REQUIRE(flatten_all(a) == flatten_all(b));
  }
}

TEST_CASE("regime reductions produce bitwise-identical parameter updates") {
  auto corpus = small_corpus(SyntheticKind::reverse, 24, 51);
  TrainingSchedule sched;
  sched.unroll = 6;
  sched.batch = 8;
  const std::uint64_t seed = 99;

  ModelParams x = tiny_params(CellKind::elman, 12, 5, 4, 3, 29, 0.05);
  ModelParams d = x, e = x, m = x;
  train_epoch(corpus, x, sched, {Regime::xent}, seed, 1);
  {
    EpochPlanSpec plan;
    plan.regime = Regime::dad;
    plan.dad_p_truth = 1.0;
    train_epoch(corpus, d, sched, plan, seed, 1);
  }
  {
    EpochPlanSpec plan;
    plan.regime = Regime::e2e;
    plan.e2e_mixed = 0;
    train_epoch(corpus, e, sched, plan, seed, 1);
  }
  {
    EpochPlanSpec plan;
    plan.regime = Regime::mixer;
    plan.mixer_s = sched.unroll;
    train_epoch(corpus, m, sched, plan, seed, 1);
  }
  REQUIRE(flatten_all(x) == flatten_all(d));
  REQUIRE(flatten_all(x) == flatten_all(e));
  REQUIRE(flatten_all(x) == flatten_all(m));
}

TEST_CASE("teacher-forced loss decreases over five xent epochs on the copy task") {
  auto corpus = gen_synthetic(SyntheticKind::copy, 8, 2, 4, 80, 61);
  ModelParams p = tiny_params(CellKind::elman, 12, 8, 4, 3, 30, 0.05);
  TrainingSchedule sched;
  sched.unroll = 6;
  sched.lr = 0.5;
  double first = 0.0, last = 0.0;
  for (int e = 1; e <= 5; ++e) {
    const EpochStats stats = train_epoch(corpus, p, sched, {Regime::xent}, 71, e);
    if (e == 1) first = stats.train_loss;
    last = stats.train_loss;
  }
  REQUIRE(last < first);
}

TEST_CASE("mixer_train logs the annealed s values and phases") {
  auto corpus = small_corpus(SyntheticKind::copy, 12, 71);
  ModelParams p = tiny_params(CellKind::elman, 12, 4, 4, 3, 31, 0.05);
  TrainingSchedule sched;
  sched.unroll = 5;
  sched.delta = 2;
  sched.n_xent = 2;
  sched.n_xer = 1;
  sched.batch = 8;
  const auto rows = mixer_train(corpus, corpus, p, sched, 3);
  // phases: 5 (xent, 2 epochs), 3, 1 (1 epoch each)
  REQUIRE(rows.size() == 4);
  REQUIRE(rows[0].s == 5);
  REQUIRE(rows[0].phase == "xent");
  REQUIRE(rows[1].s == 5);
  REQUIRE(rows[2].s == 3);
  REQUIRE(rows[2].phase == "xe+r");
  REQUIRE(rows[3].s == 1);
  for (std::size_t i = 0; i < rows.size(); ++i) REQUIRE(rows[i].epoch == static_cast<int>(i) + 1);
}

TEST_CASE("dad and e2e annealing schedules move as configured") {
  auto corpus = small_corpus(SyntheticKind::copy, 8, 81);
  ModelParams p = tiny_params(CellKind::elman, 12, 4, 4, 3, 32, 0.05);
  TrainingSchedule sched;
  sched.unroll = 6;
  sched.epochs = 3;
  sched.batch = 8;
  sched.dad_p_start = 1.0;
  sched.dad_p_end = 0.5;
  const auto rows = train_regime(Regime::dad, corpus, {}, p, sched, 5);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) REQUIRE(row.phase == "dad");
  const auto rows_e2e = train_regime(Regime::e2e, corpus, {}, p, sched, 5);
  REQUIRE(rows_e2e.size() == 3);
}
