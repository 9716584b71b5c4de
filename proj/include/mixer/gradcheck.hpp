#pragma once

// Independent oracles: central finite differences over every scalar parameter
// and exhaustive expected-reward enumeration for the policy gradient. These
// deliberately avoid the analytic backward path so they can check it.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mixer/model.hpp"
#include "mixer/rng.hpp"

namespace mixer {

// Central difference (f(x+eps) - f(x-eps)) / (2 eps) per scalar parameter.
// The loss function must be a pure function of the parameters.
template <class LossFn>
GradAccumulator finite_diff(LossFn&& loss, ModelParams& params, double eps = 1e-5) {
  if (eps <= 0.0) throw ShapeError("finite_diff: eps must be positive");
  GradAccumulator out(params);
  auto tensors = params.model_tensors();
  auto grads = out.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Mat& m = *tensors[t].second;
    Mat& g = *grads[t];
    for (std::size_t i = 0; i < m.a.size(); ++i) {
      const double saved = m.a[i];
      m.a[i] = saved + eps;
      const double f_plus = loss(const_cast<const ModelParams&>(params));
      m.a[i] = saved - eps;
      const double f_minus = loss(const_cast<const ModelParams&>(params));
      m.a[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericError("finite_diff: non-finite loss at tensor " + tensors[t].first);
      g.a[i] = (f_plus - f_minus) / (2.0 * eps);
    }
  }
  return out;
}

// Relative error with an absolute floor (truncation/roundoff balance for
// eps=1e-5 central differences in double precision).
inline double rel_error(double a, double b, double floor = 1e-7) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double worst = 0.0;
  bool pass(double tol = 1e-4) const { return worst < tol; }
};

inline GradCheckReport compare_grads(const ModelParams& params, const GradAccumulator& analytic,
                                     const GradAccumulator& numeric, double floor = 1e-7) {
  GradCheckReport report;
  auto names = params.model_tensors();
  auto a = analytic.tensors();
  auto b = numeric.tensors();
  for (std::size_t t = 0; t < a.size(); ++t) {
    TensorCheck check;
    check.name = names[t].first;
    for (std::size_t i = 0; i < a[t]->a.size(); ++i)
      check.max_rel_error = std::max(check.max_rel_error, rel_error(a[t]->a[i], b[t]->a[i], floor));
    report.worst = std::max(report.worst, check.max_rel_error);
    report.tensors.push_back(std::move(check));
  }
  return report;
}

// ---------------------------------------------------------------------------
// exhaustive enumeration over all W^T action sequences

// Visits every sequence of T words over vocabulary size W with its model
// probability (teacher-forcing the candidate sequence gives its probability
// under the policy).
template <class Visitor>
void enumerate_sequences(const std::vector<int>& source, const ModelParams& params, int horizon,
                         Visitor&& visit) {
  double space = 1.0;
  for (int t = 0; t < horizon; ++t) space *= static_cast<double>(params.vocab);
  if (space > 1e5) throw ShapeError("enumerate_sequences: W^T too large to enumerate");

  std::vector<int> seq(static_cast<std::size_t>(horizon), 0);
  std::vector<int> target(static_cast<std::size_t>(horizon) + 1, Vocabulary::kBos);
  Rng unused(0);
  const FeedPlan plan = uniform_plan(FeedMode::ground_truth, horizon);
  for (;;) {
    for (int t = 0; t < horizon; ++t) target[static_cast<std::size_t>(t) + 1] = seq[static_cast<std::size_t>(t)];
    const RolloutTrace trace = rollout(source, target, params, plan, unused);
    double prob = 1.0;
    for (int t = 0; t < horizon; ++t)
      prob *= trace.steps[static_cast<std::size_t>(t)].p[static_cast<std::size_t>(seq[static_cast<std::size_t>(t)])];
    visit(static_cast<const std::vector<int>&>(seq), prob);
    // odometer
    int pos = horizon - 1;
    while (pos >= 0) {
      if (++seq[static_cast<std::size_t>(pos)] < params.vocab) break;
      seq[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
}

using RewardFn = std::function<double(const std::vector<int>&)>;

// E[r] = sum over all sequences of p(seq) r(seq).
inline double exact_expected_reward(const std::vector<int>& source, const ModelParams& params,
                                    int horizon, const RewardFn& reward) {
  double total = 0.0;
  enumerate_sequences(source, params, horizon,
                      [&](const std::vector<int>& seq, double prob) { total += prob * reward(seq); });
  return total;
}

// Exact gradient of the negative expected reward L = -E[r], obtained by
// finite differences over the enumerated expectation.
inline GradAccumulator exact_policy_gradient(const std::vector<int>& source, ModelParams& params,
                                             int horizon, const RewardFn& reward,
                                             double eps = 1e-5) {
  return finite_diff(
      [&](const ModelParams& p) {
        return -exact_expected_reward(source, p, horizon, reward);
      },
      params, eps);
}

// Small random model + example for gradient checking (desk-scale dims).
struct CheckInstance {
  ModelParams params;
  std::vector<int> source;
  std::vector<int> target;  // BOS-prefixed, EOS-suffixed
};

inline CheckInstance random_check_instance(CellKind cell, Rng& rng, int max_hidden = 8,
                                           int max_vocab = 10, int max_steps = 5) {
  CheckInstance inst;
  const int vocab = Vocabulary::kReserved + 1 + rng.uniform_int(max_vocab - Vocabulary::kReserved);
  const int hidden = 2 + rng.uniform_int(max_hidden - 1);
  const int src_len = 1 + rng.uniform_int(4);
  const int content_len = 1 + rng.uniform_int(max_steps - 1);
  const int window = rng.uniform_int(2) == 0 ? 3 : 5;
  inst.params = make_params(cell, vocab, hidden, src_len, window);
  init_params(inst.params, rng, 0.4);
  for (int i = 0; i < src_len; ++i) inst.source.push_back(rng.uniform_int(vocab));
  inst.target.push_back(Vocabulary::kBos);
  for (int i = 0; i < content_len; ++i)
    inst.target.push_back(Vocabulary::kReserved + rng.uniform_int(vocab - Vocabulary::kReserved));
  inst.target.push_back(Vocabulary::kEos);
  return inst;
}

// Streaming mean/variance per coordinate (for estimator statistics).
struct RunningMoments {
  long n = 0;
  Vec mean;
  Vec m2;

  void add(const Vec& x) {
    if (mean.empty()) {
      mean.assign(x.size(), 0.0);
      m2.assign(x.size(), 0.0);
    }
    ++n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i];
      mean[i] += d / static_cast<double>(n);
      m2[i] += d * (x[i] - mean[i]);
    }
  }

  double variance(std::size_t i) const { return n > 1 ? m2[i] / static_cast<double>(n - 1) : 0.0; }
  double stderr_(std::size_t i) const { return std::sqrt(variance(i) / static_cast<double>(n)); }
  double total_variance() const {
    double s = 0.0;
    for (std::size_t i = 0; i < m2.size(); ++i) s += variance(i);
    return s;
  }
};

}  // namespace mixer
