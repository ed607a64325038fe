#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safl/rng.hpp"
#include "safl/stats.hpp"
#include "safl/vec.hpp"

namespace safl {

// ---------------------------------------------------------------------------
// Worst-case construction: a two-point distribution with a rare point x2 of
// mass 4*eps, eps = (1 - omega)/8, an adversarial selector that keeps as many
// x1 samples as possible, and a two-hypothesis class that only disagrees on
// x2. A learner that never sees x2 cannot beat risk 4*eps against the worse
// of the two targets.

struct ImpossibilityInstance {
  int clients = 10;            // M
  int samples_per_client = 20; // n
  double omega = 0.5;          // capacity m / M
  int trials = 10000;

  double epsilon() const { return (1.0 - omega) / 8.0; }
  double rare_mass() const { return 4.0 * epsilon(); }
  long long total_samples() const {
    return static_cast<long long>(clients) * samples_per_client;
  }
  long long budget() const {
    return std::llround(omega * static_cast<double>(total_samples()));
  }

  void validate() const {
    if (clients < 1 || samples_per_client < 1) {
      throw std::invalid_argument("ImpossibilityInstance: M, n >= 1 required");
    }
    if (!(omega > 0.0) || !(omega < 1.0)) {
      throw std::invalid_argument("ImpossibilityInstance: omega outside (0, 1)");
    }
    if (trials < 1) throw std::invalid_argument("ImpossibilityInstance: trials >= 1");
  }
};

// A dataset over the two-point support is fully described by its counts.
struct TwoPointCounts {
  long long x1 = 0;
  long long x2 = 0;
  long long total() const { return x1 + x2; }
};

// Keep as many x1 samples as the budget allows; fill the remainder with x2.
inline TwoPointCounts adversarial_select(const TwoPointCounts& samples, long long budget) {
  if (budget < 0 || budget > samples.total()) {
    throw std::invalid_argument("adversarial_select: budget outside [0, M*n]");
  }
  TwoPointCounts out;
  out.x1 = std::min(samples.x1, budget);
  out.x2 = budget - out.x1;
  return out;
}

namespace detail {

struct ImpossibilityTrial {
  double risk = 0.0;
  bool rare_count_geq_threshold = false;  // #x2 >= (1 - omega) * M * n
};

inline ImpossibilityTrial impossibility_trial_impl(const ImpossibilityInstance& inst,
                                                   RngStream& rng) {
  inst.validate();
  const double p2 = inst.rare_mass();
  TwoPointCounts drawn;
  for (long long i = 0; i < inst.total_samples(); ++i) {
    if (rng.bernoulli(p2)) {
      ++drawn.x2;
    } else {
      ++drawn.x1;
    }
  }
  const TwoPointCounts selected = adversarial_select(drawn, inst.budget());

  // Hypotheses agree on x1 and are labelled by their x2 output. The ERM
  // learner identifies the target's x2 label whenever the training set
  // contains x2; otherwise it falls back to the canonical +1 hypothesis and
  // the adversary answers with the target it gets wrong.
  double risk;
  if (selected.x2 > 0) {
    risk = 0.0;  // realizable: the returned hypothesis matches the target
  } else {
    const int learner_x2_label = +1;
    double worst = 0.0;
    for (int target_x2_label : {+1, -1}) {
      const double r = (learner_x2_label != target_x2_label) ? p2 : 0.0;
      worst = std::max(worst, r);
    }
    risk = worst;
  }

  ImpossibilityTrial t;
  t.risk = risk;
  const double threshold = (1.0 - inst.omega) * static_cast<double>(inst.total_samples());
  t.rare_count_geq_threshold = static_cast<double>(drawn.x2) >= threshold;
  return t;
}

}  // namespace detail

// Realized P-risk of one adversarially-selected training run, in [0, 1].
inline double impossibility_trial(const ImpossibilityInstance& inst, RngStream& rng) {
  return detail::impossibility_trial_impl(inst, rng).risk;
}

struct ImpossibilityResult {
  int trials = 0;
  double failure_rate = 0.0;  // fraction of trials with risk > (1 - omega)/8
  WilsonInterval wilson;      // 95% interval on the failure rate
  double mean_risk = 0.0;
  double chernoff_rate = 0.0;  // fraction with #x2 >= (1 - omega) M n
  std::vector<double> risks;   // per-trial realized risks
};

inline ImpossibilityResult impossibility_failure_rate(const ImpossibilityInstance& inst,
                                                      std::uint64_t seed) {
  inst.validate();
  if (inst.trials < 1000) {
    throw std::invalid_argument("impossibility_failure_rate: trials >= 1000 required");
  }
  ImpossibilityResult res;
  res.trials = inst.trials;
  res.risks.reserve(static_cast<std::size_t>(inst.trials));
  long long failures = 0;
  long long chernoff = 0;
  double risk_sum = 0.0;
  const double eps = inst.epsilon();
  for (int t = 0; t < inst.trials; ++t) {
    RngStream rng(seed, StreamPurpose::trial, static_cast<std::uint64_t>(t));
    const auto trial = detail::impossibility_trial_impl(inst, rng);
    res.risks.push_back(trial.risk);
    risk_sum += trial.risk;
    if (trial.risk > eps) ++failures;
    if (trial.rare_count_geq_threshold) ++chernoff;
  }
  res.failure_rate = static_cast<double>(failures) / inst.trials;
  res.wilson = wilson_interval(failures, inst.trials);
  res.mean_risk = risk_sum / inst.trials;
  res.chernoff_rate = static_cast<double>(chernoff) / inst.trials;
  return res;
}

// ---------------------------------------------------------------------------
// Threshold class on the real line. P = U[a, b] is the target distribution,
// D = U[a', b'] the participating-data distribution with nested support, and
// the joint SA-FL training set mixes n_T points from P with n_S points from D.

struct LabeledReal {
  double x = 0.0;
  int label = 0;  // 1{x >= t*}
};

struct ThresholdInstance {
  double a = 0.0, b = 1.0;        // support of P
  double a_inner = 0.0, b_inner = 1.0;  // support of D
  double t_star = 0.5;
  double lambda_d = 0.0;  // mixture weight of D (lambda_1)
  double lambda_p = 1.0;  // mixture weight of P (lambda_2)
  long long n_t = 0;      // auxiliary samples from P
  long long n_s = 0;      // client samples from D

  void validate() const {
    if (!(a <= a_inner && a_inner <= b_inner && b_inner <= b)) {
      throw std::invalid_argument("ThresholdInstance: need a <= a' <= b' <= b");
    }
    if (!(a < b)) throw std::invalid_argument("ThresholdInstance: empty P support");
    if (lambda_d < 0.0 || lambda_p < 0.0 || std::abs(lambda_d + lambda_p - 1.0) > 1e-12) {
      throw std::invalid_argument("ThresholdInstance: mixture weights must sum to 1");
    }
    if (lambda_d > 0.0 && !(a_inner < b_inner)) {
      throw std::invalid_argument("ThresholdInstance: empty D support");
    }
    if (t_star < a_inner || t_star > b_inner) {
      throw std::invalid_argument("ThresholdInstance: t* outside [a', b']");
    }
  }

  static ThresholdInstance safl(double a, double b, double a_inner, double b_inner, double t_star,
                                long long n_t, long long n_s) {
    ThresholdInstance inst;
    inst.a = a;
    inst.b = b;
    inst.a_inner = a_inner;
    inst.b_inner = b_inner;
    inst.t_star = t_star;
    inst.n_t = n_t;
    inst.n_s = n_s;
    const double total = static_cast<double>(n_t + n_s);
    inst.lambda_d = total > 0.0 ? static_cast<double>(n_s) / total : 0.0;
    inst.lambda_p = total > 0.0 ? static_cast<double>(n_t) / total : 1.0;
    inst.validate();
    return inst;
  }
};

namespace detail {

inline double interval_overlap(double lo, double hi, double a, double b) {
  return std::max(0.0, std::min(hi, b) - std::max(lo, a));
}

}  // namespace detail

// Analytic excess error of h_t under P: the P-mass strictly between t and t*.
inline double excess_error_p(const ThresholdInstance& inst, double t) {
  const double lo = std::min(t, inst.t_star);
  const double hi = std::max(t, inst.t_star);
  return detail::interval_overlap(lo, hi, inst.a, inst.b) / (inst.b - inst.a);
}

// Analytic excess error under the mixture Q = lambda_d D + lambda_p P;
// piecewise linear in t with a density jump on [a', b'].
inline double excess_error_q(const ThresholdInstance& inst, double t) {
  const double lo = std::min(t, inst.t_star);
  const double hi = std::max(t, inst.t_star);
  double mass = inst.lambda_p * detail::interval_overlap(lo, hi, inst.a, inst.b) / (inst.b - inst.a);
  if (inst.lambda_d > 0.0) {
    mass += inst.lambda_d * detail::interval_overlap(lo, hi, inst.a_inner, inst.b_inner) /
            (inst.b_inner - inst.a_inner);
  }
  return mass;
}

// Draws n labeled points: the D : P composition follows the instance's
// n_S : n_T ratio exactly (D points first), labels are the realizable
// 1{x >= t*}.
inline std::vector<LabeledReal> sample_mixture(const ThresholdInstance& inst, long long n,
                                               RngStream& rng) {
  inst.validate();
  if (n < 0) throw std::invalid_argument("sample_mixture: n < 0");
  const long long n_d = std::llround(static_cast<double>(n) * inst.lambda_d);
  std::vector<LabeledReal> out;
  out.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    const bool from_d = i < n_d;
    const double lo = from_d ? inst.a_inner : inst.a;
    const double hi = from_d ? inst.b_inner : inst.b;
    const double x = lo + (hi - lo) * rng.uniform();
    out.push_back(LabeledReal{x, x >= inst.t_star ? 1 : 0});
  }
  return out;
}

// Empirical risk minimizer over thresholds: midpoint of the version-space
// interval; one-sided samples return the boundary sample's value.
inline double erm_threshold(const std::vector<LabeledReal>& samples) {
  if (samples.empty()) throw std::invalid_argument("erm_threshold: empty sample");
  std::optional<double> max_neg;
  std::optional<double> min_pos;
  for (const auto& s : samples) {
    if (s.label == 0) {
      max_neg = max_neg ? std::max(*max_neg, s.x) : s.x;
    } else {
      min_pos = min_pos ? std::min(*min_pos, s.x) : s.x;
    }
  }
  if (max_neg && min_pos) return 0.5 * (*max_neg + *min_pos);
  if (min_pos) return *min_pos;
  return *max_neg;
}

struct PacRateResult {
  std::vector<double> grid;          // sample sizes actually used in the fit
  std::vector<double> mean_excess;   // mean analytic excess error per size
  std::vector<double> all_grid;      // full grid including pre-asymptotic points
  std::vector<double> all_mean_excess;
  LineFit fit;
};

// Mean analytic excess error of the SA-FL threshold ERM as a function of the
// joint sample size, and its log-log slope. The first grid point is dropped
// from the fit when its mean error is still pre-asymptotic (> 0.2).
inline PacRateResult pac_rate_experiment(const ThresholdInstance& inst,
                                         const std::vector<long long>& n_grid, int trials,
                                         std::uint64_t seed) {
  inst.validate();
  if (n_grid.size() < 4) throw std::invalid_argument("pac_rate_experiment: need >= 4 grid points");
  if (trials < 1) throw std::invalid_argument("pac_rate_experiment: trials >= 1");
  PacRateResult res;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const long long n = n_grid[gi];
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
      RngStream rng(seed, StreamPurpose::trial, gi, static_cast<std::uint64_t>(t));
      const auto sample = sample_mixture(inst, n, rng);
      const double t_hat = erm_threshold(sample);
      acc += excess_error_p(inst, t_hat);
    }
    res.all_grid.push_back(static_cast<double>(n));
    res.all_mean_excess.push_back(acc / trials);
  }
  for (std::size_t i = 0; i < res.all_grid.size(); ++i) {
    if (i == 0 && res.all_mean_excess[i] > 0.2) continue;  // pre-asymptotic
    res.grid.push_back(res.all_grid[i]);
    res.mean_excess.push_back(res.all_mean_excess[i]);
  }
  res.fit = fit_loglog_slope(res.grid, res.mean_excess);
  return res;
}

struct PositivelyRelatedFit {
  double alpha = 0.0;
  double beta = 0.0;
  double r2 = 0.0;
};

// Fits |eps_P(h_t) - eps_Q(h_t)| = alpha * eps_Q(h_t)^beta on an analytic
// grid of thresholds inside [a', b'].
inline PositivelyRelatedFit check_positively_related(const ThresholdInstance& inst,
                                                     const std::vector<double>& t_grid) {
  inst.validate();
  if (t_grid.size() < 3) throw std::invalid_argument("check_positively_related: need >= 3 points");
  std::vector<double> xs, ys;
  for (double t : t_grid) {
    if (t < inst.a_inner || t > inst.b_inner) {
      throw std::invalid_argument("check_positively_related: grid point outside [a', b']");
    }
    const double eq = excess_error_q(inst, t);
    const double diff = std::abs(excess_error_p(inst, t) - eq);
    if (!(eq > 0.0) || !(diff > 0.0)) {
      throw std::invalid_argument(
          "check_positively_related: grid point with zero excess error (t == t* or P == Q)");
    }
    xs.push_back(eq);
    ys.push_back(diff);
  }
  const LineFit fit = fit_loglog_slope(xs, ys);
  PositivelyRelatedFit out;
  out.beta = fit.slope;
  out.alpha = std::pow(10.0, fit.intercept);
  out.r2 = fit.r2;
  return out;
}

// Mean analytic excess error of ERM on n_T pure-P samples; the comparison
// target for the no-worse-than-centralized check.
inline double centralized_baseline(const ThresholdInstance& inst, long long n_t, int trials,
                                   std::uint64_t seed) {
  inst.validate();
  if (n_t < 1) throw std::invalid_argument("centralized_baseline: n_T >= 1");
  if (trials < 1) throw std::invalid_argument("centralized_baseline: trials >= 1");
  ThresholdInstance pure = inst;
  pure.lambda_d = 0.0;
  pure.lambda_p = 1.0;
  pure.n_t = n_t;
  pure.n_s = 0;
  double acc = 0.0;
  for (int t = 0; t < trials; ++t) {
    RngStream rng(seed, StreamPurpose::trial, 0xBA5EULL, static_cast<std::uint64_t>(t));
    const auto sample = sample_mixture(pure, n_t, rng);
    acc += excess_error_p(pure, erm_threshold(sample));
  }
  return acc / trials;
}

}  // namespace safl
