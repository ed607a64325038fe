#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace safl {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_variance: need >= 2 values");
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_line: size mismatch");
  const auto n = static_cast<double>(xs.size());
  if (xs.size() < 2) throw std::invalid_argument("fit_line: need >= 2 points");
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate x values");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = (syy == 0.0) ? 0.0 : (sxy * sxy) / (sxx * syy);
  (void)n;
  return fit;
}

// OLS on (log10 x, log10 y); inputs must be strictly positive.
inline LineFit fit_loglog_slope(const std::vector<double>& xs,
                                const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("fit_loglog_slope: size mismatch");
  if (xs.size() < 3) throw std::invalid_argument("fit_loglog_slope: need >= 3 points");
  std::vector<double> lx(xs.size()), ly(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) {
      throw std::invalid_argument("fit_loglog_slope: non-positive value");
    }
    lx[i] = std::log10(xs[i]);
    ly[i] = std::log10(ys[i]);
  }
  return fit_line(lx, ly);
}

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};

// Two-sided Wilson score interval; default z is the 95% normal quantile.
inline WilsonInterval wilson_interval(long long successes, long long trials,
                                      double z = 1.959963984540054) {
  if (trials <= 0) throw std::invalid_argument("wilson_interval: trials <= 0");
  if (successes < 0 || successes > trials) {
    throw std::invalid_argument("wilson_interval: successes out of range");
  }
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = (z / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  WilsonInterval w;
  w.lo = successes == 0 ? 0.0 : std::max(0.0, center - half);
  w.hi = successes == trials ? 1.0 : std::min(1.0, center + half);
  return w;
}

inline double log_binom_coeff(long long n, long long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) -
         std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// P[Binomial(n, p) >= k], summed in the log domain.
inline double binomial_tail_geq(long long n, long long k, double p) {
  if (n < 0 || p < 0.0 || p > 1.0) throw std::invalid_argument("binomial_tail_geq: bad args");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double tail = 0.0;
  for (long long i = k; i <= n; ++i) {
    const double lg = log_binom_coeff(n, i) + static_cast<double>(i) * std::log(p) +
                      static_cast<double>(n - i) * std::log1p(-p);
    tail += std::exp(lg);
  }
  return std::min(1.0, tail);
}

// One-sided sign test: p-value of seeing >= wins successes out of n fair flips.
inline double sign_test_p_value(int wins, int n) {
  if (n <= 0 || wins < 0 || wins > n) throw std::invalid_argument("sign_test_p_value: bad args");
  return binomial_tail_geq(n, wins, 0.5);
}

// Kolmogorov-Smirnov statistic of a sample against the uniform CDF on [0, 1].
inline double ks_statistic_uniform(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("ks_statistic_uniform: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = xs[i];
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - cdf));
    d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
  }
  return d;
}

// Large-sample 95% critical value for the one-sample KS test.
inline double ks_critical_95(std::size_t n) {
  return 1.358 / std::sqrt(static_cast<double>(n));
}

}  // namespace safl
