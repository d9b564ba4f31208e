#pragma once

#include <cmath>
#include <vector>

#include "stillact/core/error.hpp"

// F and t tests with p-values from our own regularized incomplete beta
// (continued fraction, Lentz's algorithm). Keeping the special function in
// the artifact pins the numeric behavior instead of inheriting whatever a
// host stats library does.

namespace stillact {

namespace detail {

inline double incbeta_cf(double a, double b, double x) {
  // continued fraction for the regularized incomplete beta, modified Lentz
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) return h;
  }
  throw Error("incbeta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  require(a > 0 && b > 0, "incbeta: shape parameters must be positive");
  require(x >= 0.0 && x <= 1.0, "incbeta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // symmetry keeps the continued fraction in its fast-converging region
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::incbeta_cf(a, b, x) / a;
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) + b * std::log1p(-x) +
                        a * std::log(x)) *
                   detail::incbeta_cf(b, a, 1.0 - x) / b;
}

/// Upper tail of the F distribution with (d1, d2) degrees of freedom.
inline double f_sf(double f, double d1, double d2) {
  require(f >= 0, "f_sf: negative statistic");
  if (f == 0.0) return 1.0;
  return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

/// Two-sided p for Student's t with df degrees of freedom.
inline double t_sf_two_sided(double t, double df) {
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct AnovaResult {
  double f_statistic = 0.0;
  double p_value = 1.0;
  std::size_t df_between = 0;
  std::size_t df_within = 0;
};

/// One-way ANOVA over k groups of scores.
inline AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  require(groups.size() >= 2, "anova: need at least two groups");
  std::size_t n_total = 0;
  double grand_sum = 0.0;
  for (const auto& g : groups) {
    require(g.size() >= 2, "anova: each group needs at least two values");
    n_total += g.size();
    for (double v : g) grand_sum += v;
  }
  const double grand_mean = grand_sum / static_cast<double>(n_total);

  double ss_between = 0.0, ss_within = 0.0;
  for (const auto& g : groups) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(g.size());
    ss_between += static_cast<double>(g.size()) * (mean - grand_mean) * (mean - grand_mean);
    for (double v : g) ss_within += (v - mean) * (v - mean);
  }

  AnovaResult r;
  r.df_between = groups.size() - 1;
  r.df_within = n_total - groups.size();
  if (ss_within == 0.0) {
    if (ss_between == 0.0) throw Error("anova: all values identical, F undefined (0/0)");
    throw Error("anova: zero within-group variance, F undefined");
  }
  const double ms_between = ss_between / static_cast<double>(r.df_between);
  const double ms_within = ss_within / static_cast<double>(r.df_within);
  r.f_statistic = ms_between / ms_within;
  r.p_value = f_sf(r.f_statistic, static_cast<double>(r.df_between),
                   static_cast<double>(r.df_within));
  return r;
}

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::size_t df = 0;
};

/// Paired two-sided t test: t = mean(d) / (sd(d)/sqrt(n)), df = n-1.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "t-test: length mismatch");
  const std::size_t n = a.size();
  require(n >= 2, "t-test: need at least two pairs");
  double mean_d = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_d += a[i] - b[i];
  mean_d /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean_d;
    ss += d * d;
  }
  if (ss == 0.0) throw Error("t-test: zero variance of differences, t undefined");
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.df = n - 1;
  r.t_statistic = mean_d / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = t_sf_two_sided(r.t_statistic, static_cast<double>(r.df));
  return r;
}

}  // namespace stillact
