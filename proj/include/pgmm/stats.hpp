#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "pgmm/errors.hpp"

namespace pgmm {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

/// Inverse standard normal CDF, Wichura's AS 241 (PPND16). Accurate to ~1e-15.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw ContractError("normal_quantile: p must be in [0,1]");
  }
  const double q = p - 0.5;
  double r;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
             4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
             2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
             5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
             0.59983220655588793769) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

namespace detail {

inline double gamma_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw ContractError("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return detail::gamma_series(a, x);
  return 1.0 - detail::gamma_cf(a, x);
}

inline double chi2_cdf(double x, double df) { return x <= 0.0 ? 0.0 : gamma_p(0.5 * df, 0.5 * x); }

/// Chi-square quantile by bisection on the regularized incomplete gamma.
inline double chi2_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ContractError("chi2_quantile: p must be in (0,1)");
  if (df <= 0.0) throw ContractError("chi2_quantile: df must be positive");
  double hi = df + 10.0;
  while (chi2_cdf(hi, df) < p) hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 200 && (hi - lo) > 1e-12 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Type-7 (linear interpolation) sample quantile of unsorted data.
inline double sample_quantile(std::vector<double> x, double p) {
  if (x.empty()) throw ContractError("sample_quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("sample_quantile: p outside [0,1]");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto i = static_cast<std::size_t>(std::floor(h));
  if (i + 1 >= x.size()) return x.back();
  return x[i] + (h - static_cast<double>(i)) * (x[i + 1] - x[i]);
}

inline double sample_quantile(const Eigen::VectorXd& x, double p) {
  return sample_quantile(std::vector<double>(x.data(), x.data() + x.size()), p);
}

inline double sample_mean(const Eigen::VectorXd& x) { return x.mean(); }

inline double sample_sd(const Eigen::VectorXd& x) {
  const double m = x.mean();
  return std::sqrt((x.array() - m).square().sum() / (static_cast<double>(x.size()) - 1.0));
}

/// Batch-means standard error of the mean of a (possibly autocorrelated) series.
inline double batch_means_se(const Eigen::VectorXd& x) {
  const auto n = static_cast<std::size_t>(x.size());
  if (n < 16) throw ContractError("batch_means_se: series too short");
  const auto m = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t b = n / m;
  Eigen::VectorXd means(m);
  for (std::size_t j = 0; j < m; ++j) means[j] = x.segment(j * b, b).mean();
  const double grand = means.mean();
  const double var_bm = (means.array() - grand).square().sum() / (static_cast<double>(m) - 1.0);
  return std::sqrt(var_bm / static_cast<double>(m));
}

/// Split-chain potential scale reduction factor on a single coordinate.
inline double split_rhat(const Eigen::VectorXd& x) {
  const auto n = static_cast<Eigen::Index>(x.size()) / 2;
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd a = x.head(n), b = x.segment(n, n);
  const double ma = a.mean(), mb = b.mean();
  const double va = (a.array() - ma).square().sum() / (n - 1.0);
  const double vb = (b.array() - mb).square().sum() / (n - 1.0);
  const double w = 0.5 * (va + vb);
  const double mean_all = 0.5 * (ma + mb);
  const double bvar = n * ((ma - mean_all) * (ma - mean_all) + (mb - mean_all) * (mb - mean_all));
  if (w <= 0.0) return 1.0;
  const double var_plus = (n - 1.0) / n * w + bvar / n;
  return std::sqrt(var_plus / w);
}

/// Anderson-Darling normality statistic with estimated mean/variance,
/// Stephens' small-sample adjustment applied. 1% critical value: 1.035.
inline double anderson_darling_normal(std::vector<double> x) {
  const std::size_t n = x.size();
  if (n < 8) throw ContractError("anderson_darling_normal: need at least 8 points");
  std::sort(x.begin(), x.end());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n) - 1.0;
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw NumericalError("anderson_darling_normal: degenerate sample");
  double a2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double zi = normal_cdf((x[i] - mean) / sd);
    double zni = normal_cdf((x[n - 1 - i] - mean) / sd);
    zi = std::min(std::max(zi, 1e-300), 1.0 - 1e-16);
    zni = std::min(std::max(zni, 1e-300), 1.0 - 1e-16);
    a2 += (2.0 * static_cast<double>(i) + 1.0) * (std::log(zi) + std::log1p(-zni));
  }
  a2 = -static_cast<double>(n) - a2 / static_cast<double>(n);
  const double nn = static_cast<double>(n);
  return a2 * (1.0 + 0.75 / nn + 2.25 / (nn * nn));
}

constexpr double kAndersonDarling1pc = 1.035;

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ContractError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double ai = a[i], bj = b[j];
    if (ai <= bj) ++i;  // ties advance both sides
    if (bj <= ai) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(a.size());
    const double fb = static_cast<double>(j) / static_cast<double>(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

inline double ks_two_sample_critical(std::size_t n, std::size_t m, double alpha) {
  // c(alpha) = sqrt(-ln(alpha/2)/2)
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

/// Total-variation distance between the empirical law of `draws` and a reference
/// CDF, computed over `bins` equal-width cells spanning the draws plus open tails.
template <typename Cdf>
double tv_distance_to_cdf(const Eigen::VectorXd& draws, Cdf&& cdf, int bins, double lo, double hi) {
  if (draws.size() < 100) throw ContractError("tv_distance_to_cdf: too few draws");
  const double n = static_cast<double>(draws.size());
  const double w = (hi - lo) / bins;
  std::vector<double> counts(static_cast<std::size_t>(bins) + 2, 0.0);
  for (Eigen::Index t = 0; t < draws.size(); ++t) {
    const double v = draws[t];
    if (v < lo) counts[0] += 1.0;
    else if (v >= hi) counts[static_cast<std::size_t>(bins) + 1] += 1.0;
    else counts[1 + static_cast<std::size_t>((v - lo) / w)] += 1.0;
  }
  double tv = std::abs(counts[0] / n - cdf(lo));
  for (int b = 0; b < bins; ++b) {
    const double p = cdf(lo + (b + 1) * w) - cdf(lo + b * w);
    tv += std::abs(counts[static_cast<std::size_t>(b) + 1] / n - p);
  }
  tv += std::abs(counts[static_cast<std::size_t>(bins) + 1] / n - (1.0 - cdf(hi)));
  return 0.5 * tv;
}

}  // namespace pgmm
