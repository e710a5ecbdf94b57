#include "stats.hpp"

#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

namespace voxsynth {

namespace {

void require_finite(std::span<const double> x, const char* who) {
  for (double v : x)
    if (!std::isfinite(v)) throw StatsError(std::string(who) + ": non-finite input");
}

double sum_sq_dev(std::span<const double> x, double m) {
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s;
}

double t_two_tailed(double t, double df) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double mean(std::span<const double> x) {
  if (x.empty()) throw StatsError("mean: empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.size() < 2) throw StatsError("stddev: need at least 2 values");
  return std::sqrt(sum_sq_dev(x, mean(x)) / static_cast<double>(x.size() - 1));
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw StatsError("cohens_d: each sample needs at least 2 values");
  require_finite(a, "cohens_d");
  require_finite(b, "cohens_d");
  const double ma = mean(a), mb = mean(b);
  const double pooled =
      std::sqrt((sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / static_cast<double>(a.size() + b.size() - 2));
  if (!(pooled > 0.0)) throw StatsError("cohens_d: zero pooled variance");
  return (ma - mb) / pooled;
}

EffectClass classify_effect(double d) {
  if (!std::isfinite(d)) throw StatsError("classify_effect: non-finite d");
  const double m = std::fabs(d);
  if (m < 0.2) return EffectClass::small;
  if (m < 0.5) return EffectClass::small_to_medium;
  return EffectClass::medium_to_large;
}

std::string to_string(EffectClass c) {
  switch (c) {
    case EffectClass::small: return "small";
    case EffectClass::small_to_medium: return "small-to-medium";
    case EffectClass::medium_to_large: return "medium-to-large";
  }
  return "?";
}

TestResult pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError("pearson_r: length mismatch");
  if (x.size() < 3) throw StatsError("pearson_r: need at least 3 pairs");
  require_finite(x, "pearson_r");
  require_finite(y, "pearson_r");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
  const double sxx = sum_sq_dev(x, mx), syy = sum_sq_dev(y, my);
  if (!(sxx > 0.0) || !(syy > 0.0)) throw StatsError("pearson_r: constant input");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = static_cast<double>(x.size() - 2);
  const double t = std::fabs(r) == 1.0 ? HUGE_VAL : r * std::sqrt(df / (1.0 - r * r));
  return {r, t_two_tailed(t, df)};
}

TestResult spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw StatsError("spearman_rho: length mismatch");
  const auto rx = ranks(x), ry = ranks(y);
  return pearson_r(rx, ry);
}

TestResult fisher_z_compare(double r1, std::size_t n1, double r2, std::size_t n2) {
  if (!(std::fabs(r1) < 1.0) || !(std::fabs(r2) < 1.0)) throw StatsError("fisher_z_compare: |r| must be < 1");
  if (n1 < 4 || n2 < 4) throw StatsError("fisher_z_compare: n must be >= 4");
  const double se = std::sqrt(1.0 / static_cast<double>(n1 - 3) + 1.0 / static_cast<double>(n2 - 3));
  const double z = (std::atanh(r1) - std::atanh(r2)) / se;
  boost::math::normal dist;
  return {z, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(z)))};
}

TestResult t_test_one_sample(std::span<const double> x, double mu0) {
  if (x.size() < 2) throw StatsError("t_test_one_sample: need at least 2 values");
  require_finite(x, "t_test_one_sample");
  const double s = stddev(x);
  if (!(s > 0.0)) throw StatsError("t_test_one_sample: zero variance");
  const double n = static_cast<double>(x.size());
  const double t = (mean(x) - mu0) / (s / std::sqrt(n));
  return {t, t_two_tailed(t, n - 1.0)};
}

TestResult t_test_welch(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw StatsError("t_test_welch: each sample needs at least 2 values");
  require_finite(a, "t_test_welch");
  require_finite(b, "t_test_welch");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sum_sq_dev(a, mean(a)) / (na - 1.0) / na;
  const double vb = sum_sq_dev(b, mean(b)) / (nb - 1.0) / nb;
  if (!(va + vb > 0.0)) throw StatsError("t_test_welch: zero variance in both samples");
  const double t = (mean(a) - mean(b)) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  return {t, t_two_tailed(t, df)};
}

TestResult t_test_pooled(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw StatsError("t_test_pooled: each sample needs at least 2 values");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sp2 = (sum_sq_dev(a, mean(a)) + sum_sq_dev(b, mean(b))) / (na + nb - 2.0);
  if (!(sp2 > 0.0)) throw StatsError("t_test_pooled: zero pooled variance");
  const double t = (mean(a) - mean(b)) / std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  return {t, t_two_tailed(t, na + nb - 2.0)};
}

TestResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw StatsError("anova_oneway: need at least 2 groups");
  std::size_t n = 0;
  double grand = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw StatsError("anova_oneway: each group needs at least 2 values");
    require_finite(g, "anova_oneway");
    n += g.size();
    grand += std::accumulate(g.begin(), g.end(), 0.0);
  }
  grand /= static_cast<double>(n);
  double between = 0.0, within = 0.0;
  for (const auto& g : groups) {
    const double m = mean(g);
    between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    within += sum_sq_dev(g, m);
  }
  const double df1 = static_cast<double>(groups.size() - 1);
  const double df2 = static_cast<double>(n - groups.size());
  if (!(within > 0.0)) {
    if (!(between > 0.0)) throw StatsError("anova_oneway: all values identical");
    return {HUGE_VAL, 0.0};
  }
  const double F = (between / df1) / (within / df2);
  boost::math::fisher_f dist(df1, df2);
  return {F, boost::math::cdf(boost::math::complement(dist, F))};
}

}  // namespace voxsynth
