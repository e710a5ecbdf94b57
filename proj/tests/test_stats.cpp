#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "stats.hpp"

using namespace voxsynth;

namespace {

// Two-tailed Student t p-value by Simpson integration of the density.
double t_two_tailed(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double a = std::abs(t);
  const int n = 20000;
  const double h = a / n;
  double s = pdf(0) + pdf(a);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

std::vector<double> normal_sample(std::size_t n, double mu, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> d(mu, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

}  // namespace

TEST_SUITE("stats") {
  TEST_CASE("cohens_d examples and invariants") {
    const std::vector<double> a{1, 2, 3}, b{2, 3, 4};
    CHECK(std::abs(cohens_d(a, b) - (-1.0)) < 1e-12);
    CHECK(cohens_d(a, a) == 0.0);
    CHECK(cohens_d(b, a) == -cohens_d(a, b));
    std::vector<double> a7, b7;
    for (double v : a) a7.push_back(7.5 * v);
    for (double v : b) b7.push_back(7.5 * v);
    CHECK(cohens_d(a7, b7) == doctest::Approx(-1.0).epsilon(1e-12));

    // unequal sizes against the pooled-sd formula by hand
    const std::vector<double> c{1, 4, 2, 8}, e{3, 3, 5};
    const double sa2 = (std::pow(1 - 3.75, 2) + std::pow(4 - 3.75, 2) + std::pow(2 - 3.75, 2) + std::pow(8 - 3.75, 2)) / 3;
    const double sb2 = (std::pow(3 - 11.0 / 3, 2) * 2 + std::pow(5 - 11.0 / 3, 2)) / 2;
    const double sp = std::sqrt((3 * sa2 + 2 * sb2) / 5);
    CHECK(cohens_d(c, e) == doctest::Approx((3.75 - 11.0 / 3) / sp).epsilon(1e-12));

    const std::vector<double> flat{2, 2, 2};
    CHECK_THROWS_AS(cohens_d(flat, flat), StatsError);
    const std::vector<double> one{1};
    CHECK_THROWS_AS(cohens_d(one, a), StatsError);
  }

  TEST_CASE("classify_effect boundaries") {
    CHECK(classify_effect(0.15) == EffectClass::small);
    CHECK(classify_effect(-0.5) == EffectClass::medium_to_large);
    CHECK(classify_effect(0.2) == EffectClass::small_to_medium);
    CHECK(classify_effect(-0.2) == EffectClass::small_to_medium);
    CHECK(classify_effect(std::nextafter(0.2, 0.0)) == EffectClass::small);
    CHECK(classify_effect(std::nextafter(0.5, 0.0)) == EffectClass::small_to_medium);
    CHECK(classify_effect(0.5) == EffectClass::medium_to_large);
    CHECK(classify_effect(0.0) == EffectClass::small);
    // every point lands in exactly one class, and classes are ordered in |d|
    int prev = 0;
    for (int i = 0; i <= 2000; ++i) {
      const int c = static_cast<int>(classify_effect(i * 0.0005));
      CHECK(c >= prev);
      prev = c;
      CHECK(classify_effect(-i * 0.0005) == classify_effect(i * 0.0005));
    }
    CHECK(to_string(EffectClass::small_to_medium) == "small-to-medium");
  }

  TEST_CASE("pearson and spearman") {
    const std::vector<double> x{1, 2, 3}, y{2, 4, 6};
    CHECK(pearson_r(x, y).statistic == doctest::Approx(1.0).epsilon(1e-15));
    std::mt19937_64 rng(1);
    const auto u = normal_sample(1000, 0, 1, rng), v = normal_sample(1000, 0, 1, rng);
    CHECK(std::abs(pearson_r(u, v).statistic) < 0.1);
    std::vector<double> w;
    for (double e : u) w.push_back(3.0 * e - 2.0);
    const auto r1 = pearson_r(u, v), r2 = pearson_r(w, v);
    CHECK(r1.statistic == doctest::Approx(r2.statistic).epsilon(1e-12));

    const auto a = normal_sample(12, 0, 1, rng);
    auto b = normal_sample(12, 0, 1, rng);
    for (std::size_t i = 0; i < 12; ++i) b[i] += a[i];
    const auto r = pearson_r(a, b);
    const double t = r.statistic * std::sqrt(10.0 / (1 - r.statistic * r.statistic));
    CHECK(r.p == doctest::Approx(t_two_tailed(t, 10)).epsilon(1e-6));

    std::vector<double> cubed;
    for (double e : a) cubed.push_back(e * e * e);
    CHECK(spearman_rho(a, cubed).statistic == doctest::Approx(1.0));
    const std::vector<double> tied{1, 2, 2, 3}, other{1, 3, 2, 4};
    // average ranks 1, 2.5, 2.5, 4 against 1, 3, 2, 4
    const std::vector<double> ra{1, 2.5, 2.5, 4}, rb{1, 3, 2, 4};
    CHECK(spearman_rho(tied, other).statistic == doctest::Approx(pearson_r(ra, rb).statistic).epsilon(1e-14));

    const std::vector<double> constant{5, 5, 5};
    CHECK_THROWS_AS(pearson_r(constant, x), StatsError);
  }

  TEST_CASE("fisher z comparison") {
    const auto same = fisher_z_compare(0.4, 50, 0.4, 50);
    CHECK(same.statistic == 0.0);
    CHECK(same.p == doctest::Approx(1.0));
    const auto res = fisher_z_compare(0.843, 57, 0.421, 57);
    const double z = (std::atanh(0.843) - std::atanh(0.421)) / std::sqrt(2.0 / 54.0);
    CHECK(res.statistic == doctest::Approx(z).epsilon(1e-12));
    CHECK(res.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-9));
    CHECK(res.p < 0.01);
    CHECK(fisher_z_compare(0.421, 57, 0.843, 57).statistic == -res.statistic);
    CHECK_THROWS_AS(fisher_z_compare(1.0, 10, 0.5, 10), StatsError);
    CHECK_THROWS_AS(fisher_z_compare(0.2, 3, 0.5, 10), StatsError);
  }

  TEST_CASE("t tests") {
    std::vector<double> x{1, 1, 1, 1};
    x[0] += 0.01;
    x[2] -= 0.02;
    const auto one = t_test_one_sample(x, mean(x));
    CHECK(std::abs(one.statistic) < 1e-9);
    CHECK(one.p == doctest::Approx(1.0));

    const std::vector<double> s{3, 1, 4, 1, 5, 9, 2, 6};
    CHECK(t_test_welch(s, s).statistic == 0.0);
    const double t = (mean(s) - 2.0) / (stddev(s) / std::sqrt(8.0));
    CHECK(t_test_one_sample(s, 2.0).statistic == doctest::Approx(t).epsilon(1e-12));
    CHECK(t_test_one_sample(s, 2.0).p == doctest::Approx(t_two_tailed(t, 7)).epsilon(1e-6));

    std::mt19937_64 rng(2);
    int rejected = 0;
    for (int rep = 0; rep < 20; ++rep) {
      const auto a = normal_sample(100, 0, 1, rng), b = normal_sample(100, 1, 1, rng);
      rejected += t_test_welch(a, b).p < 0.001;
    }
    CHECK(rejected >= 19);

    // Welch statistic and Satterthwaite degrees of freedom by hand
    const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8, 10, 12};
    const double va = stddev(a) * stddev(a) / 4, vb = stddev(b) * stddev(b) / 6;
    const double tw = (mean(a) - mean(b)) / std::sqrt(va + vb);
    const double df = (va + vb) * (va + vb) / (va * va / 3 + vb * vb / 5);
    const auto w = t_test_welch(a, b);
    CHECK(w.statistic == doctest::Approx(tw).epsilon(1e-12));
    CHECK(w.p == doctest::Approx(t_two_tailed(tw, df)).epsilon(1e-6));

    const std::vector<double> flat{2, 2, 2};
    CHECK_THROWS_AS(t_test_one_sample(flat, 1.0), StatsError);
  }

  TEST_CASE("anova") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 10; ++rep) {
      const auto a = normal_sample(7 + rep, 0, 1, rng), b = normal_sample(9, 0.3, 2, rng);
      const auto f = anova_oneway({a, b});
      const auto t = t_test_pooled(a, b);
      CHECK(std::abs(f.statistic - t.statistic * t.statistic) < 1e-8);
      CHECK(f.p == doctest::Approx(t.p).epsilon(1e-8));
    }
    const std::vector<double> noise{-0.1, 0.2, -0.1};
    std::vector<std::vector<double>> same;
    for (double c : {0.0, 0.0, 0.0}) {
      std::vector<double> g;
      for (double e : noise) g.push_back(c + e);
      same.push_back(g);
    }
    CHECK(anova_oneway(same).statistic == doctest::Approx(0.0).scale(1.0));
    const auto base = normal_sample(20, 0, 1, rng);
    auto shifted = normal_sample(20, 10, 1, rng);
    CHECK(anova_oneway({base, shifted, normal_sample(20, 0, 1, rng)}).p < 0.001);
    CHECK_THROWS_AS(anova_oneway({{1, 1}, {1, 1}}), StatsError);
    CHECK_THROWS_AS(anova_oneway({{1, 2}}), StatsError);
  }
}
