#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "evaluation.hpp"
#include "oracles.hpp"

using namespace voxsynth;

namespace {

// Ground-truth region volumes of a rendered cohort, as a table.
RegionTable cohort_table(const PhantomSpec& spec, std::size_t n, std::uint64_t seed, const std::string& cohort) {
  CohortOptions opt;
  opt.count = n;
  RegionTable t;
  std::size_t i = 0;
  for (const auto& lv : generate_cohort(spec, opt, seed))
    t.rows.push_back({cohort + "_" + std::to_string(i++), lv.metadata, cohort, lv.region_volumes});
  return t;
}

const RegionTable& real_table() {
  static const RegionTable t = cohort_table(PhantomSpec::default_spec(), 60, 51, "real");
  return t;
}

RegionTable relabel(RegionTable t, const std::string& cohort) {
  for (auto& r : t.rows) r.cohort = cohort;
  return t;
}

// Closed-form ridge in mean form: (Xc'Xc/n + lambda I) beta = Xc'yc/n.
std::vector<double> ridge_oracle(const std::vector<std::vector<double>>& x, const std::vector<double>& y, double lambda,
                                 double& intercept) {
  const std::size_t n = x.size(), p = x[0].size();
  std::vector<double> mu(p, 0.0);
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    my += y[i] / n;
    for (std::size_t j = 0; j < p; ++j) mu[j] += x[i][j] / n;
  }
  std::vector<std::vector<double>> A(p, std::vector<double>(p, 0.0)), B(p, std::vector<double>(1, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < p; ++a) {
      B[a][0] += (x[i][a] - mu[a]) * (y[i] - my) / n;
      for (std::size_t b = 0; b < p; ++b) A[a][b] += (x[i][a] - mu[a]) * (x[i][b] - mu[b]) / n;
    }
  for (std::size_t a = 0; a < p; ++a) A[a][a] += lambda;
  const auto beta = oracle::solve(A, B);
  std::vector<double> out(p);
  intercept = my;
  for (std::size_t a = 0; a < p; ++a) {
    out[a] = beta[a][0];
    intercept -= out[a] * mu[a];
  }
  return out;
}

double predict_raw(const std::vector<double>& beta, double intercept, const std::vector<double>& x) {
  double s = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) s += beta[j] * x[j];
  return s;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("region tables round-trip through CSV and validate their contents") {
    RegionTable t = real_table();
    t.rows[3].volumes[1] = 1234.5678901234567;
    t.rows[4].metadata = Metadata::from_years(47.123456789, 1);
    std::stringstream ss;
    t.write_csv(ss);
    const std::string text = ss.str();
    CHECK(text.rfind("id,age,sex,cohort,vol_1,vol_2,vol_3,vol_4,vol_5,vol_6\n", 0) == 0);
    std::istringstream in(text);
    const auto back = RegionTable::read_csv(in);
    REQUIRE(back.rows.size() == t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      CHECK(back.rows[i].id == t.rows[i].id);
      CHECK(back.rows[i].cohort == t.rows[i].cohort);
      CHECK(back.rows[i].volumes == t.rows[i].volumes);
      CHECK(back.rows[i].metadata.sex == t.rows[i].metadata.sex);
      CHECK(back.rows[i].metadata.age_years() == doctest::Approx(t.rows[i].metadata.age_years()).epsilon(1e-13));
    }
    std::stringstream again;
    back.write_csv(again);
    CHECK(again.str() == text);

    CHECK_NOTHROW(t.validate());
    auto bad = t;
    bad.rows[2].volumes.pop_back();
    CHECK_THROWS_AS(bad.validate(), EvalError);
    bad = t;
    bad.rows[2].volumes[0] = std::nan("");
    CHECK_THROWS_AS(bad.validate(), EvalError);
    bad = t;
    bad.rows[2].cohort = "imaginary";
    CHECK_THROWS_AS(bad.validate(), EvalError);
    bad = t;
    bad.rows[2].id = bad.rows[1].id;
    CHECK_THROWS_AS(bad.validate(), EvalError);

    std::istringstream wrong_header("id,age,cohort,vol_1\nx,30,real,5\n");
    CHECK_THROWS_AS(RegionTable::read_csv(wrong_header), EvalError);
    std::istringstream short_row("id,age,sex,cohort,vol_1,vol_2\nx,30,1,real,5\n");
    CHECK_THROWS_AS(RegionTable::read_csv(short_row), EvalError);
    std::istringstream not_number("id,age,sex,cohort,vol_1\nx,thirty,1,real,5\n");
    CHECK_THROWS_AS(RegionTable::read_csv(not_number), EvalError);
  }

  TEST_CASE("plausibility of a table against itself") {
    const auto spec = PhantomSpec::default_spec();
    const auto& real = real_table();
    const auto rep = plausibility_report(real, relabel(real, "synthetic"), spec);
    REQUIRE(rep.regions.size() == 6);
    for (const auto& e : rep.regions) {
      CHECK(e.d_real_vs_synth == 0.0);
      CHECK(e.effect == EffectClass::small);
      CHECK(e.delta_d == 0.0);
      CHECK(e.delta_r == 0.0);
      CHECK(e.age_real.p == e.age_synth.p);
    }
    CHECK(rep.small_or_small_to_medium == 6);
    CHECK(rep.sex_effect_correlation.statistic == doctest::Approx(1.0));
    CHECK(rep.age_effect_correlation.statistic == doctest::Approx(1.0));
    CHECK(rep.age_signs_agree);
    for (std::size_t k = 0; k < 6; ++k) {
      const auto& c = spec.regions[k].age_coeff;
      const double s = c[0] + c[1] + c[2];
      CHECK(rep.regions[k].age_sign == (s > 0) - (s < 0));
      if (s != 0.0) CHECK((rep.regions[k].age_real.statistic > 0) == (s > 0));
    }
  }

  TEST_CASE("plausibility is invariant to row order") {
    const auto spec = PhantomSpec::default_spec();
    const auto& real = real_table();
    const auto synth = relabel(cohort_table(spec, 40, 52, "synthetic"), "synthetic");
    const auto a = plausibility_report(real, synth, spec);
    std::mt19937_64 rng(53);
    auto r2 = real, s2 = synth;
    std::shuffle(r2.rows.begin(), r2.rows.end(), rng);
    std::shuffle(s2.rows.begin(), s2.rows.end(), rng);
    const auto b = plausibility_report(r2, s2, spec);
    std::stringstream sa, sb;
    a.write_csv(sa);
    a.write_summary_csv(sa);
    b.write_csv(sb);
    b.write_summary_csv(sb);
    CHECK(sa.str() == sb.str());
    CHECK(a.age_effect_correlation.statistic > 0.9);
  }

  TEST_CASE("a shift of two pooled sd is medium-to-large") {
    const auto spec = PhantomSpec::default_spec();
    const auto& real = real_table();
    auto synth = relabel(cohort_table(spec, 60, 54, "synthetic"), "synthetic");
    const auto base = plausibility_report(real, synth, spec);
    const auto rv = real.column(2), sv = synth.column(2);
    const double na = rv.size(), nb = sv.size();
    const double sp = std::sqrt(((na - 1) * std::pow(stddev(rv), 2) + (nb - 1) * std::pow(stddev(sv), 2)) / (na + nb - 2));
    for (auto& row : synth.rows) row.volumes[2] += 2 * sp;
    const auto shifted = plausibility_report(real, synth, spec);
    CHECK(shifted.regions[2].effect == EffectClass::medium_to_large);
    CHECK(shifted.regions[2].d_real_vs_synth == doctest::Approx(base.regions[2].d_real_vs_synth - 2).epsilon(1e-9));
    CHECK(shifted.small_or_small_to_medium + 1 <= base.small_or_small_to_medium);
    for (std::size_t k : {0u, 1u, 3u, 4u, 5u})
      CHECK(shifted.regions[k].d_real_vs_synth == base.regions[k].d_real_vs_synth);

    auto fewer = synth;
    for (auto& row : fewer.rows) row.volumes.pop_back();
    CHECK_THROWS_AS(plausibility_report(real, fewer, spec), EvalError);
  }

  TEST_CASE("ridge matches the closed form and ignores duplicated rows") {
    std::mt19937_64 rng(55);
    for (int inst = 0; inst < 5; ++inst) {
      const std::size_t n = 8 + 5 * inst, p = 1 + inst;
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (std::size_t i = 0; i < n; ++i) {
        x.push_back(oracle::random_tensor({p}, rng, 0, 100).data);
        y.push_back(oracle::random_tensor({1}, rng, 13, 91).data[0]);
      }
      for (double lambda : {0.0, 1.0, 25.0}) {
        const auto m = fit_ridge(x, y, lambda);
        double b0 = 0.0;
        const auto beta = ridge_oracle(x, y, lambda, b0);
        for (std::size_t t = 0; t < 4; ++t) {
          const auto probe = oracle::random_tensor({p}, rng, 0, 100).data;
          CHECK(m.predict(probe) == doctest::Approx(predict_raw(beta, b0, probe)).epsilon(1e-9));
        }
        auto xx = x;
        auto yy = y;
        xx.insert(xx.end(), x.begin(), x.end());
        yy.insert(yy.end(), y.begin(), y.end());
        const auto d = fit_ridge(xx, yy, lambda);
        for (std::size_t j = 0; j < p; ++j) CHECK(d.beta[j] == doctest::Approx(m.beta[j]).epsilon(1e-9).scale(1e-12));
        CHECK(d.predict(x[0]) == doctest::Approx(m.predict(x[0])).epsilon(1e-12));
      }
    }
    const std::vector<std::vector<double>> x{{1.0}, {2.0}};
    const std::vector<double> y{1.0};
    CHECK_THROWS_AS(fit_ridge(x, y, 1.0), EvalError);
    CHECK_THROWS_AS(fit_ridge(x, std::vector<double>{1, 2}, -1.0), EvalError);
  }

  TEST_CASE("augmentation detects an accelerated cohort and is reproducible") {
    const auto spec = PhantomSpec::default_spec();
    const auto real = cohort_table(spec, 100, 56, "real");
    const auto accel = cohort_table(spec.with_age_scaled(2.0), 100, 57, "accelerated");
    const auto held = cohort_table(spec, 100, 58, "heldout");
    const auto pool = cohort_table(spec, 50, 59, "augment");
    AugmentationOptions opt;
    opt.pool_sizes = {0, 50};
    const auto res = augmentation_experiment(real, pool, accel, held, opt);
    REQUIRE(res.pools.size() == 2);
    for (const auto& p : res.pools) {
      CHECK(p.abs_errors.size() == 100);
      CHECK(p.gap_accelerated.size() == 100);
      CHECK(p.gap_heldout.size() == 100);
      CHECK(mean(p.gap_accelerated) > 0.0);
      CHECK(p.accelerated_test.p < 0.05);
      CHECK(mean(p.abs_errors) == doctest::Approx(p.mae).epsilon(1e-12));
      CHECK(p.r2 > 0.5);
      CHECK(std::abs(mean(p.gap_heldout)) < mean(p.gap_accelerated));
    }

    // pool size zero uses only the real folds, so it equals a hand-run two-fold ridge
    std::vector<double> errs(100);
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (std::size_t i = 0; i < 100; ++i)
        if (i % 2 != k) x.push_back(real.rows[i].volumes), y.push_back(real.rows[i].metadata.age_years());
      const auto m = fit_ridge(x, y, opt.lambda);
      for (std::size_t i = k; i < 100; i += 2)
        errs[i] = std::abs(m.predict(real.rows[i].volumes) - real.rows[i].metadata.age_years());
    }
    for (std::size_t i = 0; i < 100; ++i) CHECK(res.pools[0].abs_errors[i] == doctest::Approx(errs[i]).epsilon(1e-12));

    const auto again = augmentation_experiment(real, pool, accel, held, opt);
    std::stringstream a, b;
    write_augmentation_csv(a, res);
    write_augmentation_csv(b, again);
    CHECK(a.str() == b.str());
    std::stringstream g;
    write_gap_csv(g, res.pools[1], accel, held);
    const std::string gaps = g.str();
    CHECK(std::count(gaps.begin(), gaps.end(), '\n') == 201);

    opt.pool_sizes = {0, 51};
    CHECK_THROWS_AS(augmentation_experiment(real, pool, accel, held, opt), EvalError);
    opt.pool_sizes = {0};
    opt.folds = 1;
    CHECK_THROWS_AS(augmentation_experiment(real, pool, accel, held, opt), EvalError);
  }

  TEST_CASE("a pool drawn from the true generator lowers the error of a small real set") {
    const auto spec = PhantomSpec::default_spec();
    const auto real = cohort_table(spec, 20, 60, "real");
    const auto pool = cohort_table(spec, 200, 61, "augment");
    const auto held = cohort_table(spec, 40, 62, "heldout");
    AugmentationOptions opt;
    opt.pool_sizes = {0, 200};
    const auto res = augmentation_experiment(real, pool, RegionTable{}, held, opt);
    MESSAGE("MAE " << res.pools[0].mae << " -> " << res.pools[1].mae);
    CHECK(res.pools[1].mae < res.pools[0].mae);
    CHECK(res.trend.statistic < 0.0);
  }
}
