#include "evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include "csv.hpp"

namespace voxsynth {

void RegionTable::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : rows) {
    if (r.volumes.size() != regions()) throw EvalError("region table: row '" + r.id + "' has a different region count");
    if (r.volumes.empty()) throw EvalError("region table: no regions");
    for (double v : r.volumes)
      if (!std::isfinite(v)) throw EvalError("region table: row '" + r.id + "' has a non-finite volume");
    if (std::find(kCohorts.begin(), kCohorts.end(), r.cohort) == kCohorts.end())
      throw EvalError("region table: unknown cohort '" + r.cohort + "'");
    if (r.id.find(',') != std::string::npos) throw EvalError("region table: id '" + r.id + "' contains a comma");
    if (!seen.emplace(r.cohort, r.id).second) throw EvalError("region table: duplicate id '" + r.id + "'");
    r.metadata.validate();
  }
}

void RegionTable::write_csv(std::ostream& os) const {
  validate();
  os << "id,age,sex,cohort";
  for (std::size_t k = 0; k < regions(); ++k) os << ",vol_" << k + 1;
  os << '\n';
  for (const auto& r : rows) {
    os << r.id << ',' << fmt(r.metadata.age_years()) << ',' << fmt(r.metadata.sex) << ',' << r.cohort;
    for (double v : r.volumes) os << ',' << fmt(v);
    os << '\n';
  }
}

RegionTable RegionTable::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw EvalError("region table: empty input");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "id" || header[1] != "age" || header[2] != "sex" || header[3] != "cohort")
    throw EvalError("region table: bad header");
  for (std::size_t k = 4; k < header.size(); ++k)
    if (header[k] != "vol_" + std::to_string(k - 3)) throw EvalError("region table: bad column '" + header[k] + "'");
  RegionTable t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw EvalError("region table: line " + std::to_string(lineno) + " has wrong field count");
    try {
      RegionRow r;
      r.id = f[0];
      r.metadata = Metadata::from_years(parse_double(f[1]), parse_double(f[2]));
      r.cohort = f[3];
      for (std::size_t k = 4; k < f.size(); ++k) r.volumes.push_back(parse_double(f[k]));
      t.rows.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw EvalError("region table: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  t.validate();
  return t;
}

std::vector<double> RegionTable::column(std::size_t region) const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.volumes.at(region));
  return out;
}

std::vector<double> RegionTable::ages() const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.metadata.age_years());
  return out;
}

RegionTable measure_table(std::span<const Volume> volumes, std::span<const Metadata> metadata, const PhantomSpec& spec,
                          double threshold, const std::string& cohort, const std::string& id_prefix) {
  if (volumes.size() != metadata.size()) throw EvalError("measure_table: volume and metadata counts differ");
  RegionTable t;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    RegionRow r;
    r.id = id_prefix + std::to_string(i);
    r.metadata = metadata[i];
    r.cohort = cohort;
    r.volumes = measure_regions_via_template(volumes[i], spec, metadata[i], threshold);
    t.rows.push_back(std::move(r));
  }
  return t;
}

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

TestResult safe_pearson(std::span<const double> x, std::span<const double> y) {
  try {
    return pearson_r(x, y);
  } catch (const StatsError&) {
    return {kNaN, kNaN};
  }
}

double safe_d(std::span<const double> a, std::span<const double> b) {
  try {
    return cohens_d(a, b);
  } catch (const StatsError&) {
    return kNaN;
  }
}

RegionTable sorted(const RegionTable& t) {
  RegionTable s = t;
  std::sort(s.rows.begin(), s.rows.end(),
            [](const RegionRow& a, const RegionRow& b) { return std::tie(a.cohort, a.id) < std::tie(b.cohort, b.id); });
  return s;
}

std::pair<std::vector<double>, std::vector<double>> by_sex(const RegionTable& t, std::size_t k) {
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const auto& r : t.rows) (r.metadata.sex == 1.0 ? out.first : out.second).push_back(r.volumes[k]);
  return out;
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

void put_test(std::ostream& os, const TestResult& t) { os << ',' << fmt(t.statistic) << ',' << fmt(t.p); }

}  // namespace

EffectReport plausibility_report(const RegionTable& real_in, const RegionTable& synth_in, const PhantomSpec& spec) {
  real_in.validate();
  synth_in.validate();
  if (real_in.regions() != synth_in.regions() || real_in.regions() != spec.regions.size())
    throw EvalError("plausibility_report: region sets differ (" + std::to_string(real_in.regions()) + " real, " +
                    std::to_string(synth_in.regions()) + " synthetic, " + std::to_string(spec.regions.size()) +
                    " in the phantom spec)");
  const RegionTable real = sorted(real_in), synth = sorted(synth_in);
  const auto real_age = real.ages(), synth_age = synth.ages();
  EffectReport rep;
  for (std::size_t k = 0; k < real.regions(); ++k) {
    RegionEffect e;
    const auto rv = real.column(k), sv = synth.column(k);
    e.d_real_vs_synth = cohens_d(rv, sv);
    e.effect = classify_effect(e.d_real_vs_synth);
    const auto [rf, rm] = by_sex(real, k);
    const auto [sf, sm] = by_sex(synth, k);
    e.d_sex_real = safe_d(rf, rm);
    e.d_sex_synth = safe_d(sf, sm);
    e.age_real = safe_pearson(rv, real_age);
    e.age_synth = safe_pearson(sv, synth_age);
    e.delta_d = std::fabs(e.d_sex_real - e.d_sex_synth);
    e.delta_r = std::fabs(e.age_real.statistic - e.age_synth.statistic);
    e.complexity = spec.regions[k].complexity();
    const auto& c = spec.regions[k].age_coeff;
    e.age_sign = sign_of(c[0] + c[1] + c[2]);
    e.sign_agrees = e.age_sign == 0 || sign_of(e.age_synth.statistic) == e.age_sign;
    if (e.effect != EffectClass::medium_to_large) ++rep.small_or_small_to_medium;
    rep.age_signs_agree = rep.age_signs_agree && e.sign_agrees;
    rep.regions.push_back(e);
  }
  std::vector<double> sr, ss, ar, as, dabs, cx;
  for (const auto& e : rep.regions) {
    sr.push_back(e.d_sex_real);
    ss.push_back(e.d_sex_synth);
    ar.push_back(e.age_real.statistic);
    as.push_back(e.age_synth.statistic);
    dabs.push_back(std::fabs(e.d_real_vs_synth));
    cx.push_back(e.complexity);
  }
  rep.sex_effect_correlation = safe_pearson(sr, ss);
  rep.age_effect_correlation = safe_pearson(ar, as);
  rep.complexity_correlation = safe_pearson(dabs, cx);
  return rep;
}

void EffectReport::write_csv(std::ostream& os) const {
  os << "region,cohens_d,effect_class,d_sex_real,d_sex_synth,delta_d,r_age_real,p_age_real,r_age_synth,p_age_synth,"
        "delta_r,complexity,age_sign,sign_agrees\n";
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const auto& e = regions[k];
    os << k + 1 << ',' << fmt(e.d_real_vs_synth) << ',' << to_string(e.effect) << ',' << fmt(e.d_sex_real) << ','
       << fmt(e.d_sex_synth) << ',' << fmt(e.delta_d);
    put_test(os, e.age_real);
    put_test(os, e.age_synth);
    os << ',' << fmt(e.delta_r) << ',' << fmt(e.complexity) << ',' << e.age_sign << ',' << (e.sign_agrees ? 1 : 0)
       << '\n';
  }
}

void EffectReport::write_summary_csv(std::ostream& os) const {
  os << "quantity,value,p\n";
  os << "regions," << regions.size() << ",\n";
  os << "small_or_small_to_medium," << small_or_small_to_medium << ",\n";
  os << "sex_effect_correlation," << fmt(sex_effect_correlation.statistic) << ',' << fmt(sex_effect_correlation.p)
     << '\n';
  os << "age_effect_correlation," << fmt(age_effect_correlation.statistic) << ',' << fmt(age_effect_correlation.p)
     << '\n';
  os << "complexity_correlation," << fmt(complexity_correlation.statistic) << ',' << fmt(complexity_correlation.p)
     << '\n';
  os << "age_signs_agree," << (age_signs_agree ? 1 : 0) << ",\n";
}

// ---------------------------------------------------------------------------

double RidgeModel::predict(std::span<const double> x) const {
  if (x.size() != beta.size()) throw EvalError("ridge: feature count mismatch");
  double y = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) y += (x[j] - feature_mean[j]) * beta[j];
  return y;
}

RidgeModel fit_ridge(const std::vector<std::vector<double>>& x, std::span<const double> y, double lambda) {
  if (x.size() != y.size() || x.empty()) throw EvalError("ridge: need matching, non-empty x and y");
  if (!(lambda >= 0.0)) throw EvalError("ridge: lambda must be >= 0");
  const std::size_t n = x.size(), p = x.front().size();
  RidgeModel m;
  m.feature_mean.assign(p, 0.0);
  for (const auto& row : x) {
    if (row.size() != p) throw EvalError("ridge: ragged features");
    for (std::size_t j = 0; j < p; ++j) m.feature_mean[j] += row[j];
  }
  for (auto& v : m.feature_mean) v /= static_cast<double>(n);
  const double ymean = mean(y);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  Eigen::VectorXd xc(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) xc(static_cast<Eigen::Index>(j)) = x[i][j] - m.feature_mean[j];
    A.noalias() += xc * xc.transpose();
    b += xc * (y[i] - ymean);
  }
  A /= static_cast<double>(n);
  b /= static_cast<double>(n);
  A.diagonal().array() += lambda;
  const Eigen::VectorXd beta = A.ldlt().solve(b);
  m.beta.assign(beta.data(), beta.data() + beta.size());
  for (double v : m.beta)
    if (!std::isfinite(v)) throw EvalError("ridge: singular system");
  m.intercept = ymean;
  return m;
}

namespace {

struct Fold {
  std::vector<std::size_t> train, test;
};

TestResult safe_one_sample(std::span<const double> x) {
  try {
    return t_test_one_sample(x, 0.0);
  } catch (const StatsError&) {
    return {kNaN, kNaN};
  }
}

std::vector<double> gaps(const std::vector<RidgeModel>& models, const RegionTable& t) {
  std::vector<double> out;
  for (const auto& r : t.rows) {
    double pred = 0.0;
    for (const auto& m : models) pred += m.predict(r.volumes);
    out.push_back(pred / static_cast<double>(models.size()) - r.metadata.age_years());
  }
  return out;
}

}  // namespace

AugmentationResult augmentation_experiment(const RegionTable& real, const RegionTable& pool,
                                           const RegionTable& accelerated, const RegionTable& heldout,
                                           const AugmentationOptions& opt) {
  if (opt.folds < 2) throw EvalError("augmentation: need at least 2 folds");
  if (real.rows.size() < opt.folds)
    throw EvalError("augmentation: " + std::to_string(real.rows.size()) + " real samples for " +
                    std::to_string(opt.folds) + " folds");
  for (std::size_t s : opt.pool_sizes)
    if (s > pool.rows.size())
      throw EvalError("augmentation: pool size " + std::to_string(s) + " exceeds " + std::to_string(pool.rows.size()) +
                      " synthetic rows");
  const std::size_t K = real.regions();
  for (const RegionTable* t : {&pool, &accelerated, &heldout})
    if (!t->rows.empty() && t->regions() != K) throw EvalError("augmentation: region counts differ between tables");

  std::vector<Fold> folds(opt.folds);
  for (std::size_t i = 0; i < real.rows.size(); ++i)
    for (std::size_t k = 0; k < opt.folds; ++k) (i % opt.folds == k ? folds[k].test : folds[k].train).push_back(i);

  const auto ages = real.ages();
  const double age_mean = mean(ages);
  AugmentationResult out;
  for (std::size_t S : opt.pool_sizes) {
    PoolResult pr;
    pr.size = S;
    std::vector<double> pred(real.rows.size(), 0.0);
    std::vector<RidgeModel> models;
    for (const auto& f : folds) {
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (std::size_t i : f.train) {
        x.push_back(real.rows[i].volumes);
        y.push_back(ages[i]);
      }
      for (std::size_t j = 0; j < S; ++j) {
        x.push_back(pool.rows[j].volumes);
        y.push_back(pool.rows[j].metadata.age_years());
      }
      models.push_back(fit_ridge(x, y, opt.lambda));
      for (std::size_t i : f.test) pred[i] = models.back().predict(real.rows[i].volumes);
    }
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double err = pred[i] - ages[i];
      pr.abs_errors.push_back(std::fabs(err));
      ss_res += err * err;
      ss_tot += (ages[i] - age_mean) * (ages[i] - age_mean);
    }
    pr.mae = mean(pr.abs_errors);
    pr.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : kNaN;
    pr.gap_accelerated = gaps(models, accelerated);
    pr.gap_heldout = gaps(models, heldout);
    pr.accelerated_test = safe_one_sample(pr.gap_accelerated);
    pr.heldout_test = safe_one_sample(pr.gap_heldout);
    out.pools.push_back(std::move(pr));
  }
  out.trend = {kNaN, kNaN};
  if (opt.pool_sizes.size() >= 2) {
    std::vector<double> sizes, centered;
    for (std::size_t i = 0; i < real.rows.size(); ++i) {
      double m = 0.0;
      for (const auto& p : out.pools) m += p.abs_errors[i];
      m /= static_cast<double>(out.pools.size());
      for (const auto& p : out.pools) {
        sizes.push_back(static_cast<double>(p.size));
        centered.push_back(p.abs_errors[i] - m);
      }
    }
    try {
      out.trend = spearman_rho(sizes, centered);
    } catch (const StatsError&) {
    }
  }
  return out;
}

void write_augmentation_csv(std::ostream& os, const AugmentationResult& r) {
  os << "pool_size,mae,r2,gap_accelerated_mean,t_accelerated,p_accelerated,gap_heldout_mean,t_heldout,p_heldout\n";
  auto m = [](const std::vector<double>& v) { return v.empty() ? kNaN : mean(v); };
  for (const auto& p : r.pools) {
    os << p.size << ',' << fmt(p.mae) << ',' << fmt(p.r2) << ',' << fmt(m(p.gap_accelerated));
    put_test(os, p.accelerated_test);
    os << ',' << fmt(m(p.gap_heldout));
    put_test(os, p.heldout_test);
    os << '\n';
  }
  os << "trend_spearman," << fmt(r.trend.statistic) << ',' << fmt(r.trend.p) << ",,,,,,\n";
}

void write_gap_csv(std::ostream& os, const PoolResult& pool, const RegionTable& accelerated,
                   const RegionTable& heldout) {
  os << "id,cohort,age,gap\n";
  for (std::size_t i = 0; i < accelerated.rows.size(); ++i)
    os << accelerated.rows[i].id << ',' << accelerated.rows[i].cohort << ','
       << fmt(accelerated.rows[i].metadata.age_years()) << ',' << fmt(pool.gap_accelerated[i]) << '\n';
  for (std::size_t i = 0; i < heldout.rows.size(); ++i)
    os << heldout.rows[i].id << ',' << heldout.rows[i].cohort << ',' << fmt(heldout.rows[i].metadata.age_years())
       << ',' << fmt(pool.gap_heldout[i])
       << '\n';
}

}  // namespace voxsynth
