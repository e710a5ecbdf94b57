#pragma once

// Region-volume tables, real-vs-synthetic plausibility statistics and the
// ridge-regression age-prediction augmentation experiment.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "phantom.hpp"
#include "stats.hpp"

namespace voxsynth {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Accepted cohort labels.
inline const std::vector<std::string> kCohorts = {"real", "synthetic", "augment", "accelerated", "heldout"};

struct RegionRow {
  std::string id;
  Metadata metadata;
  std::string cohort;
  std::vector<double> volumes;

  friend bool operator==(const RegionRow&, const RegionRow&) = default;
};

struct RegionTable {
  std::vector<RegionRow> rows;

  std::size_t regions() const { return rows.empty() ? 0 : rows.front().volumes.size(); }
  /// Throws EvalError on ragged rows, non-finite values, unknown cohorts or
  /// duplicate (cohort, id) pairs.
  void validate() const;

  /// Header `id,age,sex,cohort,vol_1..vol_K`; age in years.
  void write_csv(std::ostream& os) const;
  static RegionTable read_csv(std::istream& is);

  std::vector<double> column(std::size_t region) const;
  std::vector<double> ages() const;

  friend bool operator==(const RegionTable&, const RegionTable&) = default;
};

/// Measures every volume with the phantom templates.
RegionTable measure_table(std::span<const Volume> volumes, std::span<const Metadata> metadata, const PhantomSpec& spec,
                          double threshold, const std::string& cohort, const std::string& id_prefix);

struct RegionEffect {
  double d_real_vs_synth = 0.0;
  EffectClass effect = EffectClass::small;
  double d_sex_real = 0.0;  // sex=1 minus sex=0
  double d_sex_synth = 0.0;
  TestResult age_real;  // Pearson r of volume against age
  TestResult age_synth;
  double delta_d = 0.0;
  double delta_r = 0.0;
  double complexity = 0.0;
  int age_sign = 0;  // sign of the phantom's age coefficients
  bool sign_agrees = true;
};

struct EffectReport {
  std::vector<RegionEffect> regions;
  TestResult sex_effect_correlation;  // across regions, real vs synthetic
  TestResult age_effect_correlation;
  TestResult complexity_correlation;  // |d_real_vs_synth| vs complexity
  std::size_t small_or_small_to_medium = 0;
  bool age_signs_agree = true;

  void write_csv(std::ostream& os) const;
  void write_summary_csv(std::ostream& os) const;
};

/// Statistics are computed over rows sorted by (cohort, id), so the result
/// does not depend on input order. Correlations that are undefined (constant
/// input) are reported as NaN.
EffectReport plausibility_report(const RegionTable& real, const RegionTable& synth, const PhantomSpec& spec);

struct RidgeModel {
  std::vector<double> feature_mean;
  std::vector<double> beta;
  double intercept = 0.0;

  double predict(std::span<const double> x) const;
};

/// Minimizes mean squared error + lambda * |beta|^2 on features centered by
/// the training means; the intercept is not penalized.
RidgeModel fit_ridge(const std::vector<std::vector<double>>& x, std::span<const double> y, double lambda);

struct AugmentationOptions {
  std::size_t folds = 2;
  std::vector<std::size_t> pool_sizes{0, 50, 200, 500};
  double lambda = 1.0;
};

struct PoolResult {
  std::size_t size = 0;
  double mae = 0.0;
  double r2 = 0.0;
  std::vector<double> abs_errors;  // per real subject, from the fold that held it out
  std::vector<double> gap_accelerated;  // per subject, averaged over fold models
  std::vector<double> gap_heldout;
  TestResult accelerated_test;
  TestResult heldout_test;
};

struct AugmentationResult {
  std::vector<PoolResult> pools;
  /// Spearman correlation of pool size with per-subject absolute error,
  /// each subject's errors centered on their mean across pool sizes.
  TestResult trend;
};

/// Cross-validated ridge age prediction on `real`. Fold k holds out rows
/// i with i % folds == k. Each training fold is augmented with the first S
/// rows of `pool`.
AugmentationResult augmentation_experiment(const RegionTable& real, const RegionTable& pool,
                                           const RegionTable& accelerated, const RegionTable& heldout,
                                           const AugmentationOptions& opt);

void write_augmentation_csv(std::ostream& os, const AugmentationResult& r);
void write_gap_csv(std::ostream& os, const PoolResult& pool, const RegionTable& accelerated,
                   const RegionTable& heldout);

}  // namespace voxsynth
