#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxsynth {

class StatsError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> x);

double cohens_d(std::span<const double> a, std::span<const double> b);

enum class EffectClass { small, small_to_medium, medium_to_large };
EffectClass classify_effect(double d);
std::string to_string(EffectClass c);

struct TestResult {
  double statistic = 0.0;
  double p = 1.0;
};

/// Pearson r with a two-tailed p from Student's t on n - 2 degrees of freedom.
TestResult pearson_r(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of average ranks.
TestResult spearman_rho(std::span<const double> x, std::span<const double> y);

TestResult fisher_z_compare(double r1, std::size_t n1, double r2, std::size_t n2);

TestResult t_test_one_sample(std::span<const double> x, double mu0);
/// Welch's unequal-variance test.
TestResult t_test_welch(std::span<const double> a, std::span<const double> b);
/// Student's pooled-variance test.
TestResult t_test_pooled(std::span<const double> a, std::span<const double> b);

TestResult anova_oneway(const std::vector<std::vector<double>>& groups);

}  // namespace voxsynth
