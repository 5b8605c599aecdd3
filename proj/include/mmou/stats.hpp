#pragma once

#include <cstddef>
#include <span>

namespace mmou::stats {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;      ///< unbiased
  double fourth_central = 0.0;
  double se_mean = 0.0;
  /// sqrt((m4 - s^4) / n), the large-sample standard error of the variance.
  double se_variance = 0.0;
};

/// Two-pass summary with compensated sums; needs at least two values.
Summary summarize(std::span<const double> x);

/// Raw moment (1/n) sum x^k with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};
Estimate raw_moment(std::span<const double> x, int k);

/// Pearson correlation; the standard error comes from `batches` equal batch
/// correlations.
Estimate correlation(std::span<const double> x, std::span<const double> y, std::size_t batches = 100);

/// Mean of x * y with its standard error.
Estimate product_mean(std::span<const double> x, std::span<const double> y);

double normal_cdf(double x, double mean, double variance);

/// P(K > lambda) for the Kolmogorov distribution.
double kolmogorov_survival(double lambda);

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

/// One-sample two-sided KS test of x against Normal(mean, variance), with the
/// asymptotic p-value at lambda = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) D.
KsResult ks_normal(std::span<const double> x, double mean, double variance);

}  // namespace mmou::stats
