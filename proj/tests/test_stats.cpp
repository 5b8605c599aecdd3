#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mmou/errors.hpp"
#include "mmou/random.hpp"
#include "mmou/stats.hpp"

using namespace mmou;

TEST_CASE("compensated summation") {
  stats::CompensatedSum s;
  s.add(1e16);
  s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1.0);
}

TEST_CASE("summary of a small sample") {
  const std::vector<double> x{1, 2, 3, 4};
  const auto s = stats::summarize(x);
  CHECK(s.mean == 2.5);
  CHECK(s.variance == doctest::Approx(5.0 / 3.0));
  CHECK(s.se_mean == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(stats::raw_moment(x, 2).value == doctest::Approx(7.5));
  CHECK_THROWS_AS(stats::summarize(std::vector<double>{1.0}), DomainError);
}

TEST_CASE("correlation and product mean") {
  std::vector<double> x(5000), y(5000), z(5000);
  Stream rng(1, 0, Lane::crude);
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = rng.normal();
    z[k] = rng.normal();
    y[k] = 0.6 * x[k] + 0.8 * z[k];
  }
  CHECK(stats::correlation(x, x).value == doctest::Approx(1.0));
  const auto r = stats::correlation(x, y);
  CHECK(std::abs(r.value - 0.6) < 4.0 * r.se);
  const auto pm = stats::product_mean(x, y);
  CHECK(std::abs(pm.value - 0.6) < 4.0 * pm.se);
}

TEST_CASE("Kolmogorov distribution tail") {
  CHECK(stats::kolmogorov_survival(0.0) == 1.0);
  CHECK(std::abs(stats::kolmogorov_survival(1.0) - 0.26999967167735456) < 1e-12);
  CHECK(std::abs(stats::kolmogorov_survival(1.3580986393225507) - 0.05) < 1e-9);
  CHECK(stats::kolmogorov_survival(5.0) < 1e-20);
}

TEST_CASE("KS statistic on exact quantiles") {
  constexpr int n = 400;
  boost::math::normal_distribution<> law(1.0, 2.0);
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = quantile(law, (i + 0.5) / n);
  const auto ks = stats::ks_normal(x, 1.0, 4.0);
  CHECK(std::abs(ks.statistic - 0.5 / n) < 1e-12);
  CHECK(ks.p_value > 0.999);
  const auto shifted = stats::ks_normal(x, 3.0, 4.0);
  CHECK(shifted.statistic > 0.3);
  CHECK(shifted.p_value < 1e-10);
  CHECK(std::abs(stats::normal_cdf(1.0, 1.0, 4.0) - 0.5) < 1e-16);
}
