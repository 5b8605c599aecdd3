#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mmou/chain.hpp"
#include "mmou/errors.hpp"
#include "mmou/moments.hpp"
#include "mmou/scaling.hpp"
#include "test_support.hpp"

using namespace mmou;
using mmou::testing::model_a;
using mmou::testing::model_a_from;
using mmou::testing::vec;

TEST_CASE("scaled spec") {
  const MmouSpec base = model_a();
  const MmouSpec s = scale_spec(base, 64.0, 1.5);
  CHECK(s.chain.rates()(0, 1) == 64.0);
  CHECK(s.alpha(1) == doctest::Approx(3.0 * 512.0));
  CHECK(s.sigma2(0) == doctest::Approx(0.5 * 512.0));
  CHECK(s.gamma == base.gamma);
  const MmouSpec same = scale_spec(base, 1.0, 0.7);
  CHECK(same.alpha == base.alpha);
  CHECK_THROWS_AS(scale_spec(base, 0.5, 1.0), DomainError);
  CHECK_THROWS_AS(scale_spec(base, 4.0, -1.0), DomainError);
}

TEST_CASE("beta and rho") {
  CHECK(scaling_beta(0.0) == 0.0);
  CHECK(scaling_beta(0.5) == 0.25);
  CHECK(scaling_beta(1.0) == 0.5);
  CHECK(scaling_beta(1.5) == 1.0);
  const MmouSpec shifted = model_a_from(vec({2.0 / 3, 1.0 / 3}), vec({1, 1}), 2.0);
  const double e = std::exp(-1.0);
  CHECK(rho_profile(shifted, 0.0, 1.0) == doctest::Approx(2.0 * e + 5.0 / 3.0 * (1 - e)));
  CHECK(rho_profile(shifted, 1.0, 1.0) == doctest::Approx(5.0 / 3.0 * (1 - e)));
  CHECK(rho_profile(shifted, 0.0, 0.0) == 2.0);
}

TEST_CASE("V profile of model A") {
  const MmouSpec base = model_a();
  for (double t : {0.0, 0.5, 1.0, 3.0}) {
    const VProfile v = v_profile(base, 1.5, t);
    CHECK(std::abs(v.derivative - 16.0 / 27.0) < 1e-13);
    CHECK(std::abs(v.value - 16.0 / 27.0 * t) < 1e-12);
  }
  // unequal gamma: V is the integral of V'
  const MmouSpec uneq = model_a_from(vec({2.0 / 3, 1.0 / 3}), vec({0.5, 2.0}));
  const double integral =
      linalg::quad([&](double s) { return v_profile(uneq, 1.0, s).derivative; }, 0.0, 1.2, 1e-13);
  CHECK(std::abs(v_profile(uneq, 1.0, 1.2).value - integral) < 1e-10);
  CHECK(v_profile(uneq, 1.0, 0.7).derivative >= 0.0);

  // alpha proportional to gamma leaves no chain noise
  const MmouSpec flat = MmouSpec::stationary_start(base.chain, vec({2.0, 2.0}), vec({1, 1}),
                                                   vec({0.5, 2.0}));
  CHECK(std::abs(v_profile(flat, 1.5, 1.0).value) < 1e-15);
}

TEST_CASE("limit variance regimes") {
  const MmouSpec base = model_a();
  const double t = 1.0;
  const double kernel = (1 - std::exp(-2.0 * t)) / 2.0;
  CHECK(std::abs(limit_variance(base, 0.5, t) - kernel * 1.0) < 1e-12);
  CHECK(std::abs(limit_variance(base, 1.5, t) - kernel * 16.0 / 27.0) < 1e-12);
  CHECK(std::abs(limit_variance(base, 1.0, t) - kernel * (1.0 + 16.0 / 27.0)) < 1e-12);
  const MmouSpec spread = MmouSpec::stationary_start(base.chain, base.alpha, base.gamma,
                                                     base.sigma2, InitialLaw{0.0, 0.4});
  CHECK(std::abs(limit_variance(spread, 0.0, t) - limit_variance(base, 0.0, t) -
                 0.16 * std::exp(-2.0 * t)) < 1e-12);
}

TEST_CASE("asymptotic variance formula") {
  const MmouSpec base = model_a();
  const double kernel = (1 - std::exp(-2.0)) / 2.0;
  CHECK(std::abs(pd_asymptotic_variance(base, 1.0, 0.0, 1.0) - kernel * (1.0 + 16.0 / 27.0)) < 1e-12);
  CHECK(std::abs(pd_asymptotic_variance(base, 64.0, 0.5, 1.0) -
                 kernel * (8.0 + 16.0 / 27.0)) < 1e-11);
  // the deviation term is 8/27 for this chain
  const DeviationSet ds = deviation_set(base.chain);
  const Matrix dp = ds.pi.asDiagonal();
  CHECK(std::abs(base.alpha.dot(dp * ds.deviation * base.alpha) - 8.0 / 27.0) < 1e-14);
  CHECK_THROWS_AS(pd_asymptotic_variance(model_a_from(vec({1, 0}), vec({1, 1})), 4.0, 1.0, 1.0),
                  ApplicabilityError);
  CHECK_THROWS_AS(
      pd_asymptotic_variance(model_a_from(vec({2.0 / 3, 1.0 / 3}), vec({1, 2})), 4.0, 1.0, 1.0),
      ApplicabilityError);
}

TEST_CASE("exact variance grows like N^{2 beta}") {
  const MmouSpec base = model_a();
  const std::vector<double> t{1.0};
  for (double h : {0.5, 1.0, 1.5}) {
    for (double n : {16.0, 64.0, 256.0, 1024.0}) {
      const double var = transient_second_moment(scale_spec(base, n, h), t).variance(0);
      const double normalized = var / std::pow(n, 2.0 * scaling_beta(h));
      CHECK(normalized > limit_variance(base, h, 1.0) / 3.0);
      CHECK(normalized < 3.0 * limit_variance(base, h, 1.0));
    }
    const double far = transient_second_moment(scale_spec(base, 1e5, h), t).variance(0) /
                       std::pow(1e5, 2.0 * scaling_beta(h));
    CHECK(std::abs(far / limit_variance(base, h, 1.0) - 1.0) < 0.01);
  }
}

TEST_CASE("CLT experiment") {
  ScalingConfig cfg{model_a(), 256.0, 0.5, 1.0, 4000, 20261016, 2};
  const ScalingReport r = run_clt_experiment(cfg);
  CHECK(r.samples.size() == 4000);
  CHECK(r.beta == 0.25);
  CHECK(r.ks_p > 0.001);
  CHECK(std::isnan(r.uncentered_ks_p));
  CHECK(r.predicted_pd_variance == doctest::Approx(pd_asymptotic_variance(model_a(), 256.0, 0.5, 1.0)));

  ScalingConfig zero{model_a(), 4.0, 0.0, 1.0, 2000, 3, 1};
  const ScalingReport z = run_clt_experiment(zero);
  CHECK(z.uncentered_ks_statistic == doctest::Approx(z.ks_statistic));

  cfg.n_paths = 500;
  CHECK_THROWS_AS(run_clt_experiment(cfg), ApplicabilityError);
}

TEST_CASE("KS distance shrinks with N") {
  const auto median_ks = [](double n) {
    std::vector<double> ks;
    for (std::uint64_t seed = 1; seed <= 9; ++seed) {
      ScalingConfig cfg{model_a(), n, 1.5, 1.0, 2000, 500 + seed, 2};
      ks.push_back(run_clt_experiment(cfg).ks_statistic);
    }
    std::nth_element(ks.begin(), ks.begin() + 4, ks.end());
    return ks[4];
  };
  CHECK(median_ks(256.0) < median_ks(4.0));
}
