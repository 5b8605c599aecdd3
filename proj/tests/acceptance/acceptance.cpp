// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mmou/chain.hpp"
#include "mmou/errors.hpp"
#include "mmou/moments.hpp"
#include "mmou/scaling.hpp"
#include "mmou/stats.hpp"
#include "mmou/transform.hpp"

using namespace mmou;

namespace {

// pinned tolerances
constexpr double kAlgebraTol = 1e-10;
constexpr double kStationaryTol = 1e-10;
constexpr double kTimeIntegralTol = 1e-6;
constexpr double kEngineTol = 1e-10;
constexpr double kSeMultiple = 3.0;
constexpr double kResidualSeMultiple = 5.0;
constexpr double kResidualCoverage = 0.95;
constexpr double kRatioLo = 3.0;
constexpr double kRatioHi = 5.0;
constexpr double kNndFloor = -1e-10;
constexpr double kPdRelative = 0.10;
constexpr double kExponentTol = 0.15;
constexpr double kKsLevel = 0.01;
constexpr int kThreads = 4;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

GeneratorMatrix model_a_chain() {
  Matrix q(2, 2);
  q << -1, 1, 2, -2;
  return GeneratorMatrix(q);
}

MmouSpec model_a() {
  return MmouSpec::stationary_start(model_a_chain(), vec({1, 3}), vec({1, 1}), vec({0.5, 2}));
}

Matrix random_rates(int d, std::uint64_t seed) {
  Stream rng(seed, static_cast<std::uint64_t>(d), Lane::crude);
  Matrix q = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == j) continue;
      if (j == (i + 1) % d) {
        q(i, j) = 0.2 + 2.8 * rng.uniform();
      } else if (rng.uniform() < 0.6) {
        q(i, j) = 3.0 * rng.uniform();
      }
    }
    q(i, i) = -q.row(i).sum();
  }
  return q;
}

std::vector<GeneratorMatrix> generator_sweep() {
  std::vector<GeneratorMatrix> out;
  for (int k = 0; k < 20; ++k) out.emplace_back(random_rates(2 + k % 5, 1000 + k));
  return out;
}

std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  return out;
}

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  std::vector<double> out(m.rows());
  for (Eigen::Index k = 0; k < m.rows(); ++k) out[k] = m(k, c);
  return out;
}

// sample covariance with the standard error of the mean of centred products
stats::Estimate sample_covariance(const std::vector<double>& x, const std::vector<double>& y) {
  const auto sx = stats::summarize(x);
  const auto sy = stats::summarize(y);
  std::vector<double> z(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) z[k] = (x[k] - sx.mean) * (y[k] - sy.mean);
  const auto sz = stats::summarize(z);
  return {sz.mean, sz.se_mean};
}

Outcome generator_algebra() {
  Outcome o;
  double worst = 0.0;
  for (const GeneratorMatrix& g : generator_sweep()) {
    const DeviationSet ds = deviation_set(g);
    const int d = g.states();
    const Matrix& q = g.rates();
    const Matrix target = ds.ergodic - Matrix::Identity(d, d);
    const double errs[] = {
        (q * ds.fundamental - target).cwiseAbs().maxCoeff(),
        (ds.fundamental * q - target).cwiseAbs().maxCoeff(),
        (ds.ergodic * ds.deviation).cwiseAbs().maxCoeff(),
        (ds.deviation * ds.ergodic).cwiseAbs().maxCoeff(),
        (ds.deviation * Vector::Ones(d)).cwiseAbs().maxCoeff(),
        (ds.pi.transpose() * ds.deviation).cwiseAbs().maxCoeff(),
    };
    for (double e : errs) worst = std::max(worst, e);
  }
  o.detail << "max identity error " << worst << " over 20 generators";
  o.require(worst <= kAlgebraTol, "identity error above 1e-10");
  return o;
}

Outcome exact_sampler() {
  Outcome o;
  const MmouSpec spec = model_a();
  const std::vector<double> times{0.25, 1.0, 4.0};
  const MomentTable table = transient_second_moment(spec, times);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const auto draws = simulate_terminal(spec, times[i], 100000, 20261016 + i, kThreads);
    const auto s = stats::summarize(draws.values);
    const double zm = (s.mean - table.mean(i)) / s.se_mean;
    const double zv = (s.variance - table.variance(i)) / s.se_variance;
    o.detail << "t=" << times[i] << " z_mean=" << zm << " z_var=" << zv << "; ";
    o.require(std::abs(zm) <= kSeMultiple, "mean outside 3 SE");
    o.require(std::abs(zv) <= kSeMultiple, "variance outside 3 SE");
  }
  return o;
}

Outcome stationary_closed_form() {
  Outcome o;
  const MmouSpec spec = model_a();
  const StationaryMoments st = stationary_moments(spec, 2);
  const DeviationSet ds = deviation_set(spec.chain);
  const Matrix d1 = resolvent_deviation(spec.chain, 1.0);
  const double from_deviation = ds.pi.dot(spec.sigma2) / 2.0 +
                                spec.alpha.dot(ds.pi.asDiagonal() * d1 * spec.alpha);
  const double integral = equal_gamma_closed_form(spec, std::vector<double>{40.0})[0].variance;
  o.detail << "mu_inf-5/3=" << st.mu_inf - 5.0 / 3.0 << " v_inf-13/18=" << st.v_inf - 13.0 / 18.0
           << " resolvent form diff=" << from_deviation - st.v_inf
           << " time integral diff=" << integral - st.v_inf;
  o.require(std::abs(st.mu_inf - 5.0 / 3.0) <= kStationaryTol, "mu_inf");
  o.require(std::abs(st.v_inf - 13.0 / 18.0) <= kStationaryTol, "v_inf");
  o.require(std::abs(from_deviation - 13.0 / 18.0) <= kStationaryTol, "resolvent form");
  o.require(std::abs(integral - st.v_inf) <= kTimeIntegralTol, "time integral at t=40");
  return o;
}

Outcome moment_recursion() {
  Outcome o;
  const MmouSpec spec = model_a();
  const std::vector<double> t{1.0};
  const MomentTable high = higher_moments_transient(spec, 4, t);
  const MomentTable first = transient_first_moment(spec, t);
  const MomentTable second = transient_second_moment(spec, t);
  const double e1 = (high.nu(0) - first.nu(0)).cwiseAbs().maxCoeff();
  const double e2 = (high.w(0) - second.w(0)).cwiseAbs().maxCoeff();
  o.detail << "engine diffs " << e1 << ", " << e2 << "; ";
  o.require(e1 <= kEngineTol && e2 <= kEngineTol, "orders 1-2 vs dedicated engines");
  const auto draws = simulate_terminal(spec, 1.0, 1000000, 4040, kThreads);
  for (int k = 1; k <= 4; ++k) {
    const auto m = stats::raw_moment(draws.values, k);
    const double z = (m.value - high.aggregate[0][k]) / m.se;
    o.detail << "z_" << k << "=" << z << " ";
    o.require(std::abs(z) <= kSeMultiple, "order " + std::to_string(k) + " outside 3 SE");
  }
  return o;
}

Outcome covariance() {
  Outcome o;
  const MmouSpec spec = model_a();
  const double v1 = transient_second_moment(spec, std::vector<double>{1.0}).variance(0);
  const double c0 = covariance_lag(spec, 1.0, 0.0);
  const double c = covariance_lag(spec, 1.0, 0.5);
  const std::vector<double> times{1.0, 1.5};
  const auto paths = simulate_paths(spec, times, 200000, 5050, kThreads);
  const auto est = sample_covariance(column(paths.values, 0), column(paths.values, 1));
  const double z = (est.value - c) / est.se;
  o.detail << "c(1,0)-v1=" << c0 - v1 << " c(1,0.5)=" << c << " mc=" << est.value << " z=" << z;
  o.require(std::abs(c0 - v1) <= kEngineTol, "lag zero");
  o.require(std::abs(z) <= kSeMultiple, "lag 0.5 outside 3 SE");
  return o;
}

Outcome nonneg_definite() {
  Outcome o;
  double lowest = std::numeric_limits<double>::infinity();
  for (const GeneratorMatrix& g : generator_sweep()) lowest = std::min(lowest, nonneg_definite_check(g));
  o.detail << "min eigenvalue " << lowest;
  o.require(lowest >= kNndFloor, "negative eigenvalue");
  return o;
}

Outcome transform_pde() {
  Outcome o;
  Matrix q1(1, 1);
  q1 << 0.0;
  const MmouSpec ou(GeneratorMatrix(q1), vec({1.5}), vec({0.8}), vec({0.6}), InitialLaw{0.4, 0.0},
                    vec({1.0}));
  const double r_ou =
      halving_ratio(pde_residual(ou_transform_surface(ou, grid(-1, 2, 13), grid(0.5, 2, 13)), ou),
                    pde_residual(ou_transform_surface(ou, grid(-1, 2, 25), grid(0.5, 2, 25)), ou));

  AbsorbingParams p;
  p.q2 = 1.3;
  p.alpha = vec({0.5, 2.0});
  p.gamma = vec({0.7, 1.4});
  p.sigma2 = vec({0.4, 0.9});
  p.m0 = 0.3;
  const MmouSpec as = p.spec();
  const double r_abs = halving_ratio(
      pde_residual(absorbing_transform_surface(p, grid(-1, 2, 11), grid(0.2, 2, 11)), as),
      pde_residual(absorbing_transform_surface(p, grid(-1, 2, 21), grid(0.2, 2, 21)), as));

  const MmouSpec spec = model_a();
  const TransformSurface mc =
      estimate_transform(spec, grid(-0.5, 1.0, 7), grid(0.4, 1.6, 7), 100000, 7070, kThreads);
  const ResidualGrid r = pde_residual(mc, spec);
  int inside = 0, total = 0;
  for (std::size_t a = 0; a < r.residual.size(); ++a) {
    for (std::size_t b = 0; b < r.residual[a].size(); ++b) {
      for (Eigen::Index i = 0; i < r.residual[a][b].size(); ++i) {
        ++total;
        inside += std::abs(r.residual[a][b](i)) <= kResidualSeMultiple * r.se[a][b](i);
      }
    }
  }
  const double coverage = static_cast<double>(inside) / total;
  o.detail << "halving ratio d=1 " << r_ou << ", absorbing " << r_abs << "; MC coverage "
           << inside << "/" << total;
  o.require(r_ou >= kRatioLo && r_ou <= kRatioHi, "d=1 ratio");
  o.require(r_abs >= kRatioLo && r_abs <= kRatioHi, "absorbing ratio");
  o.require(coverage >= kResidualCoverage, "MC residual coverage");
  return o;
}

Outcome moment_transform_link() {
  Outcome o;
  const MmouSpec spec = model_a();
  const double delta = 0.05;
  const auto d = transform_derivatives_at_zero(spec, 1.0, delta, 100000, 8080, kThreads);
  const MomentTable h = higher_moments_transient(spec, 4, std::vector<double>{1.0});
  for (int i = 0; i < 2; ++i) {
    const double trunc1 = delta * delta * std::abs(h.per_state[0][3](i)) / 6.0;
    const double trunc2 = delta * delta * std::abs(h.per_state[0][4](i)) / 12.0;
    const double e1 = std::abs(-d.first(i) - h.nu(0)(i));
    const double e2 = std::abs(d.second(i) - h.w(0)(i));
    o.detail << "state " << i + 1 << ": |dg+nu|=" << e1 << " (bound "
             << kSeMultiple * d.first_se(i) + trunc1 << "), |d2g-w|=" << e2 << " (bound "
             << kSeMultiple * d.second_se(i) + trunc2 << "); ";
    o.require(e1 <= kSeMultiple * d.first_se(i) + trunc1, "first derivative");
    o.require(e2 <= kSeMultiple * d.second_se(i) + trunc2, "second derivative");
  }
  return o;
}

Outcome scaling_dichotomy() {
  Outcome o;
  const MmouSpec base = model_a();
  const std::vector<double> ns{16.0, 64.0, 256.0};
  for (double h : {0.5, 1.5}) {
    std::vector<double> lx, ly;
    double var256 = 0.0, se256 = 0.0;
    for (double n : ns) {
      const auto draws = simulate_terminal(scale_spec(base, n, h), 1.0, 100000,
                                           9090 + static_cast<std::uint64_t>(n), kThreads);
      const auto s = stats::summarize(draws.values);
      lx.push_back(std::log(n));
      ly.push_back(std::log(s.variance));
      var256 = s.variance;
      se256 = s.se_variance;
    }
    const double mx = (lx[0] + lx[1] + lx[2]) / 3.0;
    const double my = (ly[0] + ly[1] + ly[2]) / 3.0;
    double sxy = 0.0, sxx = 0.0;
    for (int k = 0; k < 3; ++k) {
      sxy += (lx[k] - mx) * (ly[k] - my);
      sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    const double slope = sxy / sxx;
    const double target = h < 1.0 ? h : 2.0 * h - 1.0;
    const double pd = pd_asymptotic_variance(base, 256.0, h, 1.0);
    o.detail << "h=" << h << ": var(256)=" << var256 << " pd=" << pd << " slope=" << slope << "; ";
    o.require(std::abs(var256 - pd) <= kPdRelative * pd + kSeMultiple * se256,
              "variance vs asymptotic formula at h=" + std::to_string(h));
    o.require(std::abs(slope - target) <= kExponentTol, "exponent at h=" + std::to_string(h));
  }
  return o;
}

Outcome clt() {
  Outcome o;
  for (double h : {0.0, 0.5, 1.0, 1.5}) {
    const ScalingConfig cfg{model_a(), 256.0, h, 1.0, 10000, 20261016, kThreads};
    const ScalingReport r = run_clt_experiment(cfg);
    o.detail << "h=" << h << ": D=" << r.ks_statistic << " p=" << r.ks_p << "; ";
    o.require(r.ks_p > kKsLevel, "KS at h=" + std::to_string(h));
    if (h == 0.0) o.require(r.uncentered_ks_p > kKsLevel, "uncentered KS at h=0");
  }
  return o;
}

Outcome multi_ou() {
  Outcome o;
  const GeneratorMatrix chain = model_a_chain();
  const Vector pi = stationary_distribution(chain);
  std::vector<MultiOuSpec::Coordinate> quiet{{vec({1, 3}), vec({1, 1}), vec({0, 0}), {}},
                                             {vec({2, -1}), vec({2, 2}), vec({0, 0}), {}}};
  const TwoStateExample ex = two_state_example(1.0, 2.0, quiet);
  const MultiOuSpec quiet_spec(chain, quiet, pi);
  const auto draws = simulate_multi_terminal(quiet_spec, 40.0, 100000, 1111, kThreads);
  const auto r = stats::correlation(column(draws.values, 0), column(draws.values, 1));
  const double zc = (r.value - ex.correlation) / r.se;
  o.detail << "corr closed=" << ex.correlation << " mc=" << r.value << " z=" << zc << "; ";
  o.require(std::abs(ex.correlation) < 1.0, "|corr| < 1");
  o.require(std::abs(zc) <= kSeMultiple, "correlation outside 3 SE");

  std::vector<MultiOuSpec::Coordinate> noisy{{vec({1, 3}), vec({1, 1}), vec({0.5, 2}), {}},
                                             {vec({2, -1}), vec({0.5, 2}), vec({0.3, 0.1}), {}}};
  const MultiOuSpec spec(chain, noisy, pi);
  const double exact = multi_stationary_mixed_moments(spec, std::vector<int>{1, 1}).sum();
  const auto mc = simulate_multi_terminal(spec, 40.0, 100000, 2222, kThreads);
  const auto pm = stats::product_mean(column(mc.values, 0), column(mc.values, 1));
  const double zm = (pm.value - exact) / pm.se;
  o.detail << "E M1 M2 recursion=" << exact << " mc=" << pm.value << " z=" << zm;
  o.require(std::abs(zm) <= kSeMultiple, "cross moment outside 3 SE");
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  namespace fs = std::filesystem;
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "mmou_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "config.json";
  std::ofstream(cfg) << R"({
  "command": "validate",
  "seed": 20261016,
  "model": {"generator": [[-1, 1], [2, -2]], "alpha": [1, 3], "gamma": [1, 1], "sigma2": [0.5, 2]},
  "multi_model": {
    "generator": [[-1, 1], [2, -2]],
    "coords": [{"alpha": [1, 3], "gamma": [1, 1], "sigma2": [0.5, 2]},
               {"alpha": [2, -1], "gamma": [2, 2], "sigma2": [0.3, 0.1]}]
  },
  "times": [0.5, 1],
  "lags": [0, 0.5],
  "theta_grid": [-0.5, -0.25, 0, 0.25, 0.5, 0.75],
  "n_paths": 2000,
  "scaling": {"N": [4, 16], "h": [0, 1.5], "t_eval": 1, "n_paths": 1000}
})";
  int compared = 0;
  for (const char* command :
       {"validate", "simulate", "moments", "covariance", "transform", "scaling", "multi"}) {
    std::vector<fs::path> dirs;
    for (const char* threads : {"1", "4", "1", "4"}) {
      const fs::path out = root / (std::string(command) + "_" + threads + "_" + std::to_string(dirs.size()));
      const std::string cmd = std::string("\"") + MMOU_CLI_PATH + "\" " + command + " --config \"" +
                              cfg.string() + "\" --threads " + threads + " --out \"" + out.string() +
                              "\" >/dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) o.require(false, std::string(command) + " exited nonzero");
      dirs.push_back(out);
    }
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      if (entry.path().extension() != ".csv") continue;
      const std::string ref = slurp(entry.path());
      for (std::size_t k = 1; k < dirs.size(); ++k) {
        o.require(!ref.empty() && slurp(dirs[k] / entry.path().filename()) == ref,
                  std::string(command) + "/" + entry.path().filename().string() + " differs");
      }
      ++compared;
    }
  }
  o.detail << compared << " CSV files compared across 4 runs each";
  o.require(compared >= 7, "too few CSV outputs");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "generator algebra", generator_algebra},
      {2, "exact sampler vs transient moments", exact_sampler},
      {3, "stationary closed form", stationary_closed_form},
      {4, "moment recursion cross-check", moment_recursion},
      {5, "lagged covariance", covariance},
      {6, "deviation form nonnegative", nonneg_definite},
      {7, "transform PDE residual", transform_pde},
      {8, "moment-transform link", moment_transform_link},
      {9, "scaling dichotomy", scaling_dichotomy},
      {10, "CLT limit laws", clt},
      {11, "multi-OU correlation and cross moment", multi_ou},
      {12, "CLI determinism", determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
