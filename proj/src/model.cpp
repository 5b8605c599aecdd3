#include "mmou/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmou/errors.hpp"
#include "mmou/parallel.hpp"

namespace mmou {

namespace {

void validate_coordinate(const Vector& alpha, const Vector& gamma, const Vector& sigma2,
                         const InitialLaw& initial, int d, const std::string& prefix) {
  auto check_size = [&](const Vector& v, const char* name) {
    if (v.size() != d) {
      throw DimensionError(prefix + name + ": expected " + std::to_string(d) + " entries, got " +
                           std::to_string(v.size()));
    }
  };
  check_size(alpha, "alpha");
  check_size(gamma, "gamma");
  check_size(sigma2, "sigma2");
  for (int i = 0; i < d; ++i) {
    const std::string idx = "[" + std::to_string(i + 1) + "]";
    if (!std::isfinite(alpha(i))) throw SpecError(prefix + "alpha" + idx + " must be finite");
    if (!(gamma(i) > 0.0) || !std::isfinite(gamma(i))) {
      throw SpecError(prefix + "gamma" + idx + " must be positive");
    }
    if (!(sigma2(i) >= 0.0) || !std::isfinite(sigma2(i))) {
      throw SpecError(prefix + "sigma2" + idx + " must be nonnegative");
    }
  }
  if (!std::isfinite(initial.mean)) throw SpecError(prefix + "m0 must be finite");
  if (!(initial.sd >= 0.0) || !std::isfinite(initial.sd)) {
    throw SpecError(prefix + "m0 standard deviation must be nonnegative");
  }
}

ConditionalGaussian initial_conditional(const InitialLaw& law) {
  return {law.mean, law.sd * law.sd};
}

void check_path_for(const CtmcPath& path, int states, double t) {
  validate_path(path, states);
  if (!(t >= 0.0) || t > path.horizon) {
    throw DomainError("time " + std::to_string(t) + " outside path horizon [0, " +
                      std::to_string(path.horizon) + "]");
  }
}

}  // namespace

double InitialLaw::moment(int k) const {
  // E (m + s Z)^k = sum_j C(k, j) m^{k-j} s^j E Z^j, E Z^j = (j-1)!! for even j.
  double total = 0.0;
  double binom = 1.0;
  double double_fact = 1.0;
  for (int j = 0; j <= k; ++j) {
    if (j > 0) binom = binom * (k - j + 1) / j;
    if (j % 2 == 0) {
      if (j >= 2) double_fact *= (j - 1);
      total += binom * std::pow(mean, k - j) * std::pow(sd, j) * double_fact;
    }
  }
  return total;
}

MmouSpec::MmouSpec(GeneratorMatrix chain_in, Vector alpha_in, Vector gamma_in, Vector sigma2_in,
                   InitialLaw initial_in, Vector p0_in)
    : chain(std::move(chain_in)),
      alpha(std::move(alpha_in)),
      gamma(std::move(gamma_in)),
      sigma2(std::move(sigma2_in)),
      initial(initial_in),
      p0(std::move(p0_in)) {
  validate_coordinate(alpha, gamma, sigma2, initial, chain.states(), "");
  validate_probability(p0, chain.states(), "p0");
}

MmouSpec MmouSpec::stationary_start(GeneratorMatrix chain, Vector alpha, Vector gamma,
                                    Vector sigma2, InitialLaw initial) {
  Vector pi = stationary_distribution(chain);
  return MmouSpec(std::move(chain), std::move(alpha), std::move(gamma), std::move(sigma2), initial,
                  std::move(pi));
}

bool MmouSpec::equal_gamma(double rel_tol) const {
  const double lo = gamma.minCoeff();
  const double hi = gamma.maxCoeff();
  return hi - lo <= rel_tol * hi;
}

MultiOuSpec::MultiOuSpec(GeneratorMatrix chain_in, std::vector<Coordinate> coords_in,
                         Vector p0_in)
    : chain(std::move(chain_in)), coords(std::move(coords_in)), p0(std::move(p0_in)) {
  if (coords.empty()) throw SpecError("coords: at least one coordinate is required");
  for (std::size_t j = 0; j < coords.size(); ++j) {
    const auto& c = coords[j];
    validate_coordinate(c.alpha, c.gamma, c.sigma2, c.initial, chain.states(),
                        "coords[" + std::to_string(j + 1) + "].");
  }
  validate_probability(p0, chain.states(), "p0");
}

MmouSpec MultiOuSpec::coordinate(int j) const {
  const auto& c = coords.at(static_cast<std::size_t>(j));
  return MmouSpec(chain, c.alpha, c.gamma, c.sigma2, c.initial, p0);
}

namespace detail {

ConditionalGaussian propagate(const Vector& alpha, const Vector& gamma, const Vector& sigma2,
                              const CtmcPath& path, double from, double to,
                              ConditionalGaussian state, double* log_decay) {
  double total_rate = 0.0;
  auto advance = [&](int i, double length) {
    if (length <= 0.0) return;
    const double g = gamma(i);
    const double one_minus = -std::expm1(-g * length);       // 1 - e^{-g L}
    const double one_minus_sq = -std::expm1(-2.0 * g * length);  // 1 - e^{-2 g L}
    state.mean = state.mean * (1.0 - one_minus) + (alpha(i) / g) * one_minus;
    state.variance = state.variance * (1.0 - one_minus_sq) + (sigma2(i) / (2.0 * g)) * one_minus_sq;
    total_rate += g * length;
  };

  const auto& jumps = path.jump_times;
  auto k = static_cast<std::size_t>(std::upper_bound(jumps.begin(), jumps.end(), from) -
                                    jumps.begin());
  int current = k == 0 ? path.initial_state : path.post_jump_states[k - 1];
  double t = from;
  for (; k < jumps.size() && jumps[k] < to; ++k) {
    advance(current, jumps[k] - t);
    t = jumps[k];
    current = path.post_jump_states[k];
  }
  advance(current, to - t);
  if (log_decay != nullptr) *log_decay = total_rate;
  return state;
}

}  // namespace detail

ConditionalGaussian conditional_moments(const MmouSpec& spec, const CtmcPath& path, double t) {
  check_path_for(path, spec.states(), t);
  return detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, 0.0, t,
                           initial_conditional(spec.initial));
}

ConditionalJoint conditional_joint(const MmouSpec& spec, const CtmcPath& path, double t1,
                                   double t2) {
  if (t1 > t2) throw DomainError("conditional_joint: t1 must not exceed t2");
  check_path_for(path, spec.states(), t2);
  if (t1 < 0.0) throw DomainError("conditional_joint: t1 must be nonnegative");
  ConditionalJoint out;
  out.first = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, 0.0, t1,
                                initial_conditional(spec.initial));
  double log_decay = 0.0;
  out.second =
      detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, t1, t2, out.first, &log_decay);
  out.covariance = std::exp(-log_decay) * out.first.variance;
  return out;
}

TerminalSamples sample_terminal(const MmouSpec& spec, std::span<const CtmcPath> paths, double t,
                                std::uint64_t seed) {
  TerminalSamples out;
  out.values.resize(paths.size());
  out.states.resize(paths.size());
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const auto cond = conditional_moments(spec, paths[k], t);
    Stream gauss(seed, k, Lane::gaussian);
    out.values[k] = cond.mean + std::sqrt(cond.variance) * gauss.normal();
    out.states[k] = paths[k].state_at(t);
  }
  return out;
}

TerminalSamples simulate_terminal(const MmouSpec& spec, double t, std::size_t n,
                                  std::uint64_t seed, int threads) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("simulate_terminal: t must be >= 0");
  TerminalSamples out;
  out.values.resize(n);
  out.states.resize(n);
  const double horizon = std::max(t, 1e-300);
  parallel_chunks(n, kPathChunk, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      Stream chain_rng(seed, k, Lane::chain);
      const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
      const auto cond = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, 0.0, t,
                                          initial_conditional(spec.initial));
      Stream gauss(seed, k, Lane::gaussian);
      out.values[k] = cond.mean + std::sqrt(cond.variance) * gauss.normal();
      out.states[k] = path.state_at(t);
    }
  });
  return out;
}

PathSamples simulate_paths(const MmouSpec& spec, std::span<const double> times, std::size_t n,
                           std::uint64_t seed, int threads) {
  if (times.empty()) throw DomainError("simulate_paths: empty time grid");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0) || (i > 0 && times[i] < times[i - 1])) {
      throw DomainError("simulate_paths: times must be nonnegative and nondecreasing");
    }
  }
  PathSamples out;
  out.times.assign(times.begin(), times.end());
  const auto cols = static_cast<Eigen::Index>(times.size());
  out.values.resize(static_cast<Eigen::Index>(n), cols);
  out.states.resize(static_cast<Eigen::Index>(n), cols);
  const double horizon = std::max(times.back(), 1e-300);
  parallel_chunks(n, kPathChunk, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      Stream chain_rng(seed, k, Lane::chain);
      const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
      Stream gauss(seed, k, Lane::gaussian);
      // Exact Markov transition of M between grid times given the path.
      double value = spec.initial.mean + spec.initial.sd * gauss.normal();
      double previous = 0.0;
      const auto row = static_cast<Eigen::Index>(k);
      for (Eigen::Index c = 0; c < cols; ++c) {
        double log_decay = 0.0;
        const auto step = detail::propagate(spec.alpha, spec.gamma, spec.sigma2, path, previous,
                                            times[c], ConditionalGaussian{0.0, 0.0}, &log_decay);
        value = value * std::exp(-log_decay) + step.mean + std::sqrt(step.variance) * gauss.normal();
        out.values(row, c) = value;
        out.states(row, c) = path.state_at(times[c]);
        previous = times[c];
      }
    }
  });
  return out;
}

TerminalSamples simulate_euler(const MmouSpec& spec, double t, double dt, std::size_t n,
                               std::uint64_t seed, int threads) {
  if (!(dt > 0.0)) throw DomainError("simulate_euler: dt must be positive");
  const double gmax = spec.gamma.maxCoeff();
  if (dt >= 0.5 / gmax) {
    throw StabilityError("simulate_euler: dt=" + std::to_string(dt) +
                         " is not below 0.5/max(gamma)=" + std::to_string(0.5 / gmax));
  }
  if (!(t >= 0.0)) throw DomainError("simulate_euler: t must be nonnegative");
  TerminalSamples out;
  out.values.resize(n);
  out.states.resize(n);
  const double horizon = std::max(t, 1e-300);
  parallel_chunks(n, kPathChunk, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      Stream chain_rng(seed, k, Lane::chain);
      const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
      Stream init(seed, k, Lane::initial);
      Stream noise(seed, k, Lane::euler);
      double m = spec.initial.mean + spec.initial.sd * init.normal();
      path.for_each_segment(t, [&](int i, double a, double b) {
        const double alpha = spec.alpha(i);
        const double gamma = spec.gamma(i);
        const double sigma = std::sqrt(spec.sigma2(i));
        double tau = a;
        while (tau < b) {
          // Next node of the uniform grid strictly after tau, clipped at the jump epoch.
          double next = (std::floor(tau / dt + 1e-9) + 1.0) * dt;
          if (next - tau < 1e-12 * dt) next += dt;
          const double h = std::min(next, b) - tau;
          m += (alpha - gamma * m) * h + sigma * std::sqrt(h) * noise.normal();
          tau += h;
        }
      });
      out.values[k] = m;
      out.states[k] = path.state_at(t);
    }
  });
  return out;
}

namespace {

void draw_multi(const MultiOuSpec& spec, const CtmcPath& path, double t, Stream& gauss,
                MultiTerminalSamples& out, Eigen::Index row) {
  for (int j = 0; j < spec.dimension(); ++j) {
    const auto& c = spec.coords[static_cast<std::size_t>(j)];
    const auto cond =
        detail::propagate(c.alpha, c.gamma, c.sigma2, path, 0.0, t, initial_conditional(c.initial));
    out.values(row, j) = cond.mean + std::sqrt(cond.variance) * gauss.normal();
  }
}

}  // namespace

MultiTerminalSamples sample_multi_terminal(const MultiOuSpec& spec,
                                           std::span<const CtmcPath> paths, double t,
                                           std::uint64_t seed) {
  MultiTerminalSamples out;
  out.values.resize(static_cast<Eigen::Index>(paths.size()), spec.dimension());
  out.states.resize(paths.size());
  for (std::size_t k = 0; k < paths.size(); ++k) {
    check_path_for(paths[k], spec.states(), t);
    Stream gauss(seed, k, Lane::gaussian);
    draw_multi(spec, paths[k], t, gauss, out, static_cast<Eigen::Index>(k));
    out.states[k] = paths[k].state_at(t);
  }
  return out;
}

MultiTerminalSamples simulate_multi_terminal(const MultiOuSpec& spec, double t, std::size_t n,
                                             std::uint64_t seed, int threads) {
  if (!(t >= 0.0)) throw DomainError("simulate_multi_terminal: t must be nonnegative");
  MultiTerminalSamples out;
  out.values.resize(static_cast<Eigen::Index>(n), spec.dimension());
  out.states.resize(n);
  const double horizon = std::max(t, 1e-300);
  parallel_chunks(n, kPathChunk, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      Stream chain_rng(seed, k, Lane::chain);
      const CtmcPath path = sample_path(spec.chain, spec.p0, horizon, chain_rng);
      Stream gauss(seed, k, Lane::gaussian);
      draw_multi(spec, path, t, gauss, out, static_cast<Eigen::Index>(k));
      out.states[k] = path.state_at(t);
    }
  });
  return out;
}

}  // namespace mmou
