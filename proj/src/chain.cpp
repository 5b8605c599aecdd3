#include "mmou/chain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmou/errors.hpp"

namespace mmou {

namespace {

// Reachability from state 0 along edges i -> j with q_ij > 0 (or reversed).
bool reaches_all(const Matrix& q, bool reversed) {
  const auto d = q.rows();
  std::vector<char> seen(d, 0);
  std::vector<Eigen::Index> stack{0};
  seen[0] = 1;
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double rate = reversed ? q(j, i) : q(i, j);
      if (j != i && rate > 0.0 && !seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

}  // namespace

GeneratorMatrix::GeneratorMatrix(const Matrix& q, Options options)
    : q_(q), allow_absorbing_(options.allow_absorbing) {
  if (q.rows() != q.cols() || q.rows() == 0) {
    throw DimensionError("generator must be a nonempty square matrix, got " +
                         std::to_string(q.rows()) + "x" + std::to_string(q.cols()));
  }
  if (!q.allFinite()) throw ValidationError("generator has a non-finite entry");
  const auto d = q.rows();
  double max_rate = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i != j && q(i, j) < 0.0) {
        throw ValidationError("generator entry q[" + std::to_string(i + 1) + "][" +
                              std::to_string(j + 1) + "] is negative");
      }
      max_rate = std::max(max_rate, std::abs(q(i, j)));
    }
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    const double off = q.row(i).sum() - q(i, i);
    const double row_sum = q.row(i).sum();
    if (std::abs(row_sum) > 1e-12 * max_rate) {
      std::ostringstream msg;
      msg << "row " << (i + 1) << " summed to " << row_sum << "; diagonal recomputed";
      warnings_.push_back(msg.str());
    }
    q_(i, i) = -off;
  }

  irreducible_ = d == 1 || (reaches_all(q_, false) && reaches_all(q_, true));
  if (!irreducible_ && !allow_absorbing_) {
    throw StructureError("generator is reducible (support graph has more than one class)");
  }

  jump_weights_.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    jump_weights_[i].resize(d);
    for (Eigen::Index j = 0; j < d; ++j) jump_weights_[i][j] = (i == j) ? 0.0 : q_(i, j);
  }
}

GeneratorMatrix GeneratorMatrix::scaled(double factor) const {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw DomainError("generator scale factor must be positive");
  }
  return GeneratorMatrix(q_ * factor, Options{.allow_absorbing = allow_absorbing_});
}

int CtmcPath::state_at(double t) const {
  if (t < 0.0 || t > horizon) throw DomainError("state_at: time outside [0, horizon]");
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return initial_state;
  return post_jump_states[static_cast<std::size_t>(it - jump_times.begin()) - 1];
}

void validate_path(const CtmcPath& path, int states) {
  if (path.jump_times.size() != path.post_jump_states.size()) {
    throw ValidationError("path: jump_times and post_jump_states differ in length");
  }
  auto in_range = [&](int s) { return s >= 0 && s < states; };
  if (!in_range(path.initial_state)) throw ValidationError("path: initial state out of range");
  int previous = path.initial_state;
  double last = 0.0;
  for (std::size_t k = 0; k < path.jump_times.size(); ++k) {
    const double t = path.jump_times[k];
    if (!(t > last || (k == 0 && t >= 0.0)) || !(t < path.horizon)) {
      throw ValidationError("path: jump times must be strictly increasing and below the horizon");
    }
    if (!in_range(path.post_jump_states[k])) throw ValidationError("path: state out of range");
    if (path.post_jump_states[k] == previous) {
      throw ValidationError("path: consecutive states must differ");
    }
    previous = path.post_jump_states[k];
    last = t;
  }
}

void validate_probability(const Vector& p, int states, const std::string& name) {
  if (p.size() != states) {
    throw DimensionError(name + ": expected " + std::to_string(states) + " entries, got " +
                         std::to_string(p.size()));
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p(i)) || p(i) < 0.0) {
      throw ValidationError(name + "[" + std::to_string(i + 1) + "] must be a nonnegative number");
    }
  }
  if (std::abs(p.sum() - 1.0) > 1e-10) throw ValidationError(name + " must sum to 1");
}

Vector stationary_distribution(const GeneratorMatrix& g) {
  if (!g.irreducible()) {
    throw StructureError("stationary distribution requires an irreducible generator");
  }
  const int d = g.states();
  Matrix system = g.rates().transpose();
  system.row(d - 1).setOnes();
  Vector rhs = Vector::Zero(d);
  rhs(d - 1) = 1.0;
  Vector pi = linalg::solve(system, rhs, "stationary system");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(pi(i) > 0.0)) throw StructureError("stationary distribution has a nonpositive entry");
  }
  return pi / pi.sum();
}

Vector transient_distribution(const GeneratorMatrix& g, const Vector& p0, double t) {
  if (!(t >= 0.0)) throw DomainError("transient_distribution: t must be nonnegative");
  validate_probability(p0, g.states(), "p0");
  Vector p = linalg::expm(g.rates().transpose(), t) * p0;
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = std::max(p(i), 0.0);
  return p;
}

DeviationSet deviation_set(const GeneratorMatrix& g) {
  const int d = g.states();
  DeviationSet out;
  out.pi = stationary_distribution(g);
  out.ergodic = Vector::Ones(d) * out.pi.transpose();
  out.fundamental = linalg::inverse(out.ergodic - g.rates(), "fundamental matrix (Pi - Q)");
  out.deviation = out.fundamental - out.ergodic;

  const Matrix& q = g.rates();
  const Matrix eye = Matrix::Identity(d, d);
  const double scale = std::max(1.0, out.fundamental.cwiseAbs().maxCoeff()) *
                       std::max(1.0, q.cwiseAbs().maxCoeff());
  const double tol = 1e-10 * scale;
  auto check = [&](const Matrix& residual, const char* name) {
    if (residual.cwiseAbs().maxCoeff() > tol) {
      throw NumericalError(std::string("deviation_set: identity ") + name + " violated");
    }
  };
  check(q * out.fundamental - (out.ergodic - eye), "QF = Pi - I");
  check(out.fundamental * q - (out.ergodic - eye), "FQ = Pi - I");
  check(out.ergodic * out.deviation, "Pi D = 0");
  check(out.deviation * out.ergodic, "D Pi = 0");
  check(out.fundamental * Vector::Ones(d) - Vector::Ones(d), "F 1 = 1");
  return out;
}

Matrix resolvent_deviation(const GeneratorMatrix& g, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw DomainError("resolvent_deviation: gamma must be positive");
  }
  const int d = g.states();
  const Vector pi = stationary_distribution(g);
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix resolvent = linalg::inverse(gamma * eye - g.rates(), "resolvent (gamma I - Q)");
  return resolvent - Vector::Ones(d) * pi.transpose() / gamma;
}

CtmcPath sample_path(const GeneratorMatrix& g, const Vector& p0, double horizon, Stream& rng) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw DomainError("sample_path: horizon must be positive and finite");
  }
  CtmcPath path;
  path.horizon = horizon;
  path.initial_state = rng.categorical(std::span<const double>(p0.data(), p0.size()));
  int state = path.initial_state;
  double t = 0.0;
  for (;;) {
    const double rate = g.exit_rate(state);
    if (rate <= 0.0) break;
    t += rng.exponential(rate);
    if (t >= horizon) break;
    state = rng.categorical(g.jump_weights(state));
    path.jump_times.push_back(t);
    path.post_jump_states.push_back(state);
  }
  return path;
}

double occupation_integral(const CtmcPath& path, const Vector& weights, double t) {
  if (!(t >= 0.0) || t > path.horizon) {
    throw DomainError("occupation_integral: t outside [0, horizon]");
  }
  double total = 0.0;
  path.for_each_segment(t, [&](int state, double a, double b) { total += weights(state) * (b - a); });
  return total;
}

}  // namespace mmou
