#include "mmou/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mmou/errors.hpp"

namespace mmou::stats {

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    carry_ += (sum_ - t) + x;
  } else {
    carry_ += (x - t) + sum_;
  }
  sum_ = t;
}

Summary summarize(std::span<const double> x) {
  if (x.size() < 2) throw DomainError("summarize: need at least two values");
  Summary s;
  s.count = x.size();
  const auto n = static_cast<double>(x.size());
  CompensatedSum total;
  for (double v : x) total.add(v);
  s.mean = total.value() / n;
  CompensatedSum m2, m4;
  for (double v : x) {
    const double c = v - s.mean;
    m2.add(c * c);
    m4.add(c * c * c * c);
  }
  s.variance = m2.value() / (n - 1.0);
  s.fourth_central = m4.value() / n;
  s.se_mean = std::sqrt(s.variance / n);
  const double pop = m2.value() / n;
  s.se_variance = std::sqrt(std::max(0.0, s.fourth_central - pop * pop) / n);
  return s;
}

Estimate raw_moment(std::span<const double> x, int k) {
  if (k < 1) throw DomainError("raw_moment: order must be >= 1");
  std::vector<double> powers(x.size());
  std::transform(x.begin(), x.end(), powers.begin(), [k](double v) { return std::pow(v, k); });
  const Summary s = summarize(powers);
  return {s.mean, s.se_mean};
}

Estimate product_mean(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("product_mean: length mismatch");
  std::vector<double> prod(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) prod[i] = x[i] * y[i];
  const Summary s = summarize(prod);
  return {s.mean, s.se_mean};
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  CompensatedSum sx, sy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx.add(x[i]);
    sy.add(y[i]);
  }
  const double mx = sx.value() / n, my = sy.value() / n;
  CompensatedSum cxy, cxx, cyy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    cxy.add(a * b);
    cxx.add(a * a);
    cyy.add(b * b);
  }
  return cxy.value() / std::sqrt(cxx.value() * cyy.value());
}

}  // namespace

Estimate correlation(std::span<const double> x, std::span<const double> y, std::size_t batches) {
  if (x.size() != y.size()) throw DimensionError("correlation: length mismatch");
  if (batches < 2 || x.size() < 10 * batches) {
    throw DomainError("correlation: need at least 10 values per batch and 2 batches");
  }
  Estimate out;
  out.value = pearson(x, y);
  const std::size_t size = x.size() / batches;
  std::vector<double> parts;
  for (std::size_t b = 0; b < batches; ++b) {
    parts.push_back(pearson(x.subspan(b * size, size), y.subspan(b * size, size)));
  }
  out.se = summarize(parts).se_mean;
  return out;
}

double normal_cdf(double x, double mean, double variance) {
  if (!(variance > 0.0)) throw DomainError("normal_cdf: variance must be positive");
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 0.2) return 1.0;  // the alternating series is 1 to double precision here
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_normal(std::span<const double> x, double mean, double variance) {
  if (x.empty()) throw DomainError("ks_normal: empty sample");
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = normal_cdf(sorted[i], mean, variance);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  const double root = std::sqrt(n);
  return {d, kolmogorov_survival((root + 0.12 + 0.11 / root) * d)};
}

}  // namespace mmou::stats
