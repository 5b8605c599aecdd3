#include "mmou/runner.hpp"

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "mmou/errors.hpp"
#include "mmou/moments.hpp"
#include "mmou/parallel.hpp"
#include "mmou/scaling.hpp"
#include "mmou/stats.hpp"
#include "mmou/transform.hpp"

#ifndef MMOU_VERSION
#define MMOU_VERSION "0.0.0"
#endif

namespace mmou {

namespace {

using ordered_json = nlohmann::ordered_json;
using Row = std::vector<std::string>;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string integer(std::size_t x) { return std::to_string(x); }

class Csv {
 public:
  explicit Csv(Row header) : columns_(header.size()) { append(header); }

  void add(const Row& row) {
    if (row.size() != columns_) throw NumericalError("internal: CSV row width mismatch");
    append(row);
  }

  const std::string& text() const { return text_; }

 private:
  void append(const Row& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) text_ += ',';
      text_ += row[i];
    }
    text_ += '\n';
  }

  std::size_t columns_;
  std::string text_;
};

Row indexed_columns(const std::string& stem, int count) {
  Row out;
  for (int i = 1; i <= count; ++i) out.push_back(stem + "_" + std::to_string(i));
  return out;
}

void extend(Row& row, const Row& more) { row.insert(row.end(), more.begin(), more.end()); }

void extend(Row& row, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(format_double(v(i)));
}

class Writer {
 public:
  explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& text) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + (dir_ / name).string());
    result.outputs.push_back(name);
  }

  RunResult result;

 private:
  std::filesystem::path dir_;
};

const MmouSpec& need_model(const RunConfig& cfg) {
  if (!cfg.model) throw ValidationError("model is required for command " + cfg.command);
  return *cfg.model;
}

void run_validate(const RunConfig& cfg, Writer& w) {
  const GeneratorMatrix& chain = cfg.model ? cfg.model->chain : cfg.multi_model->chain;
  const Vector pi = stationary_distribution(chain);
  Csv csv({"state", "pi", "exit_rate", "p0"});
  const Vector& p0 = cfg.model ? cfg.model->p0 : cfg.multi_model->p0;
  for (int i = 0; i < chain.states(); ++i) {
    csv.add({integer(static_cast<std::size_t>(i) + 1), format_double(pi(i)),
             format_double(chain.exit_rate(i)), format_double(p0(i))});
  }
  w.write("chain.csv", csv.text());
  for (const auto& msg : chain.warnings()) w.result.warnings.push_back(msg);
}

void run_simulate(const RunConfig& cfg, int threads, Writer& w) {
  const MmouSpec& spec = need_model(cfg);
  const int d = spec.states();
  const std::size_t n = cfg.n_paths;
  const std::size_t nt = cfg.times.size();
  std::vector<std::vector<double>> values(nt, std::vector<double>(n));
  std::vector<std::vector<int>> states(nt, std::vector<int>(n));

  if (cfg.simulate.method == "exact") {
    const PathSamples s = simulate_paths(spec, cfg.times, n, cfg.seed, threads);
    for (std::size_t c = 0; c < nt; ++c) {
      for (std::size_t k = 0; k < n; ++k) {
        values[c][k] = s.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
        states[c][k] = s.states(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
      }
    }
  } else {
    for (std::size_t c = 0; c < nt; ++c) {
      const TerminalSamples s =
          simulate_euler(spec, cfg.times[c], cfg.simulate.dt, n, cfg.seed, threads);
      values[c] = s.values;
      states[c] = s.states;
    }
  }

  Csv paths({"path", "t", "state", "m"});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < nt; ++c) {
      paths.add({integer(k + 1), format_double(cfg.times[c]),
                 integer(static_cast<std::size_t>(states[c][k]) + 1), format_double(values[c][k])});
    }
  }
  w.write("paths.csv", paths.text());

  Row header{"t", "mean", "mean_se", "variance", "variance_se"};
  extend(header, indexed_columns("p", d));
  Csv summary(header);
  for (std::size_t c = 0; c < nt; ++c) {
    Row row{format_double(cfg.times[c])};
    if (n >= 2) {
      const auto s = stats::summarize(values[c]);
      extend(row, Row{format_double(s.mean), format_double(s.se_mean), format_double(s.variance),
                      format_double(s.se_variance)});
    } else {
      extend(row, Row{format_double(values[c][0]), format_double(kNaN), format_double(kNaN),
                      format_double(kNaN)});
    }
    Vector freq = Vector::Zero(d);
    for (int s : states[c]) freq(s) += 1.0;
    extend(row, Vector(freq / static_cast<double>(n)));
    summary.add(row);
  }
  w.write("simulate_summary.csv", summary.text());
}

void run_moments(const RunConfig& cfg, Writer& w) {
  const MmouSpec& spec = need_model(cfg);
  const int d = spec.states();
  const MomentTable table = transient_second_moment(spec, cfg.times);
  Row header{"t", "mu", "v"};
  extend(header, indexed_columns("nu", d));
  extend(header, indexed_columns("w", d));
  Csv csv(header);
  for (std::size_t i = 0; i < cfg.times.size(); ++i) {
    Row row{format_double(cfg.times[i]), format_double(table.mean(i)),
            format_double(table.variance(i))};
    extend(row, table.nu(i));
    extend(row, table.w(i));
    csv.add(row);
  }
  w.write("moments.csv", csv.text());

  const StationaryMoments st = stationary_moments(spec, cfg.moment_order);
  Row sheader{"mu_inf", "v_inf"};
  extend(sheader, indexed_columns("nu_inf", d));
  extend(sheader, indexed_columns("w_inf", d));
  Csv stationary(sheader);
  Row srow{format_double(st.mu_inf), format_double(st.v_inf)};
  extend(srow, st.nu_inf);
  extend(srow, st.w_inf);
  stationary.add(srow);
  w.write("stationary.csv", stationary.text());

  if (cfg.moment_order > 2) {
    const MomentTable high = higher_moments_transient(spec, cfg.moment_order, cfg.times);
    Row hheader{"t"};
    extend(hheader, indexed_columns("m", cfg.moment_order));
    Csv higher(hheader);
    for (std::size_t i = 0; i < cfg.times.size(); ++i) {
      Row row{format_double(cfg.times[i])};
      for (int k = 1; k <= cfg.moment_order; ++k) {
        row.push_back(format_double(high.aggregate[i][static_cast<std::size_t>(k)]));
      }
      higher.add(row);
    }
    w.write("higher_moments.csv", higher.text());
  }
}

void run_covariance(const RunConfig& cfg, Writer& w) {
  const MmouSpec& spec = need_model(cfg);
  Csv csv({"t", "u", "covariance"});
  for (double t : cfg.times) {
    for (double u : cfg.lags) {
      csv.add({format_double(t), format_double(u), format_double(covariance_lag(spec, t, u))});
    }
  }
  w.write("covariance.csv", csv.text());
}

void run_transform(const RunConfig& cfg, int threads, Writer& w) {
  const MmouSpec& spec = need_model(cfg);
  const int d = spec.states();
  const TransformSurface s =
      estimate_transform(spec, cfg.theta_grid, cfg.times, cfg.n_paths, cfg.seed, threads);
  Row header{"theta", "t"};
  extend(header, indexed_columns("g", d));
  extend(header, indexed_columns("se", d));
  Csv csv(header);
  for (std::size_t a = 0; a < s.theta_grid.size(); ++a) {
    for (std::size_t b = 0; b < s.time_grid.size(); ++b) {
      Row row{format_double(s.theta_grid[a]), format_double(s.time_grid[b])};
      extend(row, s.values[a][b]);
      extend(row, s.std_error[a][b]);
      csv.add(row);
    }
  }
  w.write("transform.csv", csv.text());

  if (s.theta_grid.size() >= 5 && s.time_grid.size() >= 5) {
    const ResidualGrid r = pde_residual(s, spec);
    Row rheader{"theta", "t"};
    extend(rheader, indexed_columns("residual", d));
    extend(rheader, indexed_columns("se", d));
    Csv residual(rheader);
    for (std::size_t a = 0; a < r.theta.size(); ++a) {
      for (std::size_t b = 0; b < r.time.size(); ++b) {
        Row row{format_double(r.theta[a]), format_double(r.time[b])};
        extend(row, r.residual[a][b]);
        extend(row, r.se[a][b]);
        residual.add(row);
      }
    }
    w.write("transform_residual.csv", residual.text());
  } else {
    w.result.warnings.push_back(
        "transform_residual.csv skipped: residual check needs at least 5 theta and 5 time points");
  }
}

void run_scaling(const RunConfig& cfg, int threads, Writer& w) {
  const MmouSpec& spec = need_model(cfg);
  Csv csv({"N", "h", "beta", "t", "rho", "limit_variance", "ks_statistic", "ks_p",
           "uncentered_ks_statistic", "uncentered_ks_p", "empirical_variance",
           "empirical_variance_se", "pd_variance"});
  for (double n_scale : cfg.scaling.n_values) {
    for (double h : cfg.scaling.h_values) {
      ScalingConfig sc{spec, n_scale, h, cfg.scaling.t_eval, cfg.scaling.n_paths, cfg.seed, threads};
      const ScalingReport r = run_clt_experiment(sc);
      csv.add({format_double(n_scale), format_double(h), format_double(r.beta),
               format_double(r.t_eval), format_double(r.rho), format_double(r.limit_variance),
               format_double(r.ks_statistic), format_double(r.ks_p),
               format_double(r.uncentered_ks_statistic), format_double(r.uncentered_ks_p),
               format_double(r.empirical_variance), format_double(r.empirical_variance_se),
               format_double(r.predicted_pd_variance)});
    }
  }
  w.write("scaling.csv", csv.text());
}

void run_multi(const RunConfig& cfg, int threads, Writer& w) {
  if (!cfg.multi_model) throw ValidationError("multi_model is required for command multi");
  const MultiOuSpec& spec = *cfg.multi_model;
  const int dim = spec.dimension();
  Csv csv({"j", "k", "t", "analytic", "empirical", "empirical_se"});
  for (double t : cfg.times) {
    const MultiTerminalSamples s = simulate_multi_terminal(spec, t, cfg.n_paths, cfg.seed, threads);
    for (int j = 0; j < dim; ++j) {
      for (int k = j; k < dim; ++k) {
        double analytic = kNaN;
        try {
          analytic = multi_transient_covariance(spec, j, k, t);
        } catch (const ApplicabilityError& e) {
          if (w.result.warnings.empty() || w.result.warnings.back() != e.what()) {
            w.result.warnings.push_back(e.what());
          }
        }
        double empirical = kNaN, se = kNaN;
        if (cfg.n_paths >= 2) {
          const Vector xj = s.values.col(j);
          const Vector xk = s.values.col(k);
          std::vector<double> prod(cfg.n_paths);
          const double mj = xj.mean(), mk = xk.mean();
          for (std::size_t p = 0; p < cfg.n_paths; ++p) {
            const auto e = static_cast<Eigen::Index>(p);
            prod[p] = (xj(e) - mj) * (xk(e) - mk);
          }
          const auto summary = stats::summarize(prod);
          const double n = static_cast<double>(cfg.n_paths);
          empirical = summary.mean * n / (n - 1.0);
          se = summary.se_mean;
        }
        csv.add({integer(static_cast<std::size_t>(j) + 1), integer(static_cast<std::size_t>(k) + 1),
                 format_double(t), format_double(analytic), format_double(empirical),
                 format_double(se)});
      }
    }
  }
  w.write("multi_covariance.csv", csv.text());

  Csv stationary({"j", "k", "moment_recursion", "moment_direct"});
  for (int j = 0; j < dim; ++j) {
    for (int k = j; k < dim; ++k) {
      std::vector<int> orders(static_cast<std::size_t>(dim), 0);
      orders[static_cast<std::size_t>(j)] += 1;
      orders[static_cast<std::size_t>(k)] += 1;
      const double recursion = multi_stationary_mixed_moments(spec, orders).sum();
      const double direct = j == k ? kNaN : stationary_cross_moment(spec, j, k);
      stationary.add({integer(static_cast<std::size_t>(j) + 1),
                      integer(static_cast<std::size_t>(k) + 1), format_double(recursion),
                      format_double(direct)});
    }
  }
  w.write("multi_stationary.csv", stationary.text());
}

void write_manifest(const RunConfig& cfg, int threads, const RunResult& result,
                    const std::string& status, const std::string& error, double seconds) {
  ordered_json m;
  m["tool"] = "mmou";
  m["version"] = MMOU_VERSION;
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                       std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  m["command"] = cfg.command;
  m["seed"] = cfg.seed;
  m["threads"] = threads;
  m["status"] = status;
  if (!error.empty()) m["error"] = error;
  m["outputs"] = result.outputs;
  m["warnings"] = result.warnings;
  m["wall_time_seconds"] = seconds;
  m["config"] = ordered_json::parse(emit_config(cfg));
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream out(std::filesystem::path(cfg.output_dir) / "manifest.json",
                    std::ios::binary | std::ios::trunc);
  out << m.dump(2) << "\n";
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

RunResult run(const RunConfig& cfg, int threads) {
  const auto start = std::chrono::steady_clock::now();
  Writer w(cfg.output_dir);
  const std::string& c = cfg.command;
  if (c == "validate") {
    run_validate(cfg, w);
  } else if (c == "simulate") {
    run_simulate(cfg, threads, w);
  } else if (c == "moments") {
    run_moments(cfg, w);
  } else if (c == "covariance") {
    run_covariance(cfg, w);
  } else if (c == "transform") {
    run_transform(cfg, threads, w);
  } else if (c == "scaling") {
    run_scaling(cfg, threads, w);
  } else if (c == "multi") {
    run_multi(cfg, threads, w);
  } else {
    throw ValidationError("unknown command " + c);
  }
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  write_manifest(cfg, threads, w.result, "ok", "", elapsed.count());
  return w.result;
}

int execute(const Invocation& inv, std::ostream& out, std::ostream& err) {
  std::optional<RunConfig> cfg;
  const int threads = inv.threads > 0 ? inv.threads : default_threads();
  auto fail = [&](const char* kind, const std::exception& e, int code) {
    err << "mmou: " << kind << ": " << e.what() << "\n";
    if (cfg && code == kExitNumerical) {
      try {
        write_manifest(*cfg, threads, {}, "numerical_error", e.what(), 0.0);
      } catch (...) {
      }
    }
    return code;
  };
  try {
    if (inv.command == "emit-config") {
      out << emit_config(load_config(inv.config, inv.overrides));
      return kExitOk;
    }
    ConfigOverrides overrides = inv.overrides;
    overrides.command = inv.command;
    cfg.emplace(load_config(inv.config, overrides));
    const RunResult result = run(*cfg, threads);
    for (const auto& msg : result.warnings) err << "mmou: warning: " << msg << "\n";
    return kExitOk;
  } catch (const ValidationError& e) {
    return fail("validation error", e, kExitValidation);
  } catch (const NumericalError& e) {
    return fail("numerical error", e, kExitNumerical);
  } catch (const std::exception& e) {
    return fail("error", e, kExitUsage);
  }
}

}  // namespace mmou
