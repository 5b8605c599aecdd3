#include "mmou/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mmou/errors.hpp"

namespace mmou {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& field, const std::string& what) {
  throw ValidationError(field + " " + what);
}

std::string indexed(const std::string& field, std::size_t i) {
  return field + "[" + std::to_string(i + 1) + "]";
}

double as_number(const json& v, const std::string& field) {
  if (!v.is_number()) bad(field, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) bad(field, "must be finite");
  return x;
}

std::uint64_t as_count(const json& v, const std::string& field) {
  if (!v.is_number_unsigned()) bad(field, "must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

std::vector<double> as_numbers(const json& v, const std::string& field) {
  if (!v.is_array()) bad(field, "must be an array of numbers");
  if (v.empty()) bad(field, "must not be empty");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], indexed(field, i)));
  return out;
}

Vector as_vector(const json& v, const std::string& field) {
  const auto xs = as_numbers(v, field);
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

Matrix as_matrix(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) bad(field, "must be a nonempty list of rows");
  const auto rows = static_cast<Eigen::Index>(v.size());
  Matrix m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = as_numbers(v[static_cast<std::size_t>(i)], indexed(field, static_cast<std::size_t>(i)));
    if (i == 0) m.resize(rows, static_cast<Eigen::Index>(row.size()));
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
      bad(indexed(field, static_cast<std::size_t>(i)), "has a different length than the first row");
    }
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

std::vector<double> as_grid(const json& v, const std::string& field, bool nonnegative) {
  auto xs = as_numbers(v, field);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (nonnegative && xs[i] < 0.0) bad(indexed(field, i), "must be nonnegative");
    if (i > 0 && !(xs[i] > xs[i - 1])) bad(field, "must be strictly increasing");
  }
  return xs;
}

/// Object reader that rejects fields it was never asked about.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj.is_object()) bad(path_.empty() ? "config" : path_, "must be an object");
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = get(key);
    if (v == nullptr) bad(name(key), "is required");
    return *v;
  }

  /// Rejects unknown keys up front, before any value is read.
  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& item : obj_.items()) {
      if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
        bad(name(item.key()), "is not a known field");
      }
    }
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) bad(name(item.key()), "is not a known field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

GeneratorMatrix read_generator(Fields& f) {
  const std::string field = f.name("generator");
  const Matrix q = as_matrix(f.require("generator"), field);
  try {
    return GeneratorMatrix(q);
  } catch (const StructureError& e) {
    throw StructureError(field + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(field + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(field + ": " + e.what());
  }
}

InitialLaw read_initial(Fields& f) {
  InitialLaw law;
  if (const json* v = f.get("m0")) law.mean = as_number(*v, f.name("m0"));
  if (const json* v = f.get("m0_sd")) law.sd = as_number(*v, f.name("m0_sd"));
  return law;
}

/// Returns p0, or pi when the field is absent or "stationary".
Vector read_p0(Fields& f, const GeneratorMatrix& chain, bool& stationary) {
  const json* v = f.get("p0");
  if (v == nullptr || (v->is_string() && v->get<std::string>() == "stationary")) {
    stationary = true;
    return stationary_distribution(chain);
  }
  if (v->is_string()) bad(f.name("p0"), "must be \"stationary\" or a probability vector");
  stationary = false;
  return as_vector(*v, f.name("p0"));
}

template <class Build>
auto with_prefix(const std::string& prefix, Build&& build) {
  try {
    return build();
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const SpecError& e) {
    throw SpecError(prefix + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(prefix + e.what());
  }
}

MmouSpec read_model(const json& node, bool& stationary) {
  Fields f(node, "model");
  GeneratorMatrix chain = read_generator(f);
  Vector alpha = as_vector(f.require("alpha"), "model.alpha");
  Vector gamma = as_vector(f.require("gamma"), "model.gamma");
  Vector sigma2 = as_vector(f.require("sigma2"), "model.sigma2");
  const InitialLaw law = read_initial(f);
  Vector p0 = read_p0(f, chain, stationary);
  f.finish();
  return with_prefix("model.", [&] {
    return MmouSpec(std::move(chain), std::move(alpha), std::move(gamma), std::move(sigma2), law,
                    std::move(p0));
  });
}

MultiOuSpec read_multi(const json& node, bool& stationary) {
  Fields f(node, "multi_model");
  GeneratorMatrix chain = read_generator(f);
  const json& list = f.require("coords");
  if (!list.is_array() || list.empty()) bad("multi_model.coords", "must be a nonempty array");
  std::vector<MultiOuSpec::Coordinate> coords;
  for (std::size_t j = 0; j < list.size(); ++j) {
    Fields c(list[j], indexed("multi_model.coords", j));
    MultiOuSpec::Coordinate coord;
    coord.alpha = as_vector(c.require("alpha"), c.name("alpha"));
    coord.gamma = as_vector(c.require("gamma"), c.name("gamma"));
    coord.sigma2 = as_vector(c.require("sigma2"), c.name("sigma2"));
    coord.initial = read_initial(c);
    c.finish();
    coords.push_back(std::move(coord));
  }
  Vector p0 = read_p0(f, chain, stationary);
  f.finish();
  return with_prefix("multi_model.", [&] {
    return MultiOuSpec(std::move(chain), std::move(coords), std::move(p0));
  });
}

std::string location(std::string_view text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

ordered_json numbers(const Vector& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

ordered_json numbers(const std::vector<double>& v) {
  ordered_json out = ordered_json::array();
  for (double x : v) out.push_back(x);
  return out;
}

ordered_json rows(const Matrix& m) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(numbers(Vector(m.row(i).transpose())));
  return out;
}

}  // namespace

RunConfig parse_config(std::string_view text, const ConfigOverrides& overrides) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::string what = e.what();
    const auto colon = what.rfind(": ");
    throw ParseError("config syntax error at " + location(text, e.byte == 0 ? 0 : e.byte - 1) +
                     ": " + (colon == std::string::npos ? what : what.substr(colon + 2)));
  }

  Fields f(root, "");
  f.allow({"command", "seed", "output_dir", "model", "multi_model", "times", "lags", "theta_grid",
           "n_paths", "moment_order", "simulate", "scaling"});
  RunConfig cfg;

  if (const json* v = f.get("command")) {
    if (!v->is_string()) bad("command", "must be a string");
    cfg.command = v->get<std::string>();
  }
  if (overrides.command) cfg.command = *overrides.command;
  if (cfg.command.empty()) bad("command", "is required");
  const auto& names = run_commands();
  if (std::find(names.begin(), names.end(), cfg.command) == names.end()) {
    bad("command", "must be one of validate, simulate, moments, covariance, transform, scaling, multi");
  }

  const json* seed = f.get("seed");
  if (overrides.seed) {
    cfg.seed = *overrides.seed;
  } else if (seed != nullptr) {
    cfg.seed = as_count(*seed, "seed");
  } else {
    bad("seed", "is required");
  }
  if (seed != nullptr && overrides.seed) as_count(*seed, "seed");

  if (const json* v = f.get("output_dir")) {
    if (!v->is_string() || v->get<std::string>().empty()) bad("output_dir", "must be a nonempty string");
    cfg.output_dir = v->get<std::string>();
  }
  if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;

  if (const json* v = f.get("model")) cfg.model.emplace(read_model(*v, cfg.p0_stationary));
  if (const json* v = f.get("multi_model")) {
    bool stationary = true;
    cfg.multi_model.emplace(read_multi(*v, stationary));
    if (!cfg.model) cfg.p0_stationary = stationary;
    if (cfg.model && stationary != cfg.p0_stationary) {
      bad("multi_model.p0", "must use the same form (\"stationary\" or vector) as model.p0");
    }
  }
  if (cfg.command == "multi" && !cfg.multi_model) bad("multi_model", "is required for command multi");
  if (cfg.command != "multi" && cfg.command != "validate" && !cfg.model) {
    bad("model", "is required for command " + cfg.command);
  }
  if (!cfg.model && !cfg.multi_model) bad("model", "is required");

  if (const json* v = f.get("times")) cfg.times = as_grid(*v, "times", true);
  if (const json* v = f.get("lags")) cfg.lags = as_grid(*v, "lags", true);
  if (const json* v = f.get("theta_grid")) {
    cfg.theta_grid = as_grid(*v, "theta_grid", false);
  } else {
    for (int i = 0; i <= 60; ++i) cfg.theta_grid.push_back(-1.0 + 3.0 * i / 60.0);
  }
  if (const json* v = f.get("n_paths")) {
    cfg.n_paths = as_count(*v, "n_paths");
    if (cfg.n_paths == 0) bad("n_paths", "must be positive");
  }
  if (const json* v = f.get("moment_order")) {
    const auto order = as_count(*v, "moment_order");
    if (order < 1 || order > 64) bad("moment_order", "must be between 1 and 64");
    cfg.moment_order = static_cast<int>(order);
  }
  if (const json* v = f.get("simulate")) {
    Fields s(*v, "simulate");
    if (const json* m = s.get("method")) {
      if (!m->is_string() || (m->get<std::string>() != "exact" && m->get<std::string>() != "euler")) {
        bad("simulate.method", "must be \"exact\" or \"euler\"");
      }
      cfg.simulate.method = m->get<std::string>();
    }
    if (const json* dt = s.get("dt")) {
      cfg.simulate.dt = as_number(*dt, "simulate.dt");
      if (!(cfg.simulate.dt > 0.0)) bad("simulate.dt", "must be positive");
    }
    s.finish();
  }
  if (const json* v = f.get("scaling")) {
    Fields s(*v, "scaling");
    if (const json* n = s.get("N")) {
      cfg.scaling.n_values = as_numbers(*n, "scaling.N");
      for (std::size_t i = 0; i < cfg.scaling.n_values.size(); ++i) {
        if (!(cfg.scaling.n_values[i] >= 1.0)) bad(indexed("scaling.N", i), "must be >= 1");
      }
    }
    if (const json* h = s.get("h")) {
      cfg.scaling.h_values = as_numbers(*h, "scaling.h");
      for (std::size_t i = 0; i < cfg.scaling.h_values.size(); ++i) {
        if (!(cfg.scaling.h_values[i] >= 0.0)) bad(indexed("scaling.h", i), "must be >= 0");
      }
    }
    if (const json* t = s.get("t_eval")) {
      cfg.scaling.t_eval = as_number(*t, "scaling.t_eval");
      if (!(cfg.scaling.t_eval > 0.0)) bad("scaling.t_eval", "must be positive");
    }
    if (const json* n = s.get("n_paths")) cfg.scaling.n_paths = as_count(*n, "scaling.n_paths");
    s.finish();
  }
  f.finish();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& file, const ConfigOverrides& overrides) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), overrides);
}

std::string emit_config(const RunConfig& cfg) {
  ordered_json root;
  root["command"] = cfg.command;
  root["seed"] = cfg.seed;
  root["output_dir"] = cfg.output_dir;
  auto p0 = [&](const Vector& p) {
    return cfg.p0_stationary ? ordered_json("stationary") : numbers(p);
  };
  if (cfg.model) {
    const MmouSpec& m = *cfg.model;
    ordered_json node;
    node["generator"] = rows(m.chain.rates());
    node["alpha"] = numbers(m.alpha);
    node["gamma"] = numbers(m.gamma);
    node["sigma2"] = numbers(m.sigma2);
    node["m0"] = m.initial.mean;
    node["m0_sd"] = m.initial.sd;
    node["p0"] = p0(m.p0);
    root["model"] = node;
  }
  if (cfg.multi_model) {
    const MultiOuSpec& m = *cfg.multi_model;
    ordered_json node;
    node["generator"] = rows(m.chain.rates());
    ordered_json coords = ordered_json::array();
    for (const auto& c : m.coords) {
      ordered_json item;
      item["alpha"] = numbers(c.alpha);
      item["gamma"] = numbers(c.gamma);
      item["sigma2"] = numbers(c.sigma2);
      item["m0"] = c.initial.mean;
      item["m0_sd"] = c.initial.sd;
      coords.push_back(item);
    }
    node["coords"] = coords;
    node["p0"] = p0(m.p0);
    root["multi_model"] = node;
  }
  root["times"] = numbers(cfg.times);
  root["lags"] = numbers(cfg.lags);
  root["theta_grid"] = numbers(cfg.theta_grid);
  root["n_paths"] = cfg.n_paths;
  root["moment_order"] = cfg.moment_order;
  root["simulate"] = {{"method", cfg.simulate.method}, {"dt", cfg.simulate.dt}};
  ordered_json scaling;
  scaling["N"] = numbers(cfg.scaling.n_values);
  scaling["h"] = numbers(cfg.scaling.h_values);
  scaling["t_eval"] = cfg.scaling.t_eval;
  scaling["n_paths"] = cfg.scaling.n_paths;
  root["scaling"] = scaling;
  return root.dump(2) + "\n";
}

}  // namespace mmou
