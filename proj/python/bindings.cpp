#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmou/config.hpp"
#include "mmou/errors.hpp"
#include "mmou/moments.hpp"
#include "mmou/scaling.hpp"
#include "mmou/transform.hpp"

namespace py = pybind11;
using namespace mmou;

namespace {

MmouSpec make_spec(const Matrix& q, const Vector& alpha, const Vector& gamma, const Vector& sigma2,
                   double m0, double m0_sd, std::optional<Vector> p0) {
  GeneratorMatrix chain(q);
  Vector start = p0 ? *p0 : stationary_distribution(chain);
  return MmouSpec(chain, alpha, gamma, sigma2, InitialLaw{m0, m0_sd}, start);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Markov-modulated Ornstein-Uhlenbeck processes";
  m.attr("__version__") = MMOU_VERSION;

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<MmouSpec>(m, "Spec")
      .def(py::init(&make_spec), py::arg("generator"), py::arg("alpha"), py::arg("gamma"),
           py::arg("sigma2"), py::arg("m0") = 0.0, py::arg("m0_sd") = 0.0,
           py::arg("p0") = py::none())
      .def_property_readonly("generator", [](const MmouSpec& s) { return s.chain.rates(); })
      .def_readonly("alpha", &MmouSpec::alpha)
      .def_readonly("gamma", &MmouSpec::gamma)
      .def_readonly("sigma2", &MmouSpec::sigma2)
      .def_readonly("p0", &MmouSpec::p0)
      .def_property_readonly("states", &MmouSpec::states);

  m.def("stationary_distribution",
        [](const Matrix& q) { return stationary_distribution(GeneratorMatrix(q)); });
  m.def("deviation_matrix", [](const Matrix& q) { return deviation_set(GeneratorMatrix(q)).deviation; });
  m.def("resolvent_deviation",
        [](const Matrix& q, double gamma) { return resolvent_deviation(GeneratorMatrix(q), gamma); });

  m.def("moments", [](const MmouSpec& spec, const std::vector<double>& times) {
    const MomentTable t = transient_second_moment(spec, times);
    py::dict out;
    std::vector<double> mean, var;
    std::vector<Vector> nu, w;
    for (std::size_t i = 0; i < times.size(); ++i) {
      mean.push_back(t.mean(i));
      var.push_back(t.variance(i));
      nu.push_back(t.nu(i));
      w.push_back(t.w(i));
    }
    out["t"] = times;
    out["mean"] = mean;
    out["variance"] = var;
    out["nu"] = nu;
    out["w"] = w;
    return out;
  }, py::arg("spec"), py::arg("times"));

  m.def("stationary_moments", [](const MmouSpec& spec, int order) {
    const StationaryMoments s = stationary_moments(spec, order);
    py::dict out;
    out["mean"] = s.mu_inf;
    out["variance"] = s.v_inf;
    out["nu"] = s.nu_inf;
    out["w"] = s.w_inf;
    out["higher"] = s.higher;
    return out;
  }, py::arg("spec"), py::arg("order") = 2);

  m.def("covariance_lag", &covariance_lag, py::arg("spec"), py::arg("t"), py::arg("u"));

  m.def("simulate_terminal", [](const MmouSpec& spec, double t, std::size_t n, std::uint64_t seed,
                                int threads) {
    TerminalSamples s;
    {
      py::gil_scoped_release release;
      s = simulate_terminal(spec, t, n, seed, threads);
    }
    return py::make_tuple(s.values, s.states);
  }, py::arg("spec"), py::arg("t"), py::arg("n"), py::arg("seed"), py::arg("threads") = 1);

  m.def("scale_spec", &scale_spec, py::arg("spec"), py::arg("N"), py::arg("h"));
  m.def("limit_variance", &limit_variance, py::arg("spec"), py::arg("h"), py::arg("t"));
  m.def("pd_asymptotic_variance", &pd_asymptotic_variance, py::arg("spec"), py::arg("N"),
        py::arg("h"), py::arg("t"));

  m.def("absorbing_transform", [](double q2, const Vector& alpha, const Vector& gamma,
                                  const Vector& sigma2, double m0, double theta, double t) {
    AbsorbingParams p;
    p.q2 = q2;
    p.alpha = alpha;
    p.gamma = gamma;
    p.sigma2 = sigma2;
    p.m0 = m0;
    const auto g = absorbing_two_state_transform(p, theta, t);
    return py::make_tuple(g.g1, g.g2);
  }, py::arg("q2"), py::arg("alpha"), py::arg("gamma"), py::arg("sigma2"), py::arg("m0"),
     py::arg("theta"), py::arg("t"));

  m.def("canonical_config", [](const std::string& text) { return emit_config(parse_config(text)); },
        py::arg("text"));
}
