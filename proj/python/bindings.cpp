// Python bindings for the mima core.
#include "mima/experiments.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace mima;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    const auto r = static_cast<std::size_t>(a.shape(0));
    const auto c = static_cast<std::size_t>(a.shape(1));
    return Matrix(r, c, Vector(a.data(), a.data() + r * c));
}

Vector to_vector(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
    return Vector(a.data(), a.data() + a.size());
}

Array from_matrix(const Matrix& m) {
    Array out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array from_vector(std::span<const double> v) {
    Array out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

MatchingMode parse_mode(const std::string& s) {
    if (s == "mean") return MatchingMode::mean;
    if (s == "mean_var") return MatchingMode::mean_var;
    throw std::invalid_argument("mode must be \"mean\" or \"mean_var\"");
}

SlowFastPartition partition_of(const LinearSde& sde, std::size_t d_s) {
    SlowFastPartition p{d_s, sde.dim() - d_s};
    p.check(sde.dim());
    return p;
}

nlohmann::json cell_json(const Cell& c) {
    return std::visit(
        [](const auto& v) -> nlohmann::json {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, std::monostate>) return nullptr;
            else return v;
        },
        c);
}

std::string run_experiment_json(const std::string& config) {
    ExperimentResult r;
    {
        const ExperimentConfig c = resolve_config(nlohmann::json::parse(config));
        py::gil_scoped_release release;
        r = run_experiment(c);
    }
    nlohmann::json out{{"summary", summary_to_json(r.summary)}, {"metadata", r.metadata}};
    out["runs"] = nlohmann::json::array();
    for (const auto& run : r.runs) out["runs"].push_back({{"label", run.label}, {"summary", summary_to_json(run.summary)}});
    out["tables"] = nlohmann::json::object();
    for (const auto& t : r.tables) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : t.rows) {
            nlohmann::json cells = nlohmann::json::array();
            for (const auto& c : row) cells.push_back(cell_json(c));
            rows.push_back(std::move(cells));
        }
        out["tables"][t.name] = {{"columns", t.columns}, {"rows", std::move(rows)}};
    }
    return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    py::register_exception<MatchingInfeasible>(m, "MatchingInfeasible", PyExc_ArithmeticError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<LinearSde>(m, "LinearSde")
        .def(py::init([](const Array& drift, const Array& diffusion) {
                 LinearSde sde(to_matrix(drift), to_matrix(diffusion));
                 const ValidationReport v = validate(sde);
                 if (!v.diffusion_spd) throw std::invalid_argument("diffusion must be symmetric positive definite");
                 if (!v.drift_hurwitz) throw std::invalid_argument("drift must be Hurwitz");
                 return sde;
             }),
             py::arg("drift"), py::arg("diffusion"))
        .def_property_readonly("drift", [](const LinearSde& s) { return from_matrix(s.drift()); })
        .def_property_readonly("diffusion", [](const LinearSde& s) { return from_matrix(s.diffusion()); })
        .def_property_readonly("dim", &LinearSde::dim);

    m.def("diag_benchmark", &make_diag_benchmark);
    m.def("coupled_benchmark", &make_coupled_benchmark);
    m.def("parametric_slowfast", &make_parametric_slowfast, py::arg("a11"), py::arg("a12"), py::arg("a22"),
          py::arg("eps"));

    py::class_<GaussianState>(m, "GaussianState")
        .def(py::init([](const Array& mean, const Array& cov) {
                 GaussianState s{to_vector(mean), to_matrix(cov)};
                 check_gaussian(s);
                 return s;
             }),
             py::arg("mean"), py::arg("cov"))
        .def_property_readonly("mean", [](const GaussianState& s) { return from_vector(s.mean); })
        .def_property_readonly("cov", [](const GaussianState& s) { return from_matrix(s.cov); });

    m.def(
        "mm_gaussian_step",
        [](const GaussianState& s, const LinearSde& sde, double dt, double Dt, int K, const std::string& mode,
           std::size_t d_s) {
            return mm_gaussian_step(s, sde, partition_of(sde, d_s), {dt, Dt, K, parse_mode(mode)});
        },
        py::arg("state"), py::arg("sde"), py::arg("dt"), py::arg("Dt"), py::arg("K") = 1, py::arg("mode") = "mean",
        py::arg("d_s") = 1, "One exact micro-macro step on Gaussian moments.");
    m.def(
        "invariant_variance", [](const LinearSde& sde, double dt) { return from_matrix(invariant_variance_discrete(sde, dt)); },
        py::arg("sde"), py::arg("dt"), "Invariant covariance of Euler-Maruyama with step dt.");
    m.def("kl_gaussian", &kl_gaussian, py::arg("p"), py::arg("q"));

    m.def(
        "stability_check",
        [](const LinearSde& sde, double dt, double Dt, std::size_t d_s) {
            const StabilityVerdict v = theorem_stability_check(sde, partition_of(sde, d_s), dt, Dt);
            return py::dict(py::arg("stable") = v.stable, py::arg("slow_radius") = v.slow_radius,
                            py::arg("fast_radius") = v.fast_radius);
        },
        py::arg("sde"), py::arg("dt"), py::arg("Dt"), py::arg("d_s") = 1);
    m.def(
        "variance_extrapolation_threshold",
        [](const Array& slow_drift, double dt) { return variance_extrap_operator(to_matrix(slow_drift), dt).threshold; },
        py::arg("slow_drift"), py::arg("dt"));
    m.def(
        "asymptotic_slow_variance",
        [](const Array& slow_drift, const Array& slow_diffusion, double dt) {
            return from_matrix(asymptotic_slow_variance(to_matrix(slow_drift), to_matrix(slow_diffusion), dt));
        },
        py::arg("slow_drift"), py::arg("slow_diffusion"), py::arg("dt"));
    m.def(
        "effective_slowfast_threshold",
        [](const LinearSde& sde, double dt, std::size_t d_s, const std::string& form) {
            if (form != "paper" && form != "linearized") throw std::invalid_argument("form must be paper or linearized");
            return effective_slowfast_threshold(sde, partition_of(sde, d_s), dt,
                                                form == "paper" ? EffectiveForm::paper : EffectiveForm::linearized);
        },
        py::arg("sde"), py::arg("dt"), py::arg("d_s") = 1, py::arg("form") = "paper",
        "Largest stable Dt of the effective slow-fast matrix, or None.");
    m.def(
        "drift_block_diagonalize",
        [](const LinearSde& sde, std::size_t d_s) {
            const BlockDiagResult r = drift_block_diagonalize(sde, partition_of(sde, d_s));
            return py::make_tuple(from_matrix(r.transform), r.transformed);
        },
        py::arg("sde"), py::arg("d_s") = 1, "Returns (C, transformed system) with C A C^-1 block diagonal.");

    py::class_<ParticleEnsemble>(m, "ParticleEnsemble")
        .def(py::init([](const Array& positions, std::optional<Array> weights) {
                 const Matrix x = to_matrix(positions);
                 const Vector flat(x.data().begin(), x.data().end());
                 return weights ? ParticleEnsemble(x.cols(), flat, to_vector(*weights)) : ParticleEnsemble(x.cols(), flat);
             }),
             py::arg("positions"), py::arg("weights") = py::none())
        .def_static(
            "normal",
            [](std::size_t count, const Array& mean, const Array& cov, std::uint64_t seed) {
                return init_ensemble(count, {GaussianComponent{1.0, to_vector(mean), to_matrix(cov)}}, seed);
            },
            py::arg("count"), py::arg("mean"), py::arg("cov"), py::arg("seed"))
        .def_property_readonly("positions",
                               [](const ParticleEnsemble& e) {
                                   return from_matrix(Matrix(e.size(), e.dim(), e.positions()));
                               })
        .def_property_readonly("weights", [](const ParticleEnsemble& e) { return from_vector(e.weights()); })
        .def_property_readonly("ess", &effective_sample_size)
        .def("moments", &weighted_moments)
        .def("__len__", &ParticleEnsemble::size);

    m.def(
        "mm_particle_step",
        [](const ParticleEnsemble& e, const LinearSde& sde, double dt, double Dt, std::uint64_t seed,
           std::uint64_t step, int K, const std::string& mode, std::size_t d_s) {
            MatchResult r;
            {
                py::gil_scoped_release release;
                r = mm_particle_step(e, sde, partition_of(sde, d_s), {dt, Dt, K, parse_mode(mode)}, CounterRng(seed),
                                     step);
            }
            return py::make_tuple(r.ensemble, r.outcome.converged, r.outcome.iterations);
        },
        py::arg("ensemble"), py::arg("sde"), py::arg("dt"), py::arg("Dt"), py::arg("seed"), py::arg("step") = 0,
        py::arg("K") = 1, py::arg("mode") = "mean", py::arg("d_s") = 1,
        "One particle micro-macro step. Returns (ensemble, converged, newton_iterations).");

    m.def("_run_experiment", &run_experiment_json, py::arg("config_json"));
}
