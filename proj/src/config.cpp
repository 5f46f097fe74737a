#include "mima/config.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mima {

using nlohmann::json;

LinearSde SystemSpec::build() const {
    if (preset == "diag") return make_diag_benchmark();
    if (preset == "coupled") return make_coupled_benchmark();
    if (preset == "parametric") return make_parametric_slowfast(a11, a12, a22, eps);
    return {drift, diffusion};
}

const char* to_string(MatchingMode mode) { return mode == MatchingMode::mean ? "mean" : "mean_var"; }

namespace {

json toml_to_json(const toml::node& node, const std::string& path) {
    if (const auto* t = node.as_table()) {
        json out = json::object();
        for (auto&& [k, v] : *t) {
            const std::string key(k.str());
            out[key] = toml_to_json(v, path.empty() ? key : path + "." + key);
        }
        return out;
    }
    if (const auto* a = node.as_array()) {
        json out = json::array();
        for (std::size_t i = 0; i < a->size(); ++i) out.push_back(toml_to_json(*a->get(i), path));
        return out;
    }
    if (const auto* s = node.as_string()) return s->get();
    if (const auto* i = node.as_integer()) return i->get();
    if (const auto* f = node.as_floating_point()) return f->get();
    if (const auto* b = node.as_boolean()) return b->get();
    throw ConfigError(path, "dates and times are not valid configuration values");
}

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

// View of one JSON object that remembers which keys were read, so leftovers
// can be reported as unknown.
class Section {
public:
    Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_, "expected a table");
    }

    [[nodiscard]] bool has(const std::string& key) const { return obj_.contains(key); }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    [[nodiscard]] std::string key_path(const std::string& key) const { return join(path_, key); }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.contains(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
        }
    }

    template <class T, class Parse>
    void read(const std::string& key, T& out, Parse parse) {
        if (const json* v = find(key)) out = parse(*v, key_path(key));
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

double as_real(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path, "expected a finite number");
    return x;
}

std::int64_t as_int(const json& v, const std::string& path) {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
        const double x = v.get<double>();
        if (std::isfinite(x) && x == std::floor(x) && std::fabs(x) < 9.0e15) return static_cast<std::int64_t>(x);
    }
    throw ConfigError(path, "expected an integer");
}

std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
    return v.get<bool>();
}

Vector as_vector(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
    Vector out;
    for (const auto& x : v) out.push_back(as_real(x, path));
    return out;
}

Matrix as_matrix(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a nonempty array of rows");
    const std::size_t rows = v.size();
    std::size_t cols = 0;
    std::vector<double> data;
    for (const auto& row : v) {
        const Vector r = as_vector(row, path);
        if (cols == 0) cols = r.size();
        if (r.empty() || r.size() != cols) throw ConfigError(path, "matrix rows must be nonempty and of equal length");
        data.insert(data.end(), r.begin(), r.end());
    }
    return {rows, cols, std::move(data)};
}

Vector linspace(double a, double b, int n) {
    Vector out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
    return out;
}

void require(bool ok, const std::string& key, const std::string& message) {
    if (!ok) throw ConfigError(key, message);
}

void check_spd(const Matrix& m, std::size_t d, const std::string& key) {
    require(m.rows() == d && m.cols() == d, key, "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
    require(is_symmetric(m) && is_positive_definite(m), key, "matrix must be symmetric positive definite");
}

struct ExperimentDefaults {
    const char* preset;
    double dt;
    double Dt;
    MatchingMode mode;
    bool adaptive;
};

ExperimentDefaults defaults_for(const std::string& name) {
    if (name == "histogram") return {"diag", 0.09, 1.0, MatchingMode::mean, false};
    if (name == "stability-map") return {"diag", 0.09, 1.0, MatchingMode::mean, false};
    if (name == "fast-marginal") return {"coupled", 0.11, 1.85, MatchingMode::mean, false};
    if (name == "adaptive") return {"diag", 0.09, 2.5, MatchingMode::mean, true};
    if (name == "meanvar-convergence") return {"coupled", 0.1, 1.0, MatchingMode::mean_var, true};
    if (name == "k-sweep") return {"coupled", 0.12, 1.05, MatchingMode::mean_var, true};
    if (name == "mixture-kl") return {"coupled", 0.09, 0.5, MatchingMode::mean_var, true};
    std::string known;
    for (const char* n : kExperimentNames) known += std::string(known.empty() ? "" : ", ") + n;
    throw ConfigError("experiment", "unknown experiment '" + name + "' (expected one of: " + known + ")");
}

std::vector<GaussianComponent> default_mixture(const SlowFastPartition& p) {
    const std::size_t d = p.dim();
    std::vector<GaussianComponent> out;
    for (double sign : {-1.0, 1.0}) {
        Vector mean(d, 0.0);
        for (std::size_t i = 0; i < p.d_s; ++i) mean[i] = sign;
        out.push_back({0.5, mean, 0.25 * Matrix::identity(d)});
    }
    return out;
}

void read_system(Section& root, ExperimentConfig& c) {
    const json* node = root.find("system");
    if (!node) return;
    Section s(*node, "system");
    s.read("preset", c.system.preset, as_string);
    const std::string& preset = c.system.preset;
    require(preset == "diag" || preset == "coupled" || preset == "parametric" || preset == "custom", "system.preset",
            "expected diag, coupled, parametric or custom");
    if (preset == "parametric") {
        s.read("a11", c.system.a11, as_real);
        s.read("a12", c.system.a12, as_real);
        s.read("a22", c.system.a22, as_real);
        s.read("eps", c.system.eps, as_real);
        require(c.system.eps > 0.0, "system.eps", "must be positive");
    }
    if (preset == "custom") {
        require(s.has("drift") && s.has("diffusion"), "system", "custom systems need drift and diffusion");
        s.read("drift", c.system.drift, as_matrix);
        s.read("diffusion", c.system.diffusion, as_matrix);
    }
    s.finish();
}

std::vector<GaussianComponent> read_mixture(const json& node) {
    if (!node.is_array() || node.empty()) throw ConfigError("mixture", "expected a nonempty array of tables");
    std::vector<GaussianComponent> out;
    for (std::size_t k = 0; k < node.size(); ++k) {
        Section s(node[k], "mixture[" + std::to_string(k) + "]");
        GaussianComponent g;
        require(s.has("mean") && s.has("cov"), s.key_path(""), "components need mean and cov");
        s.read("weight", g.weight, as_real);
        s.read("mean", g.mean, as_vector);
        s.read("cov", g.cov, as_matrix);
        s.finish();
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

json read_config_document(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigReadError(path, "cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw ConfigReadError(path, "cannot read config file");
    const std::string text = buf.str();
    if (path.extension() == ".json") {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError("", std::string("invalid JSON: ") + e.what());
        }
    }
    try {
        return toml_to_json(toml::parse(text, path.string()), "");
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "invalid TOML at line " << e.source().begin.line << ": " << e.description();
        throw ConfigError("", msg.str());
    }
}

ExperimentConfig resolve_config(const json& doc, const ConfigOverrides& overrides) {
    Section root(doc, "");
    ExperimentConfig c;

    std::optional<std::string> named;
    if (const json* v = root.find("experiment")) named = as_string(*v, "experiment");
    if (overrides.experiment && named && *named != *overrides.experiment) {
        throw ConfigError("experiment", "config is for '" + *named + "' but '" + *overrides.experiment + "' was requested");
    }
    if (overrides.experiment) named = overrides.experiment;
    require(named.has_value(), "experiment", "no experiment given");
    c.experiment = *named;
    const ExperimentDefaults def = defaults_for(c.experiment);

    root.read("profile", c.profile, as_string);
    if (overrides.paper_scale) c.profile = "paper";
    require(c.profile == "desk" || c.profile == "paper", "profile", "expected desk or paper");
    const bool paper = c.profile == "paper";
    c.J = paper ? 50000 : 10000;
    c.T = paper ? 210.0 : 50.0;

    if (const json* v = root.find("seed")) {
        const std::int64_t s = as_int(*v, "seed");
        require(s >= 0, "seed", "must be nonnegative");
        c.seed = static_cast<std::uint64_t>(s);
    }
    if (overrides.seed) c.seed = *overrides.seed;
    c.output_dir = "mima-out/" + c.experiment;
    root.read("output_dir", c.output_dir, as_string);
    if (overrides.output_dir) c.output_dir = *overrides.output_dir;
    require(!c.output_dir.empty(), "output_dir", "must not be empty");

    c.system.preset = def.preset;
    read_system(root, c);
    const LinearSde sde = [&] {
        try {
            return c.system.build();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("system", e.what());
        }
    }();
    const std::size_t d = sde.dim();
    const ValidationReport report = validate(sde);
    require(report.diffusion_spd, "system", "diffusion must be symmetric positive definite");
    require(report.drift_hurwitz, "system", "drift must have eigenvalues with negative real part");

    c.partition = {1, d - 1};
    if (const json* v = root.find("partition")) {
        Section s(*v, "partition");
        s.read("d_s", c.partition.d_s, [](const json& x, const std::string& p) {
            const auto n = as_int(x, p);
            require(n >= 1, p, "must be at least 1");
            return static_cast<std::size_t>(n);
        });
        c.partition.d_f = d - std::min(d, c.partition.d_s);
        s.read("d_f", c.partition.d_f, [](const json& x, const std::string& p) {
            const auto n = as_int(x, p);
            require(n >= 0, p, "must be nonnegative");
            return static_cast<std::size_t>(n);
        });
        s.finish();
    }
    require(c.partition.dim() == d, "partition", "d_s + d_f must equal the system dimension");

    if (const json* v = root.find("J")) {
        const auto j = as_int(*v, "J");
        require(j >= 2, "J", "need at least 2 replicas");
        c.J = static_cast<std::size_t>(j);
    }
    root.read("T", c.T, as_real);
    if (overrides.paper_scale) {
        c.J = 50000;
        c.T = 210.0;
    }
    require(c.T > 0.0, "T", "must be positive");

    c.dt = def.dt;
    c.Dt = def.Dt;
    c.matching_mode = def.mode;
    c.adaptive = def.adaptive;
    root.read("dt", c.dt, as_real);
    require(c.dt > 0.0, "dt", "must be positive");
    const bool has_Dt = root.has("Dt"), has_max = root.has("Dt_max");
    root.read("Dt", c.Dt, as_real);
    c.Dt_max = c.Dt;
    root.read("Dt_max", c.Dt_max, as_real);
    if (has_max && !has_Dt) c.Dt = c.Dt_max;
    require(c.Dt_max >= c.Dt, "Dt_max", "must be at least Dt");
    if (const json* v = root.find("K")) {
        const auto k = as_int(*v, "K");
        require(k >= 1, "K", "must be at least 1");
        c.K = static_cast<int>(k);
    }
    if (c.experiment != "stability-map" && c.experiment != "k-sweep") {
        require(c.Dt >= c.K * c.dt, "Dt", "must be at least K * dt");
    }
    if (const json* v = root.find("matching_mode")) {
        const std::string m = as_string(*v, "matching_mode");
        require(m == "mean" || m == "mean_var", "matching_mode", "expected mean or mean_var");
        c.matching_mode = m == "mean" ? MatchingMode::mean : MatchingMode::mean_var;
    }
    root.read("adaptive", c.adaptive, as_bool);
    root.read("engine", c.engine, as_string);
    require(c.engine == "particle" || c.engine == "gaussian", "engine", "expected particle or gaussian");
    require(c.engine == "particle" || c.experiment == "meanvar-convergence" || c.experiment == "k-sweep" ||
                c.experiment == "adaptive",
            "engine", "the gaussian engine is available for adaptive, meanvar-convergence and k-sweep only");

    if (c.experiment == "stability-map") {
        c.dt_grid = linspace(0.01, 0.2, 8);
        c.Dt_grid = linspace(0.2, 2.3, 12);
    }
    root.read("dt_grid", c.dt_grid, as_vector);
    root.read("Dt_grid", c.Dt_grid, as_vector);
    if (c.experiment == "stability-map") {
        require(!c.adaptive, "adaptive", "stability maps use fixed steps");
        require(!c.dt_grid.empty(), "dt_grid", "must not be empty");
        require(!c.Dt_grid.empty(), "Dt_grid", "must not be empty");
        for (double x : c.dt_grid) require(x > 0.0, "dt_grid", "entries must be positive");
        for (double x : c.Dt_grid) require(x > 0.0, "Dt_grid", "entries must be positive");
        for (double a : c.dt_grid)
            for (double b : c.Dt_grid) require(b >= c.K * a, "Dt_grid", "every Dt must be at least K * dt");
    }
    if (c.experiment == "k-sweep") c.K_values = {1, 2, 3};
    if (const json* v = root.find("K_values")) {
        if (!v->is_array()) throw ConfigError("K_values", "expected an array of integers");
        c.K_values.clear();
        for (const auto& x : *v) {
            const auto k = as_int(x, "K_values");
            require(k >= 1, "K_values", "entries must be at least 1");
            c.K_values.push_back(static_cast<int>(k));
        }
    }
    root.read("micro_window", c.micro_window, as_real);
    if (c.experiment == "k-sweep") {
        require(!c.K_values.empty(), "K_values", "must not be empty");
        require(c.micro_window > 0.0, "micro_window", "must be positive");
        require(c.Dt >= c.micro_window, "Dt", "must be at least micro_window");
        for (double x : c.Dt_grid) require(x >= c.micro_window, "Dt_grid", "every Dt must be at least micro_window");
    }
    if (const json* v = root.find("replicates")) {
        const auto r = as_int(*v, "replicates");
        require(r >= 2, "replicates", "need at least 2 replicates");
        c.replicates = static_cast<int>(r);
    }
    if (const json* v = root.find("bins")) {
        const auto b = as_int(*v, "bins");
        require(b >= 0 && b <= 100000, "bins", "must be between 0 and 100000");
        c.bins = static_cast<int>(b);
    }
    if (const json* v = root.find("threshold_form")) {
        const std::string f = as_string(*v, "threshold_form");
        require(f == "paper" || f == "linearized", "threshold_form", "expected paper or linearized");
        c.threshold_form = f == "paper" ? EffectiveForm::paper : EffectiveForm::linearized;
    }

    c.initial_mean = Vector(d, 0.0);
    c.initial_cov = Matrix::identity(d);
    root.read("initial_mean", c.initial_mean, as_vector);
    root.read("initial_cov", c.initial_cov, as_matrix);
    require(c.initial_mean.size() == d, "initial_mean", "length must equal the system dimension");
    check_spd(c.initial_cov, d, "initial_cov");

    if (c.experiment == "mixture-kl") c.mixture = default_mixture(c.partition);
    if (const json* v = root.find("mixture")) c.mixture = read_mixture(*v);
    if (!c.mixture.empty()) {
        double total = 0.0;
        for (std::size_t k = 0; k < c.mixture.size(); ++k) {
            const std::string key = "mixture[" + std::to_string(k) + "]";
            require(c.mixture[k].weight > 0.0, key + ".weight", "must be positive");
            require(c.mixture[k].mean.size() == d, key + ".mean", "length must equal the system dimension");
            check_spd(c.mixture[k].cov, d, key + ".cov");
            total += c.mixture[k].weight;
        }
        require(std::fabs(total - 1.0) <= 1e-12, "mixture", "weights must sum to 1");
    }

    if (const json* v = root.find("newton")) {
        Section s(*v, "newton");
        s.read("tolerance", c.newton.tolerance, as_real);
        s.read("max_iters", c.newton.max_iters, [](const json& x, const std::string& p) {
            const auto n = as_int(x, p);
            require(n >= 1 && n <= 100000, p, "must be between 1 and 100000");
            return static_cast<int>(n);
        });
        s.finish();
        require(c.newton.tolerance > 0.0, "newton.tolerance", "must be positive");
    }
    if (const json* v = root.find("controller")) {
        Section s(*v, "controller");
        s.read("grow", c.grow_factor, as_real);
        s.read("shrink", c.shrink_factor, as_real);
        s.finish();
        require(c.grow_factor >= 1.0, "controller.grow", "must be at least 1");
        require(c.shrink_factor > 0.0 && c.shrink_factor < 1.0, "controller.shrink", "must lie in (0, 1)");
    }

    root.finish();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    auto matrix = [](const Matrix& m) {
        json rows = json::array();
        for (std::size_t i = 0; i < m.rows(); ++i) {
            json r = json::array();
            for (std::size_t j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
            rows.push_back(r);
        }
        return rows;
    };
    json system{{"preset", c.system.preset}};
    if (c.system.preset == "parametric") {
        system["a11"] = c.system.a11;
        system["a12"] = c.system.a12;
        system["a22"] = c.system.a22;
        system["eps"] = c.system.eps;
    } else if (c.system.preset == "custom") {
        system["drift"] = matrix(c.system.drift);
        system["diffusion"] = matrix(c.system.diffusion);
    }
    json out{
        {"experiment", c.experiment},
        {"profile", c.profile},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"system", system},
        {"partition", {{"d_s", c.partition.d_s}, {"d_f", c.partition.d_f}}},
        {"J", c.J},
        {"T", c.T},
        {"dt", c.dt},
        {"Dt", c.Dt},
        {"Dt_max", c.Dt_max},
        {"K", c.K},
        {"matching_mode", to_string(c.matching_mode)},
        {"adaptive", c.adaptive},
        {"engine", c.engine},
        {"dt_grid", c.dt_grid},
        {"Dt_grid", c.Dt_grid},
        {"K_values", c.K_values},
        {"micro_window", c.micro_window},
        {"replicates", c.replicates},
        {"bins", c.bins},
        {"threshold_form", c.threshold_form == EffectiveForm::paper ? "paper" : "linearized"},
        {"initial_mean", c.initial_mean},
        {"initial_cov", matrix(c.initial_cov)},
        {"newton", {{"tolerance", c.newton.tolerance}, {"max_iters", c.newton.max_iters}}},
        {"controller", {{"grow", c.grow_factor}, {"shrink", c.shrink_factor}}},
    };
    if (!c.mixture.empty()) {
        json mix = json::array();
        for (const auto& g : c.mixture) mix.push_back({{"weight", g.weight}, {"mean", g.mean}, {"cov", matrix(g.cov)}});
        out["mixture"] = mix;
    }
    return out;
}

}  // namespace mima
