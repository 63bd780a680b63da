#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "stic/adjoint.hpp"
#include "stic/control.hpp"
#include "stic/error.hpp"
#include "stic/forward.hpp"
#include "stic/kernel.hpp"
#include "stic/mesh.hpp"
#include "stic/model.hpp"
#include "stic/noise.hpp"

namespace stic {

using json = nlohmann::json;

/// Validated experiment description. `effective` is the full document after defaults.
struct ExperimentConfig {
    std::string name;
    int dim = 1;
    std::vector<double> extents;
    std::vector<std::size_t> nodes;
    std::string operator_type;
    double operator_alpha = 0.5;
    std::array<double, 2> operator_beta{};
    double horizon = 1.0;
    double delay = 0.2;
    double dt = 0.01;
    Scheme scheme = Scheme::semi_implicit;
    KernelSpec kernel;
    std::string kernel_table;
    LevySpec levy;
    std::string coefficient_set;
    HarvestParams harvest;
    LinearGenericParams linear;
    LogisticParams logistic;
    Profile initial;
    double boundary_value = 0.0;
    ControlBox box;
    double initial_control = 0.5;
    std::optional<std::uint64_t> seed;
    std::size_t paths = 1;
    bool monte_carlo = false;
    PicardOptions picard;
    ImprovementOptions optimize;
    std::string output_dir;
    unsigned threads = 1;
    std::filesystem::path base_dir;  ///< directory of the config file, for relative paths
    json effective;
};

/// Full default document; every accepted key appears here.
inline json default_config_json() {
    return json::parse(R"({
  "name": "experiment",
  "mesh": {"dim": 1, "extents": [1.0], "nodes": [33]},
  "operator": {"type": "half_laplacian", "alpha": 0.5, "beta": [0.0, 0.0]},
  "time": {"T": 1.0, "delta": 0.2, "dt": 0.01},
  "scheme": "semi_implicit",
  "kernel": {"kind": "moving_average", "rho1": 1.0, "rho2": 1.0, "theta": 0.0, "delta": null,
             "scale": 1.0, "table": null},
  "levy": {"intensity": 0.0, "marks": [], "probs": []},
  "coefficients": {
    "name": "harvest_power",
    "gamma1": 1.0, "gamma2": 0.0, "gamma3": 0.0, "gamma4": 0.0, "gamma5": [],
    "k": {"base": 1.0, "sine_amplitude": 0.0},
    "beta": 0.5,
    "a0": 0.0, "a1": 0.2, "a2": 0.3, "a3": 0.1, "s0": 0.0, "s1": 0.2, "c1": 0.5,
    "reward_x": 0.1, "weight_u": 1.0, "u_ref": 1.0, "reward_ubar": 0.05,
    "growth": 1.0, "crowding": 0.5, "volatility": 0.2, "jump_scale": 1.0, "cost": 0.5
  },
  "initial": {"base": 1.0, "sine_amplitude": 0.0},
  "boundary": {"value": 0.0},
  "control": {"box": [0.01, 3.0], "initial": 0.5},
  "paths": 1,
  "mode": "deterministic",
  "picard": {"tol": 1e-8, "max_iter": 50, "ridge": 1e-8, "lipschitz_probes": 200},
  "optimize": {"step_size": 0.5, "iterations": 50, "gradient_tol": 1e-8},
  "output_dir": "stic_out",
  "threads": 1
})");
}

namespace detail {

/// Rejects keys of `user` that the defaults do not know. `seed` is the one optional key.
inline void check_keys(const json& user, const json& defaults, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (prefix.empty() && it.key() == "seed") continue;
        if (!defaults.contains(it.key())) throw ConfigError(path + ": unknown key");
        const json& d = defaults.at(it.key());
        if (d.is_object() && !it.value().is_null()) check_keys(it.value(), d, path);
    }
}

template <class T>
T field(const json& doc, const std::string& path) {
    const json* cur = &doc;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!cur->is_object() || !cur->contains(part)) throw ConfigError(path + ": missing");
        cur = &cur->at(part);
    }
    try {
        return cur->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + ": wrong type");
    }
}

/// Recursive overlay of user values on the defaults; explicit nulls are kept.
inline void overlay(json& base, const json& user) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
            overlay(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

inline void config_require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline std::size_t config_multiple(double value, double dt, const std::string& what) {
    try {
        return multiple_of(value, dt, what.c_str());
    } catch (const InvalidArgument&) {
        throw ConfigError(what + ": must be an integer multiple of time.dt");
    }
}

inline Profile profile_from(const json& doc, const std::string& path) {
    return {field<double>(doc, path + ".base"), field<double>(doc, path + ".sine_amplitude")};
}

}  // namespace detail

/// Validates a JSON document (defaults filled) into an ExperimentConfig.
inline ExperimentConfig parse_config(const json& user, const std::filesystem::path& base_dir = {}) {
    using detail::config_require;
    using detail::field;
    const json defaults = default_config_json();
    detail::check_keys(user, defaults, "");
    json doc = defaults;
    detail::overlay(doc, user);

    ExperimentConfig c;
    c.base_dir = base_dir;
    c.name = field<std::string>(doc, "name");

    c.dim = field<int>(doc, "mesh.dim");
    config_require(c.dim == 1 || c.dim == 2, "mesh.dim: must be 1 or 2");
    c.extents = field<std::vector<double>>(doc, "mesh.extents");
    c.nodes = field<std::vector<std::size_t>>(doc, "mesh.nodes");
    config_require(c.extents.size() == static_cast<std::size_t>(c.dim), "mesh.extents: need one entry per axis");
    config_require(c.nodes.size() == static_cast<std::size_t>(c.dim), "mesh.nodes: need one entry per axis");
    for (double e : c.extents) config_require(e > 0.0, "mesh.extents: must be positive");
    for (std::size_t n : c.nodes) config_require(n >= 3, "mesh.nodes: need at least 3 nodes per axis");

    c.operator_type = field<std::string>(doc, "operator.type");
    config_require(c.operator_type == "half_laplacian" || c.operator_type == "zero" || c.operator_type == "constant",
                   "operator.type: expected half_laplacian, zero or constant");
    c.operator_alpha = field<double>(doc, "operator.alpha");
    config_require(c.operator_alpha >= 0.0, "operator.alpha: must be >= 0");
    const auto beta = field<std::vector<double>>(doc, "operator.beta");
    config_require(beta.size() == 2, "operator.beta: expected two entries");
    c.operator_beta = {beta[0], beta[1]};

    c.horizon = field<double>(doc, "time.T");
    c.delay = field<double>(doc, "time.delta");
    c.dt = field<double>(doc, "time.dt");
    config_require(c.dt > 0.0, "time.dt: must be positive");
    config_require(c.horizon > 0.0, "time.T: must be positive");
    config_require(c.delay >= 0.0, "time.delta: must be >= 0");
    detail::config_multiple(c.horizon, c.dt, "time.T");
    detail::config_multiple(c.delay, c.dt, "time.delta");

    const auto scheme = field<std::string>(doc, "scheme");
    config_require(scheme == "semi_implicit" || scheme == "explicit", "scheme: expected semi_implicit or explicit");
    c.scheme = scheme == "explicit" ? Scheme::explicit_euler : Scheme::semi_implicit;

    const auto kind = field<std::string>(doc, "kernel.kind");
    if (kind == "exponential") c.kernel.kind = KernelKind::exponential;
    else if (kind == "space_average") c.kernel.kind = KernelKind::space_average;
    else if (kind == "moving_average") c.kernel.kind = KernelKind::moving_average;
    else if (kind == "tabulated") c.kernel.kind = KernelKind::tabulated;
    else throw ConfigError("kernel.kind: expected exponential, space_average, moving_average or tabulated");
    c.kernel.rho1 = field<double>(doc, "kernel.rho1");
    c.kernel.rho2 = field<double>(doc, "kernel.rho2");
    c.kernel.theta = field<double>(doc, "kernel.theta");
    c.kernel.scale = field<double>(doc, "kernel.scale");
    c.kernel.delta = doc["kernel"]["delta"].is_null() ? c.delay : field<double>(doc, "kernel.delta");
    config_require(c.kernel.theta >= 0.0, "kernel.theta: must be >= 0");
    config_require(c.kernel.delta >= 0.0, "kernel.delta: must be >= 0");
    if (c.kernel.kind != KernelKind::space_average) {
        config_require(c.kernel.delta > 0.0, "kernel.delta: must be positive for time-integrating kernels");
        detail::config_multiple(c.kernel.delta, c.dt, "kernel.delta");
        config_require(c.kernel.delta <= c.delay + 1e-12, "kernel.delta: must not exceed time.delta");
    } else {
        config_require(c.kernel.theta > 0.0, "kernel.theta: space_average needs theta > 0");
    }
    if (c.kernel.kind == KernelKind::tabulated) {
        config_require(doc["kernel"]["table"].is_string(), "kernel.table: tabulated kernels need a CSV path");
        c.kernel_table = field<std::string>(doc, "kernel.table");
    }

    c.levy.intensity = field<double>(doc, "levy.intensity");
    c.levy.marks = field<std::vector<double>>(doc, "levy.marks");
    c.levy.probs = field<std::vector<double>>(doc, "levy.probs");
    try {
        c.levy.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("levy: ") + e.what());
    }

    c.coefficient_set = field<std::string>(doc, "coefficients.name");
    {
        const auto names = builtin_coefficient_sets();
        if (std::find(names.begin(), names.end(), c.coefficient_set) == names.end()) {
            std::string list;
            for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
            throw ConfigError("coefficients.name: unknown set '" + c.coefficient_set + "' (built-ins: " + list + ")");
        }
    }
    auto& h = c.harvest;
    h.gamma1 = field<double>(doc, "coefficients.gamma1");
    h.gamma2 = field<double>(doc, "coefficients.gamma2");
    h.gamma3 = field<double>(doc, "coefficients.gamma3");
    h.gamma4 = field<double>(doc, "coefficients.gamma4");
    h.gamma5 = field<std::vector<double>>(doc, "coefficients.gamma5");
    h.k = detail::profile_from(doc, "coefficients.k");
    h.beta = field<double>(doc, "coefficients.beta");
    if (c.coefficient_set.rfind("harvest", 0) == 0) {
        config_require(h.gamma5.empty() || h.gamma5.size() == c.levy.mark_count(),
                       "coefficients.gamma5: need one value per mark");
    }
    if (c.coefficient_set == "harvest_power") {
        config_require(h.beta > 0.0 && h.beta < 1.0, "coefficients.beta: must lie in (0, 1)");
    }
    auto& l = c.linear;
    l.a0 = field<double>(doc, "coefficients.a0");
    l.a1 = field<double>(doc, "coefficients.a1");
    l.a2 = field<double>(doc, "coefficients.a2");
    l.a3 = field<double>(doc, "coefficients.a3");
    l.s0 = field<double>(doc, "coefficients.s0");
    l.s1 = field<double>(doc, "coefficients.s1");
    l.c1 = field<double>(doc, "coefficients.c1");
    l.reward_x = field<double>(doc, "coefficients.reward_x");
    l.weight_u = field<double>(doc, "coefficients.weight_u");
    l.u_ref = field<double>(doc, "coefficients.u_ref");
    l.reward_ubar = field<double>(doc, "coefficients.reward_ubar");
    l.k = h.k;
    auto& g = c.logistic;
    g.growth = field<double>(doc, "coefficients.growth");
    g.crowding = field<double>(doc, "coefficients.crowding");
    g.volatility = field<double>(doc, "coefficients.volatility");
    g.jump_scale = field<double>(doc, "coefficients.jump_scale");
    g.cost = field<double>(doc, "coefficients.cost");
    g.k = h.k;

    c.initial = detail::profile_from(doc, "initial");
    c.boundary_value = field<double>(doc, "boundary.value");
    const auto box = field<std::vector<double>>(doc, "control.box");
    config_require(box.size() == 2 && box[0] <= box[1], "control.box: expected [lo, hi] with lo <= hi");
    c.box = {box[0], box[1]};
    c.initial_control = field<double>(doc, "control.initial");
    config_require(c.box.contains(c.initial_control), "control.initial: must lie inside control.box");
    if (c.coefficient_set == "harvest_log") config_require(c.box.lo > 0.0, "control.box: log utility needs lo > 0");

    if (doc.contains("seed") && !doc["seed"].is_null()) c.seed = field<std::uint64_t>(doc, "seed");
    const auto paths = field<long long>(doc, "paths");
    config_require(paths >= 1, "paths: must be >= 1");
    c.paths = static_cast<std::size_t>(paths);
    const auto mode = field<std::string>(doc, "mode");
    config_require(mode == "deterministic" || mode == "monte_carlo", "mode: expected deterministic or monte_carlo");
    c.monte_carlo = mode == "monte_carlo";

    c.picard.tol = field<double>(doc, "picard.tol");
    c.picard.max_iter = field<std::size_t>(doc, "picard.max_iter");
    c.picard.ridge = field<double>(doc, "picard.ridge");
    c.picard.lipschitz_probes = field<std::size_t>(doc, "picard.lipschitz_probes");
    config_require(c.picard.tol > 0.0, "picard.tol: must be positive");
    config_require(c.picard.max_iter >= 1, "picard.max_iter: must be >= 1");

    c.optimize.step_size = field<double>(doc, "optimize.step_size");
    c.optimize.iterations = field<std::size_t>(doc, "optimize.iterations");
    c.optimize.gradient_tol = field<double>(doc, "optimize.gradient_tol");
    config_require(c.optimize.step_size >= 0.0, "optimize.step_size: must be >= 0");

    c.output_dir = field<std::string>(doc, "output_dir");
    const auto threads = field<long long>(doc, "threads");
    config_require(threads >= 0, "threads: must be >= 0");
    c.threads = static_cast<unsigned>(threads);
    c.effective = doc;
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": JSON parse error: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

/// Shipped desk configurations, identical to configs/<name>.json.
inline json desk_config_json(const std::string& name) {
    if (name == "desk_1d") {
        return json::parse(R"({
  "name": "desk_1d",
  "mesh": {"dim": 1, "extents": [4.0], "nodes": [33]},
  "operator": {"type": "half_laplacian"},
  "time": {"T": 1.0, "delta": 0.2, "dt": 0.01},
  "scheme": "semi_implicit",
  "kernel": {"kind": "moving_average", "delta": 0.2, "scale": 1.0},
  "levy": {"intensity": 2.0, "marks": [-0.1, 0.1], "probs": [0.5, 0.5]},
  "coefficients": {
    "name": "harvest_power",
    "gamma1": 1.0, "gamma2": 0.5, "gamma3": 0.3, "gamma4": 0.2, "gamma5": [-0.2, 0.2],
    "k": {"base": 1.0, "sine_amplitude": 0.5},
    "beta": 0.5
  },
  "initial": {"base": 1.0, "sine_amplitude": 0.5},
  "boundary": {"value": 1.0},
  "control": {"box": [0.01, 3.0], "initial": 0.5},
  "seed": 20240611,
  "paths": 1000,
  "mode": "deterministic",
  "picard": {"tol": 1e-8, "max_iter": 50},
  "optimize": {"step_size": 0.5, "iterations": 50, "gradient_tol": 1e-8},
  "output_dir": "stic_out/desk_1d"
})");
    }
    if (name == "desk_2d") {
        return json::parse(R"({
  "name": "desk_2d",
  "mesh": {"dim": 2, "extents": [4.0, 4.0], "nodes": [17, 17]},
  "operator": {"type": "half_laplacian"},
  "time": {"T": 1.0, "delta": 0.2, "dt": 0.01},
  "scheme": "semi_implicit",
  "kernel": {"kind": "exponential", "rho1": 1.0, "rho2": 1.0, "theta": 0.6, "delta": 0.2, "scale": 1.0},
  "levy": {"intensity": 2.0, "marks": [-0.1, 0.1], "probs": [0.5, 0.5]},
  "coefficients": {
    "name": "harvest_log",
    "gamma1": 1.0, "gamma2": 0.5, "gamma3": 0.3, "gamma4": 0.2, "gamma5": [-0.2, 0.2],
    "k": {"base": 1.0, "sine_amplitude": 0.5}
  },
  "initial": {"base": 1.0, "sine_amplitude": 0.5},
  "boundary": {"value": 1.0},
  "control": {"box": [0.01, 3.0], "initial": 0.5},
  "seed": 20240611,
  "paths": 200,
  "mode": "deterministic",
  "picard": {"tol": 1e-8, "max_iter": 50},
  "optimize": {"step_size": 0.5, "iterations": 50, "gradient_tol": 1e-8},
  "output_dir": "stic_out/desk_2d"
})");
    }
    throw ConfigError("unknown desk configuration '" + name + "' (built-ins: desk_1d, desk_2d)");
}

inline ExperimentConfig desk_config(const std::string& name) { return parse_config(desk_config_json(name)); }

/// Effective seed: explicit override, then the config, then $STIC_SEED, then 0.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& override_seed, const ExperimentConfig& cfg) {
    if (override_seed) return *override_seed;
    if (cfg.seed) return *cfg.seed;
    if (const char* env = std::getenv("STIC_SEED")) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError("STIC_SEED: expected a nonnegative integer");
    }
    return 0;
}

inline MeshPtr build_mesh(const ExperimentConfig& c) { return build_mesh(c.dim, c.extents, c.nodes); }

inline TimeGrid build_time_grid(const ExperimentConfig& c) { return make_time_grid(c.horizon, c.delay, c.dt); }

inline EllipticOperator build_operator(const ExperimentConfig& c, MeshPtr mesh) {
    if (c.operator_type == "half_laplacian") return EllipticOperator::half_laplacian(mesh);
    if (c.operator_type == "zero") return EllipticOperator::zero(mesh);
    const int dim = c.dim;
    const double a = c.operator_alpha;
    const auto b = c.operator_beta;
    return EllipticOperator::from_functions(mesh, [dim, a, b](std::array<double, 2>) {
        EllipticOperator::NodeCoefficients nc;
        nc.alpha = {a, 0.0, 0.0, dim == 2 ? a : 0.0};
        nc.beta = {b[0], dim == 2 ? b[1] : 0.0};
        return nc;
    });
}

inline CoefficientSet build_coefficients(const ExperimentConfig& c, MeshPtr mesh) {
    if (c.coefficient_set == "harvest_log") return harvest_log(c.harvest, c.levy, mesh);
    if (c.coefficient_set == "harvest_power") return harvest_power(c.harvest, c.levy, mesh);
    if (c.coefficient_set == "linear_generic") return linear_generic(c.linear, mesh);
    if (c.coefficient_set == "logistic_nonlocal") return logistic_nonlocal(c.logistic, mesh);
    throw ConfigError("coefficients.name: unknown set '" + c.coefficient_set + "'");
}

inline DiscreteKernel build_kernel(const ExperimentConfig& c, MeshPtr mesh, const TimeGrid& grid) {
    KernelSpec spec = c.kernel;
    if (spec.kind == KernelKind::tabulated) {
        std::filesystem::path p(c.kernel_table);
        if (p.is_relative() && !c.base_dir.empty()) p = c.base_dir / p;
        spec.table = load_tabulated_kernel(p.string(), c.dim);
    }
    return build_kernel(spec, std::move(mesh), grid);
}

/// Assembles the problem and validates the coefficient partials against finite differences.
inline Problem build_problem(const ExperimentConfig& c) {
    try {
        MeshPtr mesh = build_mesh(c);
        const TimeGrid grid = build_time_grid(c);
        DiscreteKernel kernel = build_kernel(c, mesh, grid);
        CoefficientSet coeffs = build_coefficients(c, mesh);
        validate_partials(coeffs, c.levy, c.box, *mesh);
        const Profile init = c.initial;
        TimePath history = make_history(mesh, grid, [&](double, std::array<double, 2> x) { return init(x, *mesh); });
        const double bv = c.boundary_value;
        TimePath boundary = make_boundary(mesh, grid, [bv](double, std::array<double, 2>) { return bv; });
        return Problem(build_operator(c, mesh), std::move(kernel), std::move(coeffs), c.levy, c.box,
                       std::move(history), std::move(boundary), c.scheme);
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

inline ControlPath initial_control(const ExperimentConfig& c, const Problem& pr) {
    return constant_control(pr.mesh_ptr(), pr.grid(), c.box, c.initial_control);
}

inline SamplingPlan sampling_plan(const ExperimentConfig& c, std::uint64_t seed) {
    return {seed, c.paths, !c.monte_carlo, c.threads};
}

}  // namespace stic
