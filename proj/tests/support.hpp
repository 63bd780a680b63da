#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "stic/cli.hpp"
#include "stic/stic.hpp"

namespace stic::fixture {

/// Coefficient set with every model function identically zero; terminal gradient = profile.
inline CoefficientSet inert_coefficients(std::function<double(std::array<double, 2>)> terminal_gradient = {}) {
    CoefficientSet c;
    c.name = "inert";
    c.drift = Coefficient::zero();
    c.diffusion = Coefficient::zero();
    c.jump = JumpCoefficient::zero();
    c.reward = Coefficient::zero();
    if (!terminal_gradient) terminal_gradient = [](std::array<double, 2>) { return 0.0; };
    c.terminal = {[terminal_gradient](std::size_t, std::array<double, 2> x, double X) { return terminal_gradient(x) * X; },
                  [terminal_gradient](std::size_t, std::array<double, 2> x, double) { return terminal_gradient(x); }};
    c.linear_in_state = true;
    return c;
}

inline double sin_pi(std::array<double, 2> x) { return std::sin(M_PI * x[0]); }

/// Pure 1/2 Laplacian on (0, 1) with zero Dirichlet data and initial profile sin(pi x).
inline Problem heat_problem(std::size_t cells, double dt, double horizon, Scheme scheme = Scheme::semi_implicit) {
    const MeshPtr mesh = build_mesh(1, {1.0}, {cells + 1});
    const TimeGrid grid = make_time_grid(horizon, dt, dt);
    KernelSpec ks;
    ks.kind = KernelKind::moving_average;
    ks.delta = dt;
    return Problem(EllipticOperator::half_laplacian(mesh), build_kernel(ks, mesh, grid), inert_coefficients(sin_pi),
                   LevySpec{}, ControlBox{0.0, 1.0}, make_history(mesh, grid, [](double, auto x) { return sin_pi(x); }),
                   make_boundary(mesh, grid, [](double, auto) { return 0.0; }), scheme);
}

/// Discrete L2 distance between row n of a path and a function of position.
inline double l2_error(const TimePath& x, long n, const std::function<double(std::array<double, 2>)>& exact) {
    const Mesh& m = x.mesh();
    double s = 0.0;
    for (std::size_t i : m.interior()) {
        const double d = x[n][i] - exact(m.position(i));
        s += d * d;
    }
    return std::sqrt(s * m.cell_volume());
}

/// Heat benchmark error at T against exp(-pi^2 T / 2) sin(pi x).
inline double heat_error(std::size_t cells, double dt, double horizon) {
    const Problem pr = heat_problem(cells, dt, horizon);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.0);
    const StatePath x = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    const double decay = std::exp(-0.5 * M_PI * M_PI * horizon);
    return l2_error(x.X, pr.grid().last(), [decay](auto p) { return decay * sin_pi(p); });
}

inline double observed_order(double coarse_err, double fine_err, double ratio = 2.0) {
    return std::log(coarse_err / fine_err) / std::log(ratio);
}

/// Desk-like 1D setup shrunk for fast unit tests.
inline json quick_config_json(const std::string& coefficient_set) {
    json doc = desk_config_json("desk_1d");
    doc["mesh"]["nodes"] = {9};
    doc["time"] = {{"T", 0.3}, {"delta", 0.05}, {"dt", 0.01}};
    doc["kernel"]["delta"] = 0.05;
    doc["coefficients"]["name"] = coefficient_set;
    doc["paths"] = 50;
    return doc;
}

inline ExperimentConfig quick_config(const std::string& coefficient_set) {
    return parse_config(quick_config_json(coefficient_set));
}

/// Sup-norm gaps |(X^eps - X) / eps - Z| for each eps, one common noise realization.
inline std::vector<double> variation_gaps(const Problem& pr, const ControlPath& u, const ControlPath& v,
                                          const NoiseRealization& noise, const std::vector<double>& eps) {
    const StatePath base = simulate_forward(pr, u, noise);
    const TimePath z = simulate_variation(pr, base, u, v, noise);
    std::vector<double> gaps;
    for (double e : eps) {
        ControlPath ue = u;
        for (std::size_t k = 0; k < ue.values.raw().size(); ++k) ue.values.raw()[k] += e * v.values.raw()[k];
        const StatePath xe = simulate_forward(pr, ue, noise);
        double gap = 0.0;
        for (std::size_t k = 0; k < z.raw().size(); ++k)
            gap = std::max(gap, std::abs((xe.X.raw()[k] - base.X.raw()[k]) / e - z.raw()[k]));
        gaps.push_back(gap);
    }
    return gaps;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = std::log(x[i]), b = std::log(y[i]);
        sx += a, sy += b, sxx += a * a, sxy += a * b;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("stic_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

/// Runs the CLI in-process with captured streams.
struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

inline CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "stic");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

}  // namespace stic::fixture
