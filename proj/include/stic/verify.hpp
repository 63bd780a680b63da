#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stic/adjoint.hpp"
#include "stic/config.hpp"
#include "stic/control.hpp"
#include "stic/forward.hpp"
#include "stic/io.hpp"
#include "stic/kernel.hpp"
#include "stic/mesh.hpp"
#include "stic/model.hpp"
#include "stic/noise.hpp"
#include "stic/scenario.hpp"

namespace stic {

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    std::size_t paths = 200;  ///< Monte Carlo paths for the stochastic checks
    unsigned threads = 1;
};

namespace verify_detail {

using Rng = std::mt19937_64;

inline Field random_interior_field(const MeshPtr& mesh, Rng& rng) {
    std::normal_distribution<double> nd;
    Field f(mesh);
    for (std::size_t i : mesh->interior()) f[i] = nd(rng);
    return f;
}

inline TimePath random_path(const MeshPtr& mesh, long first, long last, Rng& rng) {
    std::normal_distribution<double> nd;
    TimePath x(mesh, first, last);
    for (double& v : x.raw()) v = nd(rng);
    return x;
}

inline EllipticOperator variable_operator(const MeshPtr& mesh) {
    const int dim = mesh->dim();
    return EllipticOperator::from_functions(mesh, [dim](std::array<double, 2> x) {
        EllipticOperator::NodeCoefficients c;
        if (dim == 1) {
            c.alpha = {0.5 + 0.3 * x[0], 0.0, 0.0, 0.0};
            c.beta = {0.2 * std::cos(3.0 * x[0]), 0.0};
        } else {
            c.alpha = {0.6 + 0.2 * x[0], 0.1, 0.1, 0.5 + 0.2 * x[1]};
            c.beta = {0.3, -0.2 + 0.1 * x[0]};
        }
        return c;
    });
}

/// Random tabulated density with lags in [0, window) and offsets within two cells.
inline KernelSpec random_tabulated(const Mesh& m, const TimeGrid& g, std::size_t window, Rng& rng) {
    std::uniform_int_distribution<std::size_t> lag(0, window - 1);
    std::uniform_int_distribution<int> off(-2, 2);
    std::uniform_int_distribution<int> count(1, 12);
    std::uniform_real_distribution<double> q(-1.0, 2.0);
    KernelSpec s;
    s.kind = KernelKind::tabulated;
    s.delta = static_cast<double>(window) * g.dt;
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
        TabulatedEntry e;
        e.t_lag = static_cast<double>(lag(rng)) * g.dt;
        for (int a = 0; a < m.dim(); ++a) e.offset[static_cast<std::size_t>(a)] = off(rng) * m.spacing(a);
        e.q = q(rng);
        s.table.push_back(e);
    }
    return s;
}

/// The three parametric kinds on the given mesh, with balls of 2.5 cells.
inline std::vector<KernelSpec> parametric_kernels(const Mesh& m, double delta) {
    double h = m.spacing(0);
    if (m.dim() == 2) h = std::max(h, m.spacing(1));
    KernelSpec e;
    e.kind = KernelKind::exponential;
    e.theta = 2.5 * h;
    e.delta = delta;
    KernelSpec s;
    s.kind = KernelKind::space_average;
    s.theta = 2.5 * h;
    KernelSpec a;
    a.kind = KernelKind::moving_average;
    a.delta = delta;
    return {e, s, a};
}

inline double kernel_bound_violation(const DiscreteKernel& k, std::size_t paths, Rng& rng) {
    const auto& g = k.grid();
    double worst = 0.0;
    for (std::size_t s = 0; s < paths; ++s) {
        const TimePath x = random_path(k.mesh_ptr(), -static_cast<long>(g.history), g.last(), rng);
        const double lhs = space_time_norm(k.apply(x), 0, g.last(), g.dt);
        const double rhs = std::sqrt(k.bound_M()) * space_time_norm(x, x.first(), x.last(), g.dt);
        worst = std::max(worst, lhs / rhs);
    }
    return worst;
}

/// Dense matrices of S and S* on a small grid, compared entrywise.
inline double dual_transpose_error(const DiscreteKernel& k) {
    const auto& g = k.grid();
    const Mesh& m = k.mesh();
    const long first = -static_cast<long>(g.history);
    const long in_rows = g.last() - first + 1;
    const long out_rows = g.last() + 1;
    const std::size_t nn = m.size();
    const std::size_t nin = static_cast<std::size_t>(in_rows) * nn;
    const std::size_t nout = static_cast<std::size_t>(out_rows) * nn;
    std::vector<double> fwd(nout * nin), dual(nin * nout);
    for (std::size_t c = 0; c < nin; ++c) {
        TimePath e(k.mesh_ptr(), first, g.last());
        e.raw()[c] = 1.0;
        const TimePath col = k.apply(e);
        for (std::size_t r = 0; r < nout; ++r) fwd[r * nin + c] = col.raw()[r];
    }
    for (std::size_t c = 0; c < nout; ++c) {
        TimePath e(k.mesh_ptr(), 0, g.last());
        e.raw()[c] = 1.0;
        const TimePath col = k.apply_dual(e);
        for (std::size_t r = 0; r < nin; ++r) dual[r * nout + c] = col.raw()[r];
    }
    double err = 0.0, scale = 0.0;
    for (std::size_t r = 0; r < nout; ++r) {
        for (std::size_t c = 0; c < nin; ++c) {
            err = std::max(err, std::abs(fwd[r * nin + c] - dual[c * nout + r]));
            scale = std::max(scale, std::abs(fwd[r * nin + c]));
        }
    }
    return err / std::max(scale, 1e-300);
}

inline double path_distance(const TimePath& a, const TimePath& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.raw().size(); ++i) d = std::max(d, std::abs(a.raw()[i] - b.raw()[i]));
    return d;
}

inline bool bit_identical(const TimePath& a, const TimePath& b) {
    return a.raw().size() == b.raw().size() && std::equal(a.raw().begin(), a.raw().end(), b.raw().begin());
}

inline CoefficientSet coefficient_set(const ExperimentConfig& cfg, const std::string& name, MeshPtr mesh) {
    ExperimentConfig c = cfg;
    c.coefficient_set = name;
    return build_coefficients(c, std::move(mesh));
}

/// Problem used by the control checks: the configured one if it has a feedback law,
/// otherwise the same setup with the harvest_power coefficient set.
inline ExperimentConfig harvest_config(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    if (c.coefficient_set != "harvest_log" && c.coefficient_set != "harvest_power") {
        c.coefficient_set = "harvest_power";
        if (c.harvest.gamma5.size() != c.levy.mark_count()) c.harvest.gamma5.assign(c.levy.mark_count(), 0.5);
    }
    return c;
}

inline TimePath random_direction(const Problem& pr, Rng& rng, const ControlPath* mask = nullptr) {
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    TimePath v(pr.mesh_ptr(), -static_cast<long>(pr.grid().history), pr.grid().last());
    for (long n = 0; n < pr.grid().last(); ++n) {
        for (std::size_t i : pr.mesh().interior()) {
            if (mask) {
                const double u = mask->values[n][i];
                if (u <= pr.box().lo || u >= pr.box().hi) continue;
            }
            v[n][i] = ud(rng);
        }
    }
    return v;
}

/// dt * vol weighted l1 norm, the dual of the sup norm used for gradient entries.
inline double direction_norm(const Problem& pr, const TimePath& v) {
    double s = 0.0;
    for (long n = 0; n <= pr.grid().last(); ++n)
        for (std::size_t i : pr.mesh().interior()) s += std::abs(v[n][i]);
    return s * pr.grid().dt * pr.mesh().cell_volume();
}

/// Largest eps in {1e-2, ...} keeping u +- eps v inside the box, scaled down as needed.
inline std::vector<double> fd_steps(const ControlPath& u, const TimePath& v) {
    std::vector<double> eps{1e-2, 5e-3, 2.5e-3};
    while (!detail::shifted_in_box(u, v, eps.front())) {
        for (double& e : eps) e *= 0.5;
        if (eps.front() < 1e-8) break;
    }
    return eps;
}

}  // namespace verify_detail

// --------------------------------------------------------------------------------------
// mesh

inline CheckResult check_green_identity(const MeshPtr& mesh, std::uint64_t seed, std::size_t pairs = 100) {
    verify_detail::Rng rng(seed);
    double worst = 0.0;
    for (const auto& op : {EllipticOperator::half_laplacian(mesh), verify_detail::variable_operator(mesh)}) {
        const double norm = operator_norm(op);
        for (std::size_t k = 0; k < pairs; ++k) {
            const Field phi = verify_detail::random_interior_field(mesh, rng);
            const Field psi = verify_detail::random_interior_field(mesh, rng);
            const double lhs = inner_product_h(apply_operator(op, phi), psi);
            const double rhs = inner_product_h(phi, apply_adjoint_operator(op, psi));
            worst = std::max(worst, std::abs(lhs - rhs) / (norm_h(phi) * norm_h(psi) * norm));
        }
    }
    return {"mesh.green_identity", worst <= 1e-12, worst, 1e-12, "half-Laplacian and variable-coefficient operator"};
}

inline CheckResult check_coercivity(const EllipticOperator& op, std::uint64_t seed, std::size_t samples = 100) {
    verify_detail::Rng rng(seed);
    const CoercivityConstants cc = measure_coercivity(op);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const Field u = verify_detail::random_interior_field(op.mesh_ptr(), rng);
        const double nv = norm_v(u);
        const double lhs = 2.0 * inner_product_h(apply_operator(op, u), u) + cc.alpha1 * nv * nv;
        const double rhs = cc.alpha2 * inner_product_h(u, u);
        worst = std::max(worst, (lhs - rhs) / std::max(rhs, 1e-300));
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "alpha1=%.6g alpha2=%.6g", cc.alpha1, cc.alpha2);
    return {"mesh.coercivity", worst <= 1e-10, worst, 1e-10, buf};
}

inline CheckResult check_operator_linearity(const EllipticOperator& op, std::uint64_t seed) {
    verify_detail::Rng rng(seed);
    std::normal_distribution<double> nd;
    const MeshPtr& mesh = op.mesh_ptr();
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        const Field f = verify_detail::random_interior_field(mesh, rng);
        const Field g = verify_detail::random_interior_field(mesh, rng);
        const double a = nd(rng), b = nd(rng);
        Field comb(mesh);
        for (std::size_t i = 0; i < comb.size(); ++i) comb[i] = a * f[i] + b * g[i];
        for (int adj = 0; adj < 2; ++adj) {
            auto apply = [&](const Field& x) { return adj ? apply_adjoint_operator(op, x) : apply_operator(op, x); };
            const Field lhs = apply(comb);
            const Field af = apply(f), ag = apply(g);
            double scale = 1.0;
            for (std::size_t i = 0; i < lhs.size(); ++i) scale = std::max(scale, std::abs(a * af[i]) + std::abs(b * ag[i]));
            for (std::size_t i = 0; i < lhs.size(); ++i)
                worst = std::max(worst, std::abs(lhs[i] - a * af[i] - b * ag[i]) / scale);
        }
    }
    return {"mesh.operator_linearity", worst <= 1e-13, worst, 1e-13, "apply_operator and apply_adjoint_operator"};
}

// --------------------------------------------------------------------------------------
// kernel

inline CheckResult check_kernel_bound(const ExperimentConfig& cfg, const MeshPtr& mesh, const TimeGrid& grid,
                                      std::uint64_t seed, std::size_t tabulated, std::size_t paths) {
    verify_detail::Rng rng(seed);
    std::vector<KernelSpec> specs = verify_detail::parametric_kernels(*mesh, cfg.delay);
    specs.push_back(cfg.kernel);
    if (cfg.kernel.kind == KernelKind::tabulated) specs.pop_back();
    const std::size_t window = grid.history;
    for (std::size_t t = 0; t < tabulated; ++t) specs.push_back(verify_detail::random_tabulated(*mesh, grid, window, rng));
    double worst = 0.0;
    for (const auto& s : specs) worst = std::max(worst, verify_detail::kernel_bound_violation(build_kernel(s, mesh, grid), paths, rng));
    const double thr = 1.0 + 1e-10;
    return {"kernel.operator_bound", worst <= thr, worst, thr,
            std::to_string(specs.size()) + " kernels x " + std::to_string(paths) + " paths; value = max |S X| / (sqrt(M) |X|)"};
}

inline CheckResult check_kernel_linearity(const DiscreteKernel& k, std::uint64_t seed) {
    verify_detail::Rng rng(seed);
    std::normal_distribution<double> nd;
    const auto& g = k.grid();
    const long first = -static_cast<long>(g.history);
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        const TimePath x = verify_detail::random_path(k.mesh_ptr(), first, g.last(), rng);
        const TimePath y = verify_detail::random_path(k.mesh_ptr(), first, g.last(), rng);
        const double a = nd(rng), b = nd(rng);
        TimePath comb(k.mesh_ptr(), first, g.last());
        for (std::size_t i = 0; i < comb.raw().size(); ++i) comb.raw()[i] = a * x.raw()[i] + b * y.raw()[i];
        const TimePath sc = k.apply(comb), sx = k.apply(x), sy = k.apply(y);
        double scale = 1e-300;
        for (std::size_t i = 0; i < sc.raw().size(); ++i)
            scale = std::max(scale, std::abs(a * sx.raw()[i]) + std::abs(b * sy.raw()[i]));
        for (std::size_t i = 0; i < sc.raw().size(); ++i)
            worst = std::max(worst, std::abs(sc.raw()[i] - a * sx.raw()[i] - b * sy.raw()[i]) / scale);
    }
    return {"kernel.linearity", worst <= 1e-12, worst, 1e-12, "S(aX + bY) = aS(X) + bS(Y)"};
}

/// Dense transpose comparison on a 5-node, 4-step grid for every kind plus random tables.
inline CheckResult check_kernel_dual_transpose(std::uint64_t seed, int dim = 1) {
    verify_detail::Rng rng(seed);
    const MeshPtr mesh = dim == 1 ? build_mesh(1, {1.0}, {5}) : build_mesh(2, {1.0, 1.0}, {5, 5});
    const TimeGrid grid = make_time_grid(0.4, 0.2, 0.1);
    std::vector<KernelSpec> specs = verify_detail::parametric_kernels(*mesh, 0.2);
    for (int t = 0; t < 5; ++t) specs.push_back(verify_detail::random_tabulated(*mesh, grid, grid.history, rng));
    double worst = 0.0;
    for (const auto& s : specs) worst = std::max(worst, verify_detail::dual_transpose_error(build_kernel(s, mesh, grid)));
    return {"kernel.dual_transpose", worst <= 1e-12, worst, 1e-12, "dense S^T vs S*, 5 nodes x 4 steps"};
}

inline CheckResult check_one_step_window(const MeshPtr& mesh, const TimeGrid& grid, std::uint64_t seed) {
    verify_detail::Rng rng(seed);
    KernelSpec s;
    s.kind = KernelKind::moving_average;
    s.delta = grid.dt;
    const DiscreteKernel k = build_kernel(s, mesh, grid);
    const TimePath x = verify_detail::random_path(mesh, -static_cast<long>(grid.history), grid.last(), rng);
    const TimePath sx = k.apply(x);
    double worst = 0.0;
    for (long n = 0; n <= grid.last(); ++n)
        for (std::size_t i : mesh->interior()) worst = std::max(worst, std::abs(sx[n][i] - x[n][i] * grid.dt));
    return {"kernel.one_step_window", worst <= 1e-15, worst, 1e-15, "S(X) = X dt for a one-step window"};
}

/// Constants: space average returns c wherever the ball stays inside; moving average returns c delta.
inline CheckResult check_kernel_reductions(const MeshPtr& mesh, const TimeGrid& grid) {
    const double c = 1.7;
    const Mesh& m = *mesh;
    double h = m.spacing(0);
    if (m.dim() == 2) h = std::max(h, m.spacing(1));
    KernelSpec sa;
    sa.kind = KernelKind::space_average;
    sa.theta = 2.5 * h;
    const DiscreteKernel ks = build_kernel(sa, mesh, grid);
    const TimePath x(mesh, -static_cast<long>(grid.history), grid.last(), c);
    const TimePath sx = ks.apply(x);
    double worst = 0.0;
    const int reach = 2;
    for (std::size_t i : m.interior()) {
        const auto ci = m.coords(i);
        bool inside = true;
        for (int a = 0; a < m.dim(); ++a) {
            const auto ia = static_cast<std::size_t>(a);
            inside = inside && ci[ia] > static_cast<std::size_t>(reach) && ci[ia] + reach + 1 < m.nodes(a);
        }
        if (!inside) continue;
        for (long n = 0; n <= grid.last(); ++n) worst = std::max(worst, std::abs(sx[n][i] - c));
    }
    KernelSpec ma;
    ma.kind = KernelKind::moving_average;
    ma.delta = static_cast<double>(grid.history) * grid.dt;
    const DiscreteKernel km = build_kernel(ma, mesh, grid);
    const TimePath mx = km.apply(x);
    for (long n = 0; n <= grid.last(); ++n)
        for (std::size_t i : m.interior()) worst = std::max(worst, std::abs(mx[n][i] - c * ma.delta));
    return {"kernel.reductions", worst <= 1e-12, worst, 1e-12, "space_average fixes constants; moving_average gives c*delta"};
}

// --------------------------------------------------------------------------------------
// noise

inline CheckResult check_martingale(const LevySpec& levy, const TimeGrid& grid, std::uint64_t seed, std::size_t paths) {
    if (levy.mark_count() == 0 || levy.intensity == 0.0)
        return {"noise.martingale", true, 0.0, 4.0, "no jumps configured"};
    std::vector<double> ends(paths);
    for (std::size_t s = 0; s < paths; ++s) {
        const NoiseRealization nz = sample_noise(levy, grid, seed, s);
        double acc = 0.0;
        for (std::size_t k = 0; k < grid.steps; ++k)
            for (std::size_t j = 0; j < nz.marks; ++j) acc += levy.marks[j] * nz.centered(k, j);
        ends[s] = acc;
    }
    double mean = 0.0;
    const double se = detail::mean_stderr(ends, mean);
    const double z = se > 0.0 ? std::abs(mean) / se : 0.0;
    return {"noise.martingale", z <= 4.0, z, 4.0, "|mean| / stderr of the compensated sum at T"};
}

inline CheckResult check_stream_independence(const LevySpec& levy, const TimeGrid& grid, std::uint64_t seed,
                                             std::size_t paths) {
    if (levy.mark_count() == 0 || levy.intensity == 0.0)
        return {"noise.stream_independence", true, 0.0, 0.0, "no jumps configured"};
    double worst = 0.0, floor = 0.0;
    for (std::size_t j = 0; j < levy.mark_count(); ++j) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        double n = 0;
        for (std::size_t s = 0; s < paths; ++s) {
            const NoiseRealization nz = sample_noise(levy, grid, seed, s);
            for (std::size_t k = 0; k < grid.steps; ++k) {
                const double x = nz.brownian(k), y = nz.centered(k, j);
                sx += x, sy += y, sxx += x * x, syy += y * y, sxy += x * y, n += 1;
            }
        }
        const double cov = sxy / n - sx / n * sy / n;
        const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
        worst = std::max(worst, std::abs(corr));
        floor = 4.0 / std::sqrt(n);
    }
    return {"noise.stream_independence", worst <= floor, worst, floor, "|corr(dB, centered counts)| vs 4/sqrt(samples)"};
}

// --------------------------------------------------------------------------------------
// model

inline CheckResult check_model_partials(const ExperimentConfig& cfg, const MeshPtr& mesh, std::uint64_t seed) {
    double worst = 0.0;
    std::string where;
    for (const auto& name : builtin_coefficient_sets()) {
        ExperimentConfig c = verify_detail::harvest_config(cfg);
        const CoefficientSet set = verify_detail::coefficient_set(c, name, mesh);
        const PartialsCheck pc = check_partials(set, cfg.levy, cfg.box, *mesh, 1000, seed);
        if (pc.max_relative_error >= worst) {
            worst = pc.max_relative_error;
            where = name + ":" + pc.worst;
        }
    }
    return {"model.partials", worst <= 1e-6, worst, 1e-6, "1000 probes per built-in set; worst " + where};
}

/// Midpoint concavity in u of H at random states, costates and control pairs.
inline CheckResult check_model_concavity(const ExperimentConfig& cfg, const MeshPtr& mesh, std::uint64_t seed) {
    verify_detail::Rng rng(seed);
    std::uniform_real_distribution<double> state(0.2, 3.0), co(0.05, 3.0), sym(-1.0, 1.0);
    std::uniform_real_distribution<double> uu(cfg.box.lo, cfg.box.hi);
    std::uniform_int_distribution<std::size_t> node(0, mesh->interior().size() - 1);
    double worst = 0.0;
    for (const auto& name : builtin_coefficient_sets()) {
        const CoefficientSet set = verify_detail::coefficient_set(verify_detail::harvest_config(cfg), name, mesh);
        for (int k = 0; k < 200; ++k) {
            HamiltonianPoint pt;
            const std::size_t i = mesh->interior()[node(rng)];
            pt.args = {0.5, i, mesh->position(i), state(rng), state(rng), 0.0, uu(rng)};
            pt.p = co(rng);
            pt.q = sym(rng);
            pt.r.resize(cfg.levy.mark_count());
            for (double& r : pt.r) r = sym(rng);
            const double u1 = uu(rng), u2 = uu(rng);
            auto at = [&](double u) {
                HamiltonianPoint h = pt;
                h.args.u = u;
                return eval_hamiltonian(set, h, cfg.levy, cfg.box);
            };
            const double gap = 0.5 * (at(u1) + at(u2)) - at(0.5 * (u1 + u2));
            worst = std::max(worst, gap);
        }
    }
    return {"model.concavity_in_u", worst <= 1e-12, worst, 1e-12, "midpoint test over built-in sets"};
}

// --------------------------------------------------------------------------------------
// forward

inline CheckResult check_reproducibility(const Problem& pr, std::uint64_t seed) {
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), pr.box().mid());
    const StatePath a = simulate_forward(pr, u, sample_noise(pr.levy(), pr.grid(), seed, 3));
    const StatePath b = simulate_forward(pr, u, sample_noise(pr.levy(), pr.grid(), seed, 3));
    const bool same = verify_detail::bit_identical(a.X, b.X) && verify_detail::bit_identical(a.Xbar, b.Xbar);
    return {"forward.reproducibility", same, same ? 0.0 : 1.0, 0.0, "two runs with one seed"};
}

inline CheckResult check_deterministic_reduction(const Problem& pr, std::uint64_t seed) {
    Problem quiet = pr;
    CoefficientSet c = pr.coeffs();
    c.diffusion = Coefficient::zero();
    c.jump = JumpCoefficient::zero();
    quiet.set_coeffs(c);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), pr.box().mid());
    const StatePath a = simulate_forward(quiet, u, sample_noise(pr.levy(), pr.grid(), seed, 0));
    const StatePath b = simulate_forward(quiet, u, sample_noise(pr.levy(), pr.grid(), seed + 1, 7));
    const StatePath z = simulate_forward(quiet, u, zero_noise(pr.levy(), pr.grid()));
    const double d = std::max(verify_detail::path_distance(a.X, b.X), verify_detail::path_distance(a.X, z.X));
    return {"forward.deterministic_reduction", d == 0.0, d, 0.0, "zero sigma and gamma: output ignores the noise"};
}

/// Linear-in-state dynamics: the path mean of the spatial average at T matches the
/// noise-free solve within 4 standard errors at two path counts.
inline CheckResult check_mean_consistency(const ExperimentConfig& cfg, const Problem& pr, std::uint64_t seed,
                                          std::size_t paths) {
    Problem lin = pr;
    ExperimentConfig c = cfg;
    c.coefficient_set = "linear_generic";
    lin.set_coeffs(build_coefficients(c, pr.mesh_ptr()));
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), pr.box().mid());
    const long K = pr.grid().last();
    auto average = [&](const StatePath& s) {
        double a = 0.0;
        for (std::size_t i : pr.mesh().interior()) a += s.X[K][i];
        return a / static_cast<double>(pr.mesh().interior().size());
    };
    const double ref = average(simulate_forward(lin, u, zero_noise(pr.levy(), pr.grid())));
    double worst = 0.0;
    std::string detail;
    for (std::size_t n : {paths / 4, paths}) {
        n = std::max<std::size_t>(n, 8);
        std::vector<double> v(n);
        for (std::size_t s = 0; s < n; ++s) v[s] = average(simulate_forward(lin, u, sample_noise(pr.levy(), pr.grid(), seed, s)));
        double mean = 0.0;
        const double se = detail::mean_stderr(v, mean);
        const double z = std::abs(mean - ref) / std::max(se, 1e-300);
        worst = std::max(worst, z);
        detail += (detail.empty() ? "" : "; ") + std::to_string(n) + " paths: |err|=" + format_number(std::abs(mean - ref)) +
                  " se=" + format_number(se);
    }
    return {"forward.mean_consistency", worst <= 4.0, worst, 4.0, detail};
}

inline CheckResult check_negative_fraction(const Problem& pr, std::uint64_t seed, std::size_t paths) {
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), pr.box().mid());
    double total = 0.0;
    bool ok = true;
    for (std::size_t s = 0; s < paths; ++s) {
        const StatePath x = simulate_forward(pr, u, sample_noise(pr.levy(), pr.grid(), seed, s));
        ok = ok && x.negative_fraction >= 0.0 && x.negative_fraction <= 1.0;
        total += x.negative_fraction;
    }
    return {"forward.negative_fraction", ok, total / static_cast<double>(paths), 1.0, "mean fraction of nodes with X < 0 (reported)"};
}

// --------------------------------------------------------------------------------------
// adjoint

struct PicardRun {
    std::vector<NoiseRealization> noise;
    std::vector<StatePath> forward;
    PicardResult result;
    ControlPath control;
};

inline PicardRun run_picard(const Problem& pr, const ControlPath& u, std::uint64_t seed, std::size_t paths,
                            const PicardOptions& opt, unsigned threads) {
    PicardRun run;
    run.control = u;
    run.noise.resize(paths);
    run.forward.resize(paths);
    const TimePath ubar = control_aggregate(pr, u);
    parallel_for(paths, threads, [&](std::size_t s) {
        run.noise[s] = sample_noise(pr.levy(), pr.grid(), seed, s);
        run.forward[s] = simulate_forward(pr, u, ubar, run.noise[s]);
    });
    run.result = solve_adjoint_picard(pr, u, run.forward, run.noise, opt);
    return run;
}

inline CheckResult check_terminal_clause(const Problem& pr, const PicardRun& run) {
    const auto& g = pr.grid();
    const long K = g.last();
    double worst = 0.0;
    for (std::size_t s = 0; s < run.forward.size(); ++s) {
        const auto& a = run.result.paths[s];
        for (long n = K; n <= a.p.last(); ++n) {
            for (std::size_t i = 0; i < pr.mesh().size(); ++i) {
                const double theta = pr.mesh().on_boundary(i) ? 0.0 : pr.coeffs().terminal.derivative(i, pr.mesh().position(i), run.forward[s].X[K][i]);
                worst = std::max(worst, std::abs(a.p[n][i] - theta));
                worst = std::max(worst, std::abs(a.q[n][i]));
                for (const auto& r : a.r) worst = std::max(worst, std::abs(r[n][i]));
            }
        }
    }
    return {"adjoint.terminal_clause", worst == 0.0, worst, 0.0, "p = terminal gradient, q = r = 0 on [T, T + delta]"};
}

inline CheckResult check_boundary_clause(const Problem& pr, const PicardRun& run) {
    double worst = 0.0;
    for (const auto& a : run.result.paths)
        for (long n = 0; n < pr.grid().last(); ++n)
            for (std::size_t i : pr.mesh().boundary()) worst = std::max(worst, std::abs(a.p[n][i]));
    const AdjointPath det = solve_adjoint_deterministic(pr, simulate_forward(pr, run.control, zero_noise(pr.levy(), pr.grid())), run.control);
    for (long n = 0; n < pr.grid().last(); ++n)
        for (std::size_t i : pr.mesh().boundary()) worst = std::max(worst, std::abs(det.p[n][i]));
    return {"adjoint.boundary_clause", worst == 0.0, worst, 0.0, "p = 0 on the boundary before T (both backends)"};
}

inline CheckResult check_contraction(const PicardRun& run) {
    const auto& d = run.result.diagnostics;
    if (d.increments.size() < 3)
        return {"adjoint.contraction", d.converged, 0.0, 0.6, "converged in fewer than 3 iterations"};
    const ContractionSummary s = picard_contraction_report(d);
    const bool ok = s.geometric_mean <= 0.6 && d.converged;
    return {"adjoint.contraction", ok, s.geometric_mean, 0.6,
            "iterations=" + std::to_string(d.iterations) + " C=" + format_number(d.lipschitz) +
                " alpha3=" + format_number(d.alpha3)};
}

/// Increments must decay at least geometrically (every ratio below one until roundoff).
inline CheckResult check_factorial_envelope(const PicardRun& run) {
    const auto& d = run.result.diagnostics;
    double worst = 0.0;
    for (std::size_t k = 0; k + 1 < d.increments.size(); ++k) {
        if (d.increments[k + 1] < 1e-28) break;
        worst = std::max(worst, d.increments[k + 1] / d.increments[k]);
    }
    std::string detail = "max successive ratio";
    if (d.increments.size() >= 3) detail += picard_contraction_report(d).super_linear ? "; super-linear decay" : "; linear decay";
    return {"adjoint.factorial_envelope", worst < 1.0, worst, 1.0, detail};
}

/// Picard path mean of p against the deterministic backend. Needs a path-independent
/// terminal gradient, where q = r = 0 solves the martingale parts exactly.
inline CheckResult check_picard_agreement(const Problem& pr, const PicardRun& run) {
    const long K = pr.grid().last();
    const double n = static_cast<double>(run.result.paths.size());
    const StatePath x0 = simulate_forward(pr, run.control, zero_noise(pr.levy(), pr.grid()));
    const AdjointPath det = solve_adjoint_deterministic(pr, x0, run.control);
    double diff = 0.0, scale = 1e-300;
    for (long t = 0; t <= K; ++t) {
        for (std::size_t i : pr.mesh().interior()) {
            double m = 0.0;
            for (const auto& a : run.result.paths) m += a.p[t][i];
            diff = std::max(diff, std::abs(m / n - det.p[t][i]));
            scale = std::max(scale, std::abs(det.p[t][i]));
        }
    }
    const double rel = diff / scale;
    return {"adjoint.deterministic_agreement", rel <= 0.05, rel, 0.05,
            "relative sup |mean Picard p - deterministic p| (" + pr.coeffs().name + ")"};
}

/// Scalar linear driver F = a p with constant terminal c: p(t) = c exp(a (T - t)).
inline CheckResult check_scalar_closed_form(std::uint64_t seed, std::size_t paths, double dt = 1e-3) {
    const MeshPtr mesh = build_mesh(1, {1.0}, {3});
    KernelSpec ks;
    ks.kind = KernelKind::moving_average;
    ks.delta = dt;
    const TimeGrid kg = make_time_grid(1.0, dt, dt);
    const DiscreteKernel kernel = build_kernel(ks, mesh, kg);
    const LevySpec levy{};
    std::vector<NoiseRealization> noise(paths);
    std::vector<StatePath> fw(paths);
    for (std::size_t s = 0; s < paths; ++s) {
        noise[s] = sample_noise(levy, kg, seed, s);
        StatePath sp;
        sp.path_id = s;
        sp.X = TimePath(mesh, -1, kg.last());
        double b = 0.0;
        for (long n = 1; n <= kg.last(); ++n) {
            b += noise[s].brownian(static_cast<std::size_t>(n - 1));
            sp.X[n][1] = b;
        }
        sp.Xbar = TimePath(mesh, 0, kg.last());
        fw[s] = std::move(sp);
    }
    const double a = 1.0, c = 1.0;
    PicardDriver drv;
    drv.value = [a](const DriverArgs& d) { return a * d.p; };
    auto terminal = [c](long, std::size_t, const StatePath&) { return c; };
    PicardOptions opt;
    opt.max_iter = 60;
    const PicardResult res = solve_adjoint_picard(drv, terminal, nullptr, fw, noise, kernel, EllipticOperator::zero(mesh), levy, opt);
    double perr = 0.0, qmax = 0.0;
    for (long n = 0; n <= kg.last(); ++n) {
        const double exact = c * std::exp(a * (1.0 - kg.time(n)));
        for (const auto& ap : res.paths) {
            perr = std::max(perr, std::abs(ap.p[n][1] - exact));
            qmax = std::max(qmax, std::abs(ap.q[n][1]));
        }
    }
    return {"adjoint.scalar_closed_form", perr <= 1e-3 && qmax <= 5e-3, perr, 1e-3,
            "max |q| = " + format_number(qmax) + " (bound 5e-3)"};
}

// --------------------------------------------------------------------------------------
// control

inline CheckResult check_gradient_equivalence(const Problem& pr, const ControlPath& u, std::uint64_t seed,
                                              std::size_t directions = 10) {
    verify_detail::Rng rng(seed);
    const GradientField g = deterministic_gradient(pr, u);
    const SamplingPlan quiet{seed, 1, true, 1};
    double worst = 0.0;
    for (std::size_t k = 0; k < directions; ++k) {
        const TimePath v = verify_detail::random_direction(pr, rng);
        const double pair = gradient_pairing(pr, g.values, v);
        const FiniteDifference fd = gradient_via_finite_difference(pr, u, v, verify_detail::fd_steps(u, v), quiet);
        worst = std::max(worst, std::abs(pair - fd.derivative) / std::max(std::abs(fd.derivative), 1e-12));
    }
    return {"control.gradient_equivalence", worst <= 1e-3, worst, 1e-3, "relative |<grad, v> - FD| over random directions"};
}

/// At the feedback optimum: FD along admissible directions vanishes up to tol |v|, and on a
/// small grid, FD along every unit direction recovers a zero gradient field.
inline CheckResult check_stationary_equivalence(const Problem& pr, const FeedbackSolution& sol, const Problem& small,
                                                const FeedbackSolution& small_sol, std::uint64_t seed, double tol = 1e-6) {
    verify_detail::Rng rng(seed);
    const SamplingPlan quiet{seed, 1, true, 1};
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const TimePath v = verify_detail::random_direction(pr, rng, &sol.control);
        const FiniteDifference fd = gradient_via_finite_difference(pr, sol.control, v, verify_detail::fd_steps(sol.control, v), quiet);
        worst = std::max(worst, std::abs(fd.derivative) / (tol * verify_detail::direction_norm(pr, v)));
    }
    const GradientField g = deterministic_gradient(small, small_sol.control);
    const double w = small.grid().dt * small.mesh().cell_volume();
    double dense = 0.0;
    for (long n = 0; n < small.grid().last(); ++n) {
        for (std::size_t i : small.mesh().interior()) {
            const double u = small_sol.control.values[n][i];
            if (u <= small.box().lo || u >= small.box().hi) continue;
            TimePath e(small.mesh_ptr(), small_sol.control.values.first(), small.grid().last());
            e[n][i] = 1.0;
            const FiniteDifference fd =
                gradient_via_finite_difference(small, small_sol.control, e, verify_detail::fd_steps(small_sol.control, e), quiet);
            dense = std::max({dense, std::abs(fd.derivative / w) / tol, std::abs(g.values[n][i]) / tol});
        }
    }
    const double value = std::max(worst, dense);
    return {"control.stationary_equivalence", value <= 1.0, value, 1.0,
            "FD / (tol |v|) at the optimum, and dense unit directions on a small grid"};
}

inline CheckResult check_local_optimality(const ScenarioReport& rep) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& p : rep.perturbations) worst = std::min(worst, p.gap);
    const std::size_t fails = rep.perturbation_failures();
    return {"control.local_optimality", fails == 0, worst, 0.0,
            std::to_string(rep.perturbations.size()) + " perturbations; value = min J(u_hat) - J(perturbed)"};
}

/// dH/du at feedback outputs is zero wherever the law is not clamped.
inline CheckResult check_feedback_stationarity(const Problem& pr, FeedbackLaw law, double beta) {
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), pr.box().mid());
    const StatePath x = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    const AdjointPath adj = solve_adjoint_deterministic(pr, x, u);
    const FeedbackResult fb =
        law == FeedbackLaw::log ? feedback_log(adj, pr.box(), &u) : feedback_power(adj, beta, pr.box(), &u);
    const TimePath ubar = control_aggregate(pr, fb.control);
    double worst = 0.0;
    for (long n = 0; n < pr.grid().last(); ++n) {
        for (std::size_t i : pr.mesh().interior()) {
            const double v = fb.control.values[n][i];
            if (v <= pr.box().lo || v >= pr.box().hi) continue;
            HamiltonianPoint pt;
            pt.args = detail::point(pr.mesh(), pr.grid(), n, i, x.X[n][i], x.Xbar[n][i], v, ubar[n][i]);
            pt.p = adj.p[n][i];
            pt.q = 0.0;
            pt.r.assign(pr.levy().mark_count(), 0.0);
            const double hu = hamiltonian_partials(pr.coeffs(), pt, pr.levy()).u;
            worst = std::max(worst, std::abs(hu) / std::max(1.0, std::abs(pt.p)));
        }
    }
    return {"control.feedback_stationarity", worst <= 1e-12, worst, 1e-12, "|dH/du| at unclamped feedback outputs"};
}

inline CheckResult check_sufficiency(const ScenarioReport& rep) {
    const auto& s = rep.sufficiency;
    const std::size_t fails = s.concavity_failures.size() + s.maximum_failures.size();
    return {"control.sufficient_conditions", s.passed(), static_cast<double>(fails), 0.0,
            std::to_string(s.samples) + " samples; worst maximum gap " + format_number(s.worst_maximum_gap)};
}

inline CheckResult check_stationarity_residual(const ScenarioReport& rep) {
    return {"control.stationarity_residual", rep.feedback.converged && rep.stationarity <= rep.stationarity_tol,
            rep.stationarity, rep.stationarity_tol,
            "feedback fixed point after " + std::to_string(rep.feedback.iterations) + " iterations"};
}

// --------------------------------------------------------------------------------------
// harness

/// Re-parsing the effective config reproduces it and the run.
inline CheckResult check_config_roundtrip(const ExperimentConfig& cfg, const Problem& pr) {
    const ExperimentConfig again = parse_config(cfg.effective, cfg.base_dir);
    bool same = again.effective == cfg.effective;
    const Problem pr2 = build_problem(again);
    const SamplingPlan quiet{0, 1, true, 1};
    const double j1 = evaluate_performance(pr, initial_control(cfg, pr), quiet).mean;
    const double j2 = evaluate_performance(pr2, initial_control(again, pr2), quiet).mean;
    same = same && j1 == j2;
    return {"harness.config_roundtrip", same, std::abs(j1 - j2), 0.0, "effective config re-parsed and re-run"};
}

// --------------------------------------------------------------------------------------

namespace verify_detail {

inline CheckResult guarded(const std::string& name, const std::function<CheckResult()>& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return {name, false, 0.0, 0.0, std::string("error: ") + e.what()};
    }
}

}  // namespace verify_detail

/// Small 1D problem for dense-direction checks, sharing the config's coefficient parameters.
inline ExperimentConfig small_config(const ExperimentConfig& cfg) {
    ExperimentConfig c = verify_detail::harvest_config(cfg);
    c.dim = 1;
    c.extents = {1.0};
    c.nodes = {7};
    c.horizon = 0.1;
    c.delay = 0.02;
    c.dt = 0.01;
    c.kernel = KernelSpec{};
    c.kernel.kind = KernelKind::moving_average;
    c.kernel.delta = 0.02;
    return c;
}

/// Every module invariant, each reported individually.
inline std::vector<CheckResult> run_verify(const ExperimentConfig& cfg, const VerifyOptions& opt) {
    using verify_detail::guarded;
    std::vector<CheckResult> out;
    const Problem pr = build_problem(cfg);
    const MeshPtr mesh = pr.mesh_ptr();
    const TimeGrid grid = pr.grid();
    const std::uint64_t seed = opt.seed;
    const std::size_t paths = std::max<std::size_t>(opt.paths, 8);

    out.push_back(guarded("mesh.green_identity", [&] { return check_green_identity(mesh, seed + 1); }));
    out.push_back(guarded("mesh.coercivity", [&] { return check_coercivity(pr.op(), seed + 2); }));
    out.push_back(guarded("mesh.operator_linearity", [&] { return check_operator_linearity(verify_detail::variable_operator(mesh), seed + 3); }));

    out.push_back(guarded("kernel.operator_bound", [&] { return check_kernel_bound(cfg, mesh, grid, seed + 4, 5, 20); }));
    out.push_back(guarded("kernel.linearity", [&] { return check_kernel_linearity(pr.kernel(), seed + 5); }));
    out.push_back(guarded("kernel.dual_transpose", [&] { return check_kernel_dual_transpose(seed + 6, cfg.dim); }));
    out.push_back(guarded("kernel.one_step_window", [&] { return check_one_step_window(mesh, grid, seed + 7); }));
    out.push_back(guarded("kernel.reductions", [&] { return check_kernel_reductions(mesh, grid); }));

    out.push_back(guarded("noise.martingale", [&] { return check_martingale(cfg.levy, grid, seed + 8, 4 * paths); }));
    out.push_back(guarded("noise.stream_independence", [&] { return check_stream_independence(cfg.levy, grid, seed + 9, paths); }));

    out.push_back(guarded("model.partials", [&] { return check_model_partials(cfg, mesh, seed + 10); }));
    out.push_back(guarded("model.concavity_in_u", [&] { return check_model_concavity(cfg, mesh, seed + 11); }));

    out.push_back(guarded("forward.reproducibility", [&] { return check_reproducibility(pr, seed + 12); }));
    out.push_back(guarded("forward.deterministic_reduction", [&] { return check_deterministic_reduction(pr, seed + 13); }));
    out.push_back(guarded("forward.mean_consistency", [&] { return check_mean_consistency(cfg, pr, seed + 14, paths); }));
    out.push_back(guarded("forward.negative_fraction", [&] { return check_negative_fraction(pr, seed + 15, std::min<std::size_t>(paths, 50)); }));

    const ExperimentConfig hcfg = verify_detail::harvest_config(cfg);
    const Problem hp = hcfg.coefficient_set == cfg.coefficient_set ? pr : build_problem(hcfg);
    const ControlPath u0 = initial_control(hcfg, hp);
    PicardOptions popt = cfg.picard;
    std::optional<PicardRun> run;
    try {
        run = run_picard(hp, u0, seed + 16, paths, popt, opt.threads);
    } catch (const std::exception& e) {
        for (const char* n : {"adjoint.terminal_clause", "adjoint.boundary_clause", "adjoint.contraction",
                              "adjoint.factorial_envelope", "adjoint.deterministic_agreement"})
            out.push_back({n, false, 0.0, 0.0, std::string("error: ") + e.what()});
    }
    if (run) {
        out.push_back(guarded("adjoint.terminal_clause", [&] { return check_terminal_clause(hp, *run); }));
        out.push_back(guarded("adjoint.boundary_clause", [&] { return check_boundary_clause(hp, *run); }));
        out.push_back(guarded("adjoint.contraction", [&] { return check_contraction(*run); }));
        out.push_back(guarded("adjoint.factorial_envelope", [&] { return check_factorial_envelope(*run); }));
        out.push_back(guarded("adjoint.deterministic_agreement", [&] {
            if (hcfg.coefficient_set == "harvest_power") return check_picard_agreement(hp, *run);
            ExperimentConfig pc = hcfg;
            pc.coefficient_set = "harvest_power";
            const Problem pp = build_problem(pc);
            return check_picard_agreement(pp, run_picard(pp, u0, seed + 16, paths, popt, opt.threads));
        }));
    }
    out.push_back(guarded("adjoint.scalar_closed_form", [&] { return check_scalar_closed_form(seed + 17, std::min<std::size_t>(paths, 100), 1e-3); }));

    out.push_back(guarded("control.gradient_equivalence", [&] { return check_gradient_equivalence(hp, u0, seed + 18); }));
    const FeedbackLaw law = feedback_law_for(hcfg.coefficient_set);
    out.push_back(guarded("control.feedback_stationarity", [&] { return check_feedback_stationarity(hp, law, hcfg.harvest.beta); }));
    ScenarioOptions sopt;
    sopt.seed = seed + 19;
    std::optional<ScenarioReport> rep;
    try {
        rep = run_scenario(hp, hcfg, sopt);
    } catch (const std::exception& e) {
        for (const char* n : {"control.stationarity_residual", "control.local_optimality", "control.sufficient_conditions",
                              "control.stationary_equivalence"})
            out.push_back({n, false, 0.0, 0.0, std::string("error: ") + e.what()});
    }
    if (rep) {
        out.push_back(check_stationarity_residual(*rep));
        out.push_back(check_local_optimality(*rep));
        out.push_back(check_sufficiency(*rep));
        out.push_back(guarded("control.stationary_equivalence", [&] {
            const ExperimentConfig sc = small_config(cfg);
            const Problem small = build_problem(sc);
            const FeedbackSolution ss = solve_feedback(small, law, sc.harvest.beta, initial_control(sc, small));
            return check_stationary_equivalence(hp, rep->feedback, small, ss, seed + 20);
        }));
    }

    out.push_back(guarded("harness.config_roundtrip", [&] { return check_config_roundtrip(cfg, pr); }));
    return out;
}

inline bool all_passed(const std::vector<CheckResult>& checks) {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

inline void write_verify_csv(const fs::path& path, const std::vector<CheckResult>& checks) {
    CsvWriter w(path, {"check", "passed", "value", "threshold", "detail"});
    for (const auto& c : checks) {
        std::string d = c.detail;
        std::replace(d.begin(), d.end(), ',', ';');
        w << c.name << std::string(c.passed ? "1" : "0") << c.value << c.threshold << d;
        w.end_row();
    }
    w.close();
}

}  // namespace stic
