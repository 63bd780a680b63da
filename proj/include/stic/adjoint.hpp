#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stic/error.hpp"
#include "stic/forward.hpp"
#include "stic/kernel.hpp"
#include "stic/mesh.hpp"
#include "stic/model.hpp"
#include "stic/noise.hpp"
#include "stic/time_grid.hpp"

namespace stic {

/// Adjoint triple on [0, T + delta]. Rows n >= K hold the terminal extension.
struct AdjointPath {
    std::uint64_t path_id = 0;
    TimePath p;
    TimePath q;
    std::vector<TimePath> r;  ///< one path per mark
};

inline AdjointPath make_adjoint_path(MeshPtr mesh, const TimeGrid& g, std::size_t marks, std::uint64_t path_id = 0) {
    const long last = g.last() + static_cast<long>(g.history);
    AdjointPath a;
    a.path_id = path_id;
    a.p = TimePath(mesh, 0, last);
    a.q = TimePath(mesh, 0, last);
    a.r.assign(marks, TimePath(mesh, 0, last));
    return a;
}

/// Exact discrete adjoint of the forward scheme along one path, with q = r = 0.
///
/// Stored p_n is the costate paired with the step n -> n+1, so that the Hamiltonian at
/// time n uses p_n:  p_K = terminal, p_{K-1} = P^T p_K,
///   p_{n-1} = P^T (p_n + dt (dH/dX(n) + S*(dH/dS_X)(n))),  n = K-1, ..., 1,
/// where P is the forward diffusion step. Then dJ/du_n = dt vol (dH/du + S*(dH/dS_u))(n).
inline AdjointPath solve_adjoint_deterministic(const Problem& pr, const StatePath& X, const ControlPath& u,
                                               const Field& terminal) {
    const auto& c = pr.coeffs();
    if (!c.deterministic) {
        throw InvalidArgument("solve_adjoint_deterministic: coefficients depend on randomness; use the Picard backend");
    }
    if (!X.deterministic && !c.linear_in_state) {
        throw InvalidArgument(
            "solve_adjoint_deterministic: noisy path with state-nonlinear coefficients; use the Picard backend");
    }
    const auto& g = pr.grid();
    const Mesh& m = pr.mesh();
    const auto& levy = pr.levy();
    const long K = g.last();
    detail::require_same_mesh(m, terminal.mesh(), "solve_adjoint_deterministic");
    detail::require_same_domain(X.X.last() == K && u.values.last() == K, "solve_adjoint_deterministic: grid mismatch");

    AdjointPath a = make_adjoint_path(pr.mesh_ptr(), g, levy.mark_count(), X.path_id);
    for (long n = K; n <= a.p.last(); ++n) {
        auto row = a.p[n];
        for (std::size_t i : m.interior()) row[i] = terminal[i];
    }
    const TimePath ubar = control_aggregate(pr, u);
    TimePath hxbar(pr.mesh_ptr(), 0, K);
    std::vector<double> rhs(m.size()), dual(m.size()), tmp(m.size());

    auto step_back = [&](std::span<const double> in, std::span<double> out) {
        if (pr.scheme() == Scheme::semi_implicit) {
            std::copy(in.begin(), in.end(), tmp.begin());
            for (std::size_t i : m.boundary()) tmp[i] = 0.0;
            pr.implicit()->solve_transpose(tmp, out);
        } else {
            pr.op().apply_adjoint(in, tmp);
            for (std::size_t i = 0; i < m.size(); ++i) out[i] = m.on_boundary(i) ? 0.0 : in[i] + g.dt * tmp[i];
        }
    };
    step_back(a.p[K], a.p[K - 1]);

    HamiltonianPoint pt;
    pt.r.assign(levy.mark_count(), 0.0);
    for (long n = K - 1; n >= 1; --n) {
        const auto pn = a.p[n];
        auto hx = std::span<double>(rhs);
        for (std::size_t i : m.interior()) {
            pt.args = detail::point(m, g, n, i, X.X[n][i], X.Xbar[n][i], u.values[n][i], ubar[n][i]);
            pt.p = pn[i];
            const Partials h = hamiltonian_partials(c, pt, levy);
            hx[i] = h.X;
            hxbar[n][i] = h.Xbar;
        }
        pr.kernel().dual_at(hxbar, n, K - 1, dual);
        for (std::size_t i : m.interior()) rhs[i] = pn[i] + g.dt * (hx[i] + dual[i]);
        step_back(rhs, a.p[n - 1]);
    }
    return a;
}

/// Terminal field dg/dX(x, X(T, x)) at interior nodes.
inline Field terminal_gradient(const Problem& pr, const StatePath& X) {
    Field t(pr.mesh_ptr());
    const long K = pr.grid().last();
    for (std::size_t i : pr.mesh().interior()) {
        t[i] = pr.coeffs().terminal.derivative(i, pr.mesh().position(i), X.X[K][i]);
    }
    return t;
}

inline AdjointPath solve_adjoint_deterministic(const Problem& pr, const StatePath& X, const ControlPath& u) {
    return solve_adjoint_deterministic(pr, X, u, terminal_gradient(pr, X));
}

// ---------------------------------------------------------------------------------------
// Picard backend

/// Arguments of a generic backward driver at (time index n, node, path).
struct DriverArgs {
    long n = 0;
    double t = 0.0;
    std::size_t node = 0;
    std::array<double, 2> x{};
    std::size_t path = 0;
    double X = 0.0;     ///< frozen forward state
    double Xbar = 0.0;  ///< frozen forward interaction field
    double p = 0.0;
    double q = 0.0;
    std::span<const double> r;
    double p_ant = 0.0;  ///< S(p) evaluated at t + delta
    double q_ant = 0.0;
    std::span<const double> r_ant;
};

/// Driver F plus an optional field phi whose kernel dual S*(phi) is added to F.
struct PicardDriver {
    std::function<double(const DriverArgs&)> value;
    std::function<double(const DriverArgs&)> dual_source;
    bool anticipated = false;  ///< compute p_ant, q_ant, r_ant
};

struct PicardOptions {
    double tol = 1e-8;
    std::size_t max_iter = 50;
    double ridge = 1e-8;
    std::size_t lipschitz_probes = 200;
    std::uint64_t probe_seed = 20240611;
};

struct PicardDiagnostics {
    std::vector<double> increments;    ///< weighted squared increment of (p, q, r) per iteration
    std::vector<double> p_increments;
    std::vector<double> q_increments;
    std::vector<double> r_increments;
    std::vector<double> ratios;        ///< increments[i+1] / increments[i]
    std::size_t iterations = 0;
    bool converged = false;
    double alpha1 = 1.0;
    double alpha2 = 0.0;
    double lipschitz = 0.0;
    double alpha3 = 0.0;
    std::size_t regression_fallbacks = 0;  ///< (step, node) fits that fell back to the plain mean
};

struct PicardResult {
    std::vector<AdjointPath> paths;
    PicardDiagnostics diagnostics;
};

/// Least-squares projection onto (1, z, z^2), z the standardized predictor, with a small
/// ridge on the non-constant coefficients. Degenerate predictors fall back to the mean.
class CrossPathRegression {
public:
    CrossPathRegression(std::span<const double> x, double ridge) : n_(x.size()) {
        detail::require(n_ > 0, "CrossPathRegression: no samples");
        double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n_);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n_);
        const double sd = std::sqrt(var);
        if (n_ < 3 || !(sd > 1e-12 * (1.0 + std::abs(mean)))) {
            fallback_ = true;
            return;
        }
        basis_.resize(static_cast<Eigen::Index>(n_), 3);
        for (std::size_t k = 0; k < n_; ++k) {
            const double z = (x[k] - mean) / sd;
            basis_(static_cast<Eigen::Index>(k), 0) = 1.0;
            basis_(static_cast<Eigen::Index>(k), 1) = z;
            basis_(static_cast<Eigen::Index>(k), 2) = z * z;
        }
        Eigen::Matrix3d gram = basis_.transpose() * basis_ / static_cast<double>(n_);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(gram, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues()(0) <= 1e-10 * eig.eigenvalues()(2)) {
            fallback_ = true;
            return;
        }
        gram(1, 1) += ridge;
        gram(2, 2) += ridge;
        solver_.compute(gram);
    }

    bool fallback() const noexcept { return fallback_; }

    /// Writes the fitted conditional expectation of y at each sample.
    void fit(std::span<const double> y, std::span<double> fitted) const {
        if (fallback_) {
            const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n_);
            std::fill(fitted.begin(), fitted.end(), mean);
            return;
        }
        Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(n_));
        const Eigen::Vector3d rhs = basis_.transpose() * yv / static_cast<double>(n_);
        const Eigen::Vector3d coef = solver_.solve(rhs);
        Eigen::Map<Eigen::VectorXd> out(fitted.data(), static_cast<Eigen::Index>(n_));
        out = basis_ * coef;
    }

private:
    std::size_t n_;
    bool fallback_ = false;
    Eigen::MatrixXd basis_;
    Eigen::LDLT<Eigen::Matrix3d> solver_;
};

/// Random-probe estimate of the driver's Lipschitz constant in (p, q, r, anticipated terms),
/// with S*(phi) contributing sqrt(M) times the Lipschitz constant of phi.
inline double probe_lipschitz(const PicardDriver& drv, const LevySpec& levy, const DiscreteKernel& k,
                              const std::vector<StatePath>& paths, std::size_t probes, std::uint64_t seed) {
    detail::require(!paths.empty(), "probe_lipschitz: no forward paths");
    const Mesh& m = k.mesh();
    const std::size_t marks = levy.mark_count();
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_int_distribution<std::size_t> path_pick(0, paths.size() - 1);
    std::uniform_int_distribution<std::size_t> node_pick(0, m.interior().size() - 1);
    std::uniform_int_distribution<long> step_pick(0, k.grid().last());
    double c_value = 0.0, c_dual = 0.0;
    std::vector<double> r1(marks), r2(marks), ra1(marks), ra2(marks);
    for (std::size_t s = 0; s < probes; ++s) {
        DriverArgs a, b;
        a.path = path_pick(gen);
        a.n = step_pick(gen);
        a.t = k.grid().time(a.n);
        a.node = m.interior()[node_pick(gen)];
        a.x = m.position(a.node);
        a.X = paths[a.path].X[a.n][a.node];
        a.Xbar = paths[a.path].Xbar[a.n][a.node];
        b = a;
        double dist = 0.0;
        auto slot = [&](double& va, double& vb, double w) {
            va = unif(gen);
            vb = va + unif(gen);
            dist += w * std::abs(vb - va);
        };
        slot(a.p, b.p, 1.0);
        slot(a.q, b.q, 1.0);
        slot(a.p_ant, b.p_ant, 1.0);
        slot(a.q_ant, b.q_ant, 1.0);
        for (std::size_t j = 0; j < marks; ++j) {
            const double w = levy.nu_weight(j) > 0.0 ? std::sqrt(levy.nu_weight(j)) : 1.0;
            slot(r1[j], r2[j], w);
            slot(ra1[j], ra2[j], w);
        }
        a.r = r1;
        b.r = r2;
        a.r_ant = ra1;
        b.r_ant = ra2;
        if (dist <= 0.0) continue;
        if (drv.value) c_value = std::max(c_value, std::abs(drv.value(b) - drv.value(a)) / dist);
        if (drv.dual_source) c_dual = std::max(c_dual, std::abs(drv.dual_source(b) - drv.dual_source(a)) / dist);
    }
    const double c = c_value + std::sqrt(k.bound_M()) * c_dual;
    if (!std::isfinite(c)) throw InvalidArgument("probe_lipschitz: driver is not Lipschitz on the probe set");
    return c;
}

/// Backward Picard iteration for the adjoint equation with general driver.
///
/// Each iteration sweeps k = K-1, ..., 0 over all paths jointly:
///   Y = p_{k+1};  R = Y - E[Y | X_k];  q_k = E[R dB_k | X_k] / dt;  r_k = E[R dN~_k | X_k] / (nu dt)
///   G_k = F(p^old_k, q_k, r_k, anticipated) + S*(phi)(k)
///   p_k = (I - dt A*)^{-1} E[Y + dt (G_k + G_{k+1}) / 2 | X_k]
/// with E[. | X_k] the per-node cross-path regression. Anticipated aggregates and G_{k+1}
/// use values already produced in the current sweep; rows K..K+delta hold the terminal data.
inline PicardResult solve_adjoint_picard(const PicardDriver& driver,
                                         const std::function<double(long, std::size_t, const StatePath&)>& terminal,
                                         const std::function<double(long, std::size_t)>& boundary,
                                         const std::vector<StatePath>& forward,
                                         const std::vector<NoiseRealization>& noise, const DiscreteKernel& kernel,
                                         const EllipticOperator& op, const LevySpec& levy,
                                         const PicardOptions& opt = {}) {
    detail::require(!forward.empty(), "solve_adjoint_picard: no forward paths");
    detail::require(forward.size() == noise.size(), "solve_adjoint_picard: one noise realization per path");
    detail::require(driver.value != nullptr, "solve_adjoint_picard: driver has no value function");
    detail::require(opt.max_iter >= 1, "solve_adjoint_picard: max_iter must be positive");
    detail::require_same_mesh(op.mesh(), kernel.mesh(), "solve_adjoint_picard");
    const auto& g = kernel.grid();
    const Mesh& m = op.mesh();
    const MeshPtr& mesh = op.mesh_ptr();
    const long K = g.last();
    const long L = static_cast<long>(g.history);
    const std::size_t N = forward.size();
    const std::size_t marks = levy.mark_count();
    for (std::size_t s = 0; s < N; ++s) {
        detail::require_same_mesh(m, forward[s].X.mesh(), "solve_adjoint_picard");
        detail::require_same_domain(forward[s].X.last() == K && noise[s].grid == g && noise[s].marks == marks,
                                    "solve_adjoint_picard: forward path or noise not on the kernel grid");
    }
    if (driver.anticipated) {
        detail::require(kernel.window() <= static_cast<std::size_t>(L),
                        "solve_adjoint_picard: kernel window exceeds the terminal extension");
    }

    PicardResult res;
    auto& diag = res.diagnostics;
    const auto coerc = measure_coercivity(op, 1.0);
    diag.alpha1 = coerc.alpha1;
    diag.alpha2 = coerc.alpha2;
    diag.lipschitz = probe_lipschitz(driver, levy, kernel, forward, opt.lipschitz_probes, opt.probe_seed);
    diag.alpha3 = diag.alpha2 + 2.0 * diag.lipschitz;

    const ImplicitDiffusion solver(op, g.dt);

    // Current iterate, initialized to zero with the terminal extension in place.
    std::vector<AdjointPath> cur(N);
    for (std::size_t s = 0; s < N; ++s) {
        cur[s] = make_adjoint_path(mesh, g, marks, forward[s].path_id);
        for (long n = K; n <= K + L; ++n) {
            auto row = cur[s].p[n];
            for (std::size_t i = 0; i < m.size(); ++i) row[i] = terminal(n, i, forward[s]);
        }
    }

    std::vector<double> y(N), fit(N), resid(N), work(N), target(N);
    std::vector<TimePath> phi(N, TimePath(mesh, 0, K + L));
    std::vector<TimePath> gval(N, TimePath(mesh, 0, K));
    std::vector<double> pa(m.size()), qa(m.size()), dual(m.size()), rhs(m.size());
    std::vector<std::vector<double>> ra(marks, std::vector<double>(m.size()));
    std::vector<double> rbuf(marks), rabuf(marks);

    // Fills G(n) for path s from the current buffers; p at n is whatever the buffer holds.
    auto evaluate_g = [&](std::size_t s, long n) {
        AdjointPath& a = cur[s];
        if (driver.anticipated) {
            kernel.apply_at(a.p, n + L, pa);
            kernel.apply_at(a.q, n + L, qa);
            for (std::size_t j = 0; j < marks; ++j) kernel.apply_at(a.r[j], n + L, ra[j]);
        }
        auto gv = gval[s][n];
        for (std::size_t i : m.interior()) {
            DriverArgs d;
            d.n = n;
            d.t = g.time(n);
            d.node = i;
            d.x = m.position(i);
            d.path = s;
            d.X = forward[s].X[n][i];
            d.Xbar = forward[s].Xbar[n][i];
            d.p = a.p[n][i];
            d.q = a.q[n][i];
            for (std::size_t j = 0; j < marks; ++j) {
                rbuf[j] = a.r[j][n][i];
                rabuf[j] = driver.anticipated ? ra[j][i] : 0.0;
            }
            d.r = rbuf;
            d.r_ant = rabuf;
            if (driver.anticipated) {
                d.p_ant = pa[i];
                d.q_ant = qa[i];
            }
            gv[i] = driver.value(d);
            if (driver.dual_source) phi[s][n][i] = driver.dual_source(d);
        }
        if (driver.dual_source) {
            kernel.dual_at(phi[s], n, K, dual);
            for (std::size_t i : m.interior()) gv[i] += dual[i];
        }
    };

    std::vector<std::optional<CrossPathRegression>> regs(m.size());
    std::vector<std::vector<double>> fitted_target(N, std::vector<double>(m.size()));
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        const std::vector<AdjointPath> prev = cur;  // cur doubles as the sweep buffer
        for (std::size_t s = 0; s < N; ++s) evaluate_g(s, K);

        for (long k = K - 1; k >= 0; --k) {
            const auto ks = static_cast<std::size_t>(k);
            for (std::size_t i : m.interior()) {
                for (std::size_t s = 0; s < N; ++s) work[s] = forward[s].X[k][i];
                regs[i].emplace(work, opt.ridge);
                const auto& reg = *regs[i];
                if (reg.fallback()) ++diag.regression_fallbacks;
                for (std::size_t s = 0; s < N; ++s) y[s] = cur[s].p[k + 1][i];
                reg.fit(y, fit);
                for (std::size_t s = 0; s < N; ++s) resid[s] = y[s] - fit[s];
                for (std::size_t s = 0; s < N; ++s) work[s] = resid[s] * noise[s].brownian(ks);
                reg.fit(work, target);
                for (std::size_t s = 0; s < N; ++s) cur[s].q[k][i] = target[s] / g.dt;
                for (std::size_t j = 0; j < marks; ++j) {
                    const double nu = levy.nu_weight(j);
                    if (nu <= 0.0) {
                        for (std::size_t s = 0; s < N; ++s) cur[s].r[j][k][i] = 0.0;
                        continue;
                    }
                    for (std::size_t s = 0; s < N; ++s) work[s] = resid[s] * noise[s].centered(ks, j);
                    reg.fit(work, target);
                    for (std::size_t s = 0; s < N; ++s) cur[s].r[j][k][i] = target[s] / (nu * g.dt);
                }
            }
            for (std::size_t s = 0; s < N; ++s) evaluate_g(s, k);  // p_k still holds the old iterate
            for (std::size_t i : m.interior()) {
                for (std::size_t s = 0; s < N; ++s) {
                    work[s] = cur[s].p[k + 1][i] + 0.5 * g.dt * (gval[s][k][i] + gval[s][k + 1][i]);
                }
                regs[i]->fit(work, target);
                for (std::size_t s = 0; s < N; ++s) fitted_target[s][i] = target[s];
            }
            for (std::size_t s = 0; s < N; ++s) {
                for (std::size_t i = 0; i < m.size(); ++i) {
                    rhs[i] = m.on_boundary(i) ? (boundary ? boundary(k, i) : 0.0) : fitted_target[s][i];
                }
                solver.solve_transpose(rhs, cur[s].p[k]);
                evaluate_g(s, k);  // refresh with the new p_k for the next step
            }
        }

        double inc_p = 0.0, inc_q = 0.0, inc_r = 0.0;
        for (long k = 0; k < K; ++k) {
            const double w = g.dt * std::exp(diag.alpha3 * g.time(k));
            for (std::size_t s = 0; s < N; ++s) {
                auto sq = [&](const TimePath& a, const TimePath& b) {
                    double acc = 0.0;
                    for (std::size_t i : m.interior()) {
                        const double d = a[k][i] - b[k][i];
                        acc += d * d;
                    }
                    return acc * m.cell_volume();
                };
                inc_p += w * sq(cur[s].p, prev[s].p);
                inc_q += w * sq(cur[s].q, prev[s].q);
                for (std::size_t j = 0; j < marks; ++j) inc_r += w * levy.nu_weight(j) * sq(cur[s].r[j], prev[s].r[j]);
            }
        }
        const double inv = 1.0 / static_cast<double>(N);
        diag.p_increments.push_back(inc_p * inv);
        diag.q_increments.push_back(inc_q * inv);
        diag.r_increments.push_back(inc_r * inv);
        diag.increments.push_back((inc_p + inc_q + inc_r) * inv);
        diag.iterations = it + 1;
        if (!std::isfinite(diag.increments.back())) throw NumericalError("solve_adjoint_picard: iteration diverged");
        if (std::sqrt(diag.increments.back()) <= opt.tol) {
            diag.converged = true;
            break;
        }
    }
    for (std::size_t i = 0; i + 1 < diag.increments.size(); ++i) {
        const double a = diag.increments[i];
        diag.ratios.push_back(a > 0.0 ? diag.increments[i + 1] / a : 0.0);
    }
    res.paths = std::move(cur);
    return res;
}

/// Summary of successive weighted increments.
struct ContractionSummary {
    std::size_t burn_in = 2;
    std::vector<double> ratios;     ///< ratios used after burn-in
    double geometric_mean = 0.0;
    bool monotone_nonincreasing = true;
    bool super_linear = false;      ///< ratios themselves shrink (log-increments curve downward)
};

/// Contraction summary from a ratio list; ratios with index < burn_in are skipped.
inline ContractionSummary summarize_ratios(std::span<const double> ratios, std::size_t burn_in = 1) {
    ContractionSummary out;
    out.burn_in = burn_in;
    for (std::size_t i = burn_in; i < ratios.size(); ++i) out.ratios.push_back(ratios[i]);
    if (out.ratios.empty()) throw InvalidArgument("picard_contraction_report: no ratios after burn-in");
    double log_sum = 0.0;
    bool zero = false;
    for (double r : out.ratios) {
        if (r <= 0.0) zero = true;
        else log_sum += std::log(r);
    }
    out.geometric_mean = zero ? 0.0 : std::exp(log_sum / static_cast<double>(out.ratios.size()));
    for (std::size_t i = 0; i + 1 < ratios.size(); ++i) {
        if (ratios[i + 1] > ratios[i]) out.monotone_nonincreasing = false;
    }
    out.super_linear = out.ratios.size() >= 2 && out.monotone_nonincreasing && out.ratios.back() < out.ratios.front();
    return out;
}

/// Needs at least three recorded iterations. The first ratio compares iterations 2 and 1,
/// so burn_in = 1 starts the summary after iteration 2.
inline ContractionSummary picard_contraction_report(const PicardDiagnostics& diag, std::size_t burn_in = 1) {
    if (diag.increments.size() < 3) throw InvalidArgument("picard_contraction_report: need at least 3 iterations");
    return summarize_ratios(diag.ratios, burn_in);
}

/// Driver of the adjoint equation of a control problem: F = dH/dX and phi = dH/dS_X,
/// evaluated along the frozen forward path and the given control.
inline PicardDriver hamiltonian_driver(const Problem& pr, const ControlPath& u) {
    auto ubar = std::make_shared<TimePath>(control_aggregate(pr, u));
    auto ctrl = std::make_shared<TimePath>(u.values);
    const Problem* prp = &pr;
    auto partials = [prp, ubar, ctrl](const DriverArgs& d) {
        HamiltonianPoint pt;
        pt.args = {d.t, d.node, d.x, d.X, d.Xbar, (*ctrl)[d.n][d.node], (*ubar)[d.n][d.node]};
        pt.p = d.p;
        pt.q = d.q;
        pt.r.assign(d.r.begin(), d.r.end());
        return hamiltonian_partials(prp->coeffs(), pt, prp->levy());
    };
    PicardDriver drv;
    drv.value = [partials](const DriverArgs& d) { return partials(d).X; };
    drv.dual_source = [partials](const DriverArgs& d) { return partials(d).Xbar; };
    return drv;
}

/// Picard solve of the control problem's adjoint equation along the given forward paths.
inline PicardResult solve_adjoint_picard(const Problem& pr, const ControlPath& u, const std::vector<StatePath>& forward,
                                         const std::vector<NoiseRealization>& noise, const PicardOptions& opt = {}) {
    const Problem* prp = &pr;
    const long K = pr.grid().last();
    auto terminal = [prp, K](long, std::size_t i, const StatePath& X) {
        if (prp->mesh().on_boundary(i)) return 0.0;
        return prp->coeffs().terminal.derivative(i, prp->mesh().position(i), X.X[K][i]);
    };
    return solve_adjoint_picard(hamiltonian_driver(pr, u), terminal, nullptr, forward, noise, pr.kernel(), pr.op(),
                                pr.levy(), opt);
}

}  // namespace stic
