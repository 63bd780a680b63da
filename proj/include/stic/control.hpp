#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stic/adjoint.hpp"
#include "stic/error.hpp"
#include "stic/forward.hpp"
#include "stic/model.hpp"
#include "stic/noise.hpp"
#include "stic/parallel.hpp"

namespace stic {

/// Which Monte Carlo paths to run. Deterministic plans use one path with all noise removed.
struct SamplingPlan {
    std::uint64_t seed = 0;
    std::size_t paths = 1;
    bool deterministic = true;
    unsigned threads = 1;
};

inline NoiseRealization plan_noise(const Problem& pr, const SamplingPlan& plan, std::size_t path) {
    return plan.deterministic ? zero_noise(pr.levy(), pr.grid(), path)
                              : sample_noise(pr.levy(), pr.grid(), plan.seed, path);
}

inline std::size_t plan_paths(const SamplingPlan& plan) { return plan.deterministic ? 1 : plan.paths; }

struct PerformanceEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t paths = 0;
    double running = 0.0;
    double terminal = 0.0;
};

/// Running and terminal parts of J on one path:
///   sum_{n<K} dt sum_interior vol f(n)  and  sum_interior vol g(X_K).
inline std::pair<double, double> path_performance(const Problem& pr, const StatePath& X, const ControlPath& u,
                                                  const TimePath& ubar) {
    const auto& g = pr.grid();
    const Mesh& m = pr.mesh();
    const auto& c = pr.coeffs();
    const long K = g.last();
    double run = 0.0;
    for (long n = 0; n < K; ++n) {
        double row = 0.0;
        for (std::size_t i : m.interior()) {
            row += c.reward.value(detail::point(m, g, n, i, X.X[n][i], X.Xbar[n][i], u.values[n][i], ubar[n][i]));
        }
        run += row;
    }
    run *= g.dt * m.cell_volume();
    double term = 0.0;
    for (std::size_t i : m.interior()) term += c.terminal.value(i, m.position(i), X.X[K][i]);
    term *= m.cell_volume();
    return {run, term};
}

namespace detail {

inline PerformanceEstimate summarize(const std::vector<double>& run, const std::vector<double>& term) {
    PerformanceEstimate e;
    e.paths = run.size();
    if (e.paths == 0) throw InvalidArgument("evaluate_performance: empty path set");
    const double n = static_cast<double>(e.paths);
    double mean = 0.0;
    for (std::size_t s = 0; s < e.paths; ++s) {
        e.running += run[s];
        e.terminal += term[s];
    }
    e.running /= n;
    e.terminal /= n;
    e.mean = e.running + e.terminal;
    for (std::size_t s = 0; s < e.paths; ++s) mean += run[s] + term[s];
    mean /= n;
    if (e.paths > 1) {
        double ss = 0.0;
        for (std::size_t s = 0; s < e.paths; ++s) {
            const double d = run[s] + term[s] - mean;
            ss += d * d;
        }
        e.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    }
    return e;
}

inline double mean_stderr(const std::vector<double>& v, double& mean) {
    const double n = static_cast<double>(v.size());
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace detail

/// J over already simulated paths.
inline PerformanceEstimate evaluate_performance(const Problem& pr, const ControlPath& u,
                                                const std::vector<StatePath>& paths) {
    const TimePath ubar = control_aggregate(pr, u);
    std::vector<double> run(paths.size()), term(paths.size());
    for (std::size_t s = 0; s < paths.size(); ++s) std::tie(run[s], term[s]) = path_performance(pr, paths[s], u, ubar);
    return detail::summarize(run, term);
}

/// J by streaming simulation; paths are not kept.
inline PerformanceEstimate evaluate_performance(const Problem& pr, const ControlPath& u, const SamplingPlan& plan) {
    u.validate();
    const TimePath ubar = control_aggregate(pr, u);
    const std::size_t n = plan_paths(plan);
    std::vector<double> run(n), term(n);
    parallel_for(n, plan.threads, [&](std::size_t s) {
        const StatePath X = simulate_forward(pr, u, ubar, plan_noise(pr, plan, s));
        std::tie(run[s], term[s]) = path_performance(pr, X, u, ubar);
    });
    return detail::summarize(run, term);
}

enum class GradientMode { full_filtration, deterministic_controls };

inline const char* to_string(GradientMode m) {
    return m == GradientMode::full_filtration ? "full_filtration" : "deterministic_controls";
}

/// dH/du + S*(dH/dS_u) on [0, T], zero on boundary nodes and at the final row.
struct GradientField {
    TimePath values;
    GradientMode mode = GradientMode::full_filtration;
    std::size_t paths = 0;
};

/// Per-path gradient rows n in [0, K-1]; equals dJ/du_n / (dt vol) for the exact adjoint.
inline TimePath path_gradient(const Problem& pr, const ControlPath& u, const TimePath& ubar, const StatePath& X,
                              const AdjointPath& a) {
    const auto& g = pr.grid();
    const Mesh& m = pr.mesh();
    const auto& levy = pr.levy();
    const long K = g.last();
    detail::require_same_domain(X.path_id == a.path_id, "gradient_via_adjoint: forward and adjoint paths misaligned");
    TimePath hu(pr.mesh_ptr(), 0, K), hubar(pr.mesh_ptr(), 0, K);
    HamiltonianPoint pt;
    pt.r.assign(levy.mark_count(), 0.0);
    for (long n = 0; n < K; ++n) {
        for (std::size_t i : m.interior()) {
            pt.args = detail::point(m, g, n, i, X.X[n][i], X.Xbar[n][i], u.values[n][i], ubar[n][i]);
            pt.p = a.p[n][i];
            pt.q = a.q[n][i];
            for (std::size_t j = 0; j < pt.r.size(); ++j) pt.r[j] = a.r[j][n][i];
            const Partials h = hamiltonian_partials(pr.coeffs(), pt, levy);
            hu[n][i] = h.u;
            hubar[n][i] = h.ubar;
        }
    }
    std::vector<double> dual(m.size());
    for (long n = 0; n < K; ++n) {
        pr.kernel().dual_at(hubar, n, K - 1, dual);
        for (std::size_t i : m.interior()) hu[n][i] += dual[i];
    }
    return hu;
}

/// Cross-path average of per-path gradients. With deterministic control fields the
/// controller's information is trivial, so both modes reduce to this average; the mode is recorded.
inline GradientField gradient_via_adjoint(const Problem& pr, const ControlPath& u, const std::vector<StatePath>& forward,
                                          const std::vector<AdjointPath>& adjoint,
                                          GradientMode mode = GradientMode::full_filtration) {
    detail::require(!forward.empty(), "gradient_via_adjoint: no paths");
    detail::require_same_domain(forward.size() == adjoint.size(), "gradient_via_adjoint: path counts differ");
    const TimePath ubar = control_aggregate(pr, u);
    GradientField out{TimePath(pr.mesh_ptr(), 0, pr.grid().last()), mode, forward.size()};
    for (std::size_t s = 0; s < forward.size(); ++s) {
        const TimePath gp = path_gradient(pr, u, ubar, forward[s], adjoint[s]);
        auto dst = out.values.raw();
        auto src = gp.raw();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    const double inv = 1.0 / static_cast<double>(forward.size());
    for (double& v : out.values.raw()) v *= inv;
    return out;
}

/// <G, v> = sum_{n in [0, K]} dt sum_interior vol G v.
inline double gradient_pairing(const Problem& pr, const TimePath& grad, const TimePath& direction) {
    const Mesh& m = pr.mesh();
    double acc = 0.0;
    for (long n = 0; n <= pr.grid().last(); ++n) {
        for (std::size_t i : m.interior()) acc += grad[n][i] * direction[n][i];
    }
    return acc * pr.grid().dt * m.cell_volume();
}

inline double gradient_norm(const Problem& pr, const GradientField& g) {
    return std::sqrt(gradient_pairing(pr, g.values, g.values));
}

/// Gradient along zero-noise dynamics with the exact discrete adjoint.
inline GradientField deterministic_gradient(const Problem& pr, const ControlPath& u) {
    const StatePath X = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    const AdjointPath a = solve_adjoint_deterministic(pr, X, u);
    return gradient_via_adjoint(pr, u, {X}, {a}, GradientMode::deterministic_controls);
}

struct FiniteDifference {
    double derivative = 0.0;
    double stderr_ = 0.0;
    std::vector<double> eps_used;
    std::vector<double> central;  ///< plain central differences (path means) per eps
};

namespace detail {

inline bool shifted_in_box(const ControlPath& u, const TimePath& v, double eps) {
    const auto a = u.values.raw();
    const auto d = v.raw();
    const double tol = 1e-12 * std::max(1.0, u.box.width());
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (double s : {eps, -eps}) {
            const double x = a[k] + s * d[k];
            if (x < u.box.lo - tol || x > u.box.hi + tol) return false;
        }
    }
    return true;
}

inline ControlPath shifted(const ControlPath& u, const TimePath& v, double eps) {
    ControlPath out = u;
    auto a = out.values.raw();
    const auto d = v.raw();
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = u.box.clip(a[k] + eps * d[k]);
    return out;
}

/// Neville extrapolation to eps = 0 in the variable eps^2 (central-difference error series).
inline double richardson(std::span<const double> eps, std::span<const double> d) {
    std::vector<double> col(d.begin(), d.end());
    for (std::size_t level = 1; col.size() > 1; ++level) {
        std::vector<double> nxt;
        for (std::size_t i = 0; i + 1 < col.size(); ++i) {
            const double a = eps[i] * eps[i];
            const double b = eps[i + level] * eps[i + level];
            nxt.push_back((a * col[i + 1] - b * col[i]) / (a - b));
        }
        col = std::move(nxt);
    }
    return col.front();
}

}  // namespace detail

/// Common-random-number central differences of J along `direction`, Richardson-extrapolated
/// over the feasible part of `eps_list` (descending). Infeasible large eps are dropped.
inline FiniteDifference gradient_via_finite_difference(const Problem& pr, const ControlPath& u,
                                                       const TimePath& direction, std::vector<double> eps_list,
                                                       const SamplingPlan& plan) {
    detail::require(!eps_list.empty(), "gradient_via_finite_difference: empty eps list");
    detail::require_same_domain(direction.first() == u.values.first() && direction.last() == u.values.last(),
                                "gradient_via_finite_difference: direction grid differs from the control");
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    for (double e : eps_list) detail::require(e > 0.0, "gradient_via_finite_difference: eps must be positive");
    if (!detail::shifted_in_box(u, direction, eps_list.back())) {
        throw InvalidArgument("gradient_via_finite_difference: u +- eps v leaves the box at the smallest eps");
    }
    FiniteDifference out;
    for (double e : eps_list) {
        if (detail::shifted_in_box(u, direction, e)) out.eps_used.push_back(e);
    }
    const std::size_t ne = out.eps_used.size();
    std::vector<ControlPath> plus, minus;
    std::vector<TimePath> plus_bar, minus_bar;
    for (double e : out.eps_used) {
        plus.push_back(detail::shifted(u, direction, e));
        minus.push_back(detail::shifted(u, direction, -e));
        plus_bar.push_back(control_aggregate(pr, plus.back()));
        minus_bar.push_back(control_aggregate(pr, minus.back()));
    }
    const std::size_t n = plan_paths(plan);
    std::vector<double> extrapolated(n);
    std::vector<std::vector<double>> central(ne, std::vector<double>(n));
    parallel_for(n, plan.threads, [&](std::size_t s) {
        const NoiseRealization noise = plan_noise(pr, plan, s);
        std::vector<double> d(ne);
        for (std::size_t k = 0; k < ne; ++k) {
            const StatePath xp = simulate_forward(pr, plus[k], plus_bar[k], noise);
            const StatePath xm = simulate_forward(pr, minus[k], minus_bar[k], noise);
            const auto jp = path_performance(pr, xp, plus[k], plus_bar[k]);
            const auto jm = path_performance(pr, xm, minus[k], minus_bar[k]);
            d[k] = ((jp.first - jm.first) + (jp.second - jm.second)) / (2.0 * out.eps_used[k]);
            central[k][s] = d[k];
        }
        extrapolated[s] = detail::richardson(out.eps_used, d);
    });
    out.stderr_ = detail::mean_stderr(extrapolated, out.derivative);
    for (std::size_t k = 0; k < ne; ++k) {
        double mean = 0.0;
        detail::mean_stderr(central[k], mean);
        out.central.push_back(mean);
    }
    return out;
}

// ---------------------------------------------------------------------------------------
// Feedback laws

inline constexpr double kMinAdjoint = 1e-8;

struct FeedbackResult {
    ControlPath control;
    std::size_t clamps = 0;  ///< interior (step, node) entries that hit p_min or the box
};

namespace detail {

template <class Law>
FeedbackResult apply_feedback(const AdjointPath& p, const ControlBox& box, const ControlPath* base, Law law) {
    const Mesh& m = p.p.mesh();
    FeedbackResult out;
    out.control.box = box;
    const long last = base ? base->values.last() : p.p.last();
    const long first = base ? base->values.first() : 0;
    out.control.values = TimePath(p.p.mesh_ptr(), first, last, box.clip(box.mid()));
    if (base) {
        for (long n = first; n < 0; ++n) {
            auto src = base->values[n];
            std::copy(src.begin(), src.end(), out.control.values[n].begin());
        }
    }
    for (long n = 0; n <= last; ++n) {
        const auto pr = p.p[n];
        auto dst = out.control.values[n];
        for (std::size_t i = 0; i < m.size(); ++i) {
            bool clamped = false;
            double pv = pr[i];
            if (!(pv >= kMinAdjoint)) {
                pv = kMinAdjoint;
                clamped = true;
            }
            const double raw = law(pv);
            const double v = box.clip(raw);
            if (v != raw) clamped = true;
            dst[i] = v;
            if (clamped && !m.on_boundary(i)) ++out.clamps;
        }
    }
    return out;
}

}  // namespace detail

/// u = 1 / max(p, p_min), clipped to the box, on rows [0, last]; rows n < 0 copy `base`.
inline FeedbackResult feedback_log(const AdjointPath& p, const ControlBox& box, const ControlPath* base = nullptr) {
    return detail::apply_feedback(p, box, base, [](double pv) { return 1.0 / pv; });
}

/// u = max(p, p_min)^(1 / (beta - 1)), clipped to the box.
inline FeedbackResult feedback_power(const AdjointPath& p, double beta, const ControlBox& box,
                                     const ControlPath* base = nullptr) {
    if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgument("feedback_power: beta must lie in (0, 1)");
    const double e = 1.0 / (beta - 1.0);
    return detail::apply_feedback(p, box, base, [e](double pv) { return std::pow(pv, e); });
}

enum class FeedbackLaw { log, power };

struct FeedbackSolution {
    ControlPath control;
    StatePath state;
    AdjointPath adjoint;
    std::size_t iterations = 0;
    double change = 0.0;
    std::size_t clamps = 0;
    bool converged = false;
};

namespace detail {

/// Fixed point u = law(p(u)) with the relaxation factor halved whenever the sup-norm
/// change grows. `solve(u, sol)` fills sol.state and sol.adjoint for the control u.
template <class Solve>
FeedbackSolution feedback_fixed_point(const Problem& pr, FeedbackLaw law, double beta, const ControlPath& start,
                                      double tol, std::size_t max_iter, Solve&& solve) {
    FeedbackSolution sol;
    sol.control = start;
    double relax = 1.0;
    double prev_change = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < max_iter; ++it) {
        solve(sol.control, sol);
        FeedbackResult fb = law == FeedbackLaw::log ? feedback_log(sol.adjoint, pr.box(), &sol.control)
                                                    : feedback_power(sol.adjoint, beta, pr.box(), &sol.control);
        double change = 0.0;
        for (long n = 0; n <= pr.grid().last(); ++n) {
            for (std::size_t i : pr.mesh().interior()) {
                change = std::max(change, std::abs(fb.control.values[n][i] - sol.control.values[n][i]));
            }
        }
        sol.iterations = it + 1;
        sol.change = change;
        sol.clamps = fb.clamps;
        if (change <= tol) {
            sol.converged = true;
            break;
        }
        if (change > prev_change) relax *= 0.5;
        prev_change = change;
        for (long n = 0; n <= pr.grid().last(); ++n) {
            auto dst = sol.control.values[n];
            const auto src = fb.control.values[n];
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = pr.box().clip(dst[i] + relax * (src[i] - dst[i]));
        }
    }
    return sol;  // state and adjoint belong to sol.control: the loop exits before updating it
}

}  // namespace detail

/// Deterministic mode: forward and exact adjoint along the noise-free dynamics.
inline FeedbackSolution solve_feedback(const Problem& pr, FeedbackLaw law, double beta, const ControlPath& start,
                                       double tol = 1e-12, std::size_t max_iter = 500) {
    const NoiseRealization quiet = zero_noise(pr.levy(), pr.grid());
    return detail::feedback_fixed_point(pr, law, beta, start, tol, max_iter, [&](const ControlPath& u, FeedbackSolution& sol) {
        sol.state = simulate_forward(pr, u, quiet);
        sol.adjoint = solve_adjoint_deterministic(pr, sol.state, u);
    });
}

/// max |dH/du + S*(dH/dS_u)| over interior entries on rows [0, K-1] whose control is strictly inside the box.
inline double stationarity_residual(const Problem& pr, const ControlPath& u, const GradientField& g) {
    double r = 0.0;
    for (long n = 0; n < pr.grid().last(); ++n) {
        for (std::size_t i : pr.mesh().interior()) {
            const double v = u.values[n][i];
            if (v <= pr.box().lo || v >= pr.box().hi) continue;
            r = std::max(r, std::abs(g.values[n][i]));
        }
    }
    return r;
}

// ---------------------------------------------------------------------------------------
// Sufficient conditions

struct SamplePoint {
    long n = 0;
    std::size_t node = 0;
};

struct SufficiencyReport {
    std::size_t samples = 0;
    std::vector<SamplePoint> concavity_failures;
    std::vector<SamplePoint> maximum_failures;
    double worst_maximum_gap = 0.0;  ///< max over samples of (grid max of E[H]) - E[H](u_hat)

    bool passed() const { return concavity_failures.empty() && maximum_failures.empty(); }
};

/// Concavity midpoint spot-checks of H in (X, S_X, u, S_u) and the maximum condition
/// E[H(u_hat)] >= max over a u-grid of E[H(u)], with S_u held at its candidate value.
/// sample_count >= K * interior checks every point; otherwise points are drawn at random.
inline SufficiencyReport check_sufficient_conditions(const Problem& pr, const ControlPath& u_hat,
                                                     const std::vector<StatePath>& forward,
                                                     const std::vector<AdjointPath>& adjoint, std::size_t sample_count,
                                                     std::uint64_t seed = 1, std::size_t grid_points = 401) {
    detail::require(!forward.empty() && forward.size() == adjoint.size(),
                    "check_sufficient_conditions: need matching forward and adjoint paths");
    detail::require(grid_points >= 2, "check_sufficient_conditions: u-grid needs at least two points");
    const auto& g = pr.grid();
    const Mesh& m = pr.mesh();
    const auto& levy = pr.levy();
    const auto& box = pr.box();
    const long K = g.last();
    const TimePath ubar = control_aggregate(pr, u_hat);

    std::vector<SamplePoint> pts;
    const std::size_t total = static_cast<std::size_t>(K) * m.interior().size();
    std::mt19937_64 gen(seed);
    if (sample_count >= total) {
        for (long n = 0; n < K; ++n)
            for (std::size_t i : m.interior()) pts.push_back({n, i});
    } else {
        std::uniform_int_distribution<long> step(0, K - 1);
        std::uniform_int_distribution<std::size_t> node(0, m.interior().size() - 1);
        for (std::size_t s = 0; s < sample_count; ++s) pts.push_back({step(gen), m.interior()[node(gen)]});
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SufficiencyReport rep;
    rep.samples = pts.size();
    HamiltonianPoint hp;
    hp.r.assign(levy.mark_count(), 0.0);
    auto load = [&](std::size_t s, const SamplePoint& sp) {
        hp.args = detail::point(m, g, sp.n, sp.node, forward[s].X[sp.n][sp.node], forward[s].Xbar[sp.n][sp.node],
                                u_hat.values[sp.n][sp.node], ubar[sp.n][sp.node]);
        hp.p = adjoint[s].p[sp.n][sp.node];
        hp.q = adjoint[s].q[sp.n][sp.node];
        for (std::size_t j = 0; j < hp.r.size(); ++j) hp.r[j] = adjoint[s].r[j][sp.n][sp.node];
    };
    auto mean_h = [&](const SamplePoint& sp, double u) {
        double acc = 0.0;
        for (std::size_t s = 0; s < forward.size(); ++s) {
            load(s, sp);
            hp.args.u = u;
            acc += eval_hamiltonian(pr.coeffs(), hp, levy, box);
        }
        return acc / static_cast<double>(forward.size());
    };

    for (const auto& sp : pts) {
        // (a) concavity along a random segment in (X, S_X, u, S_u), path 0's adjoint values
        load(0, sp);
        const PointArgs base = hp.args;
        PointArgs e1 = base, e2 = base;
        auto jitter = [&](double v) { return v * (0.5 + unit(gen)); };
        e1.X = jitter(base.X);
        e2.X = jitter(base.X);
        e1.Xbar = jitter(base.Xbar);
        e2.Xbar = jitter(base.Xbar);
        e1.u = box.lo + box.width() * unit(gen);
        e2.u = box.lo + box.width() * unit(gen);
        e1.ubar = jitter(base.ubar);
        e2.ubar = jitter(base.ubar);
        PointArgs mid = base;
        mid.X = 0.5 * (e1.X + e2.X);
        mid.Xbar = 0.5 * (e1.Xbar + e2.Xbar);
        mid.u = 0.5 * (e1.u + e2.u);
        mid.ubar = 0.5 * (e1.ubar + e2.ubar);
        auto h_at = [&](const PointArgs& a) {
            hp.args = a;
            return eval_hamiltonian(pr.coeffs(), hp, levy, box);
        };
        const double h1 = h_at(e1), h2 = h_at(e2), hm = h_at(mid);
        if (hm < 0.5 * (h1 + h2) - 1e-12 * (1.0 + std::abs(hm))) rep.concavity_failures.push_back(sp);

        // (b) maximum condition on a uniform u-grid
        const double at_hat = mean_h(sp, u_hat.values[sp.n][sp.node]);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < grid_points; ++k) {
            const double u = box.lo + box.width() * static_cast<double>(k) / static_cast<double>(grid_points - 1);
            best = std::max(best, mean_h(sp, u));
        }
        const double gap = best - at_hat;
        rep.worst_maximum_gap = std::max(rep.worst_maximum_gap, gap);
        if (gap > 1e-9 * (1.0 + std::abs(at_hat))) rep.maximum_failures.push_back(sp);
    }
    return rep;
}

// ---------------------------------------------------------------------------------------
// Projected gradient ascent

struct ImprovementStep {
    std::size_t iteration = 0;
    double J = 0.0;
    double stderr_ = 0.0;
    double gradient_norm = 0.0;
    std::size_t clamp_count = 0;
    double step_size = 0.0;
};

struct ImprovementResult {
    std::vector<ControlPath> controls;  ///< accepted iterates, starting with u0
    std::vector<ImprovementStep> trace;
    bool aborted = false;
    std::string message;
};

struct ImprovementOptions {
    double step_size = 0.5;
    std::size_t iterations = 50;
    double gradient_tol = 1e-8;
    std::size_t max_halvings = 30;
};

struct PlanAdjoints {
    std::vector<StatePath> forward;
    std::vector<AdjointPath> adjoint;
};

/// Forward paths and adjoints for a plan: exact discrete adjoint along zero-noise dynamics
/// in deterministic mode or for state-linear deterministic coefficients; Picard otherwise.
inline PlanAdjoints plan_adjoints(const Problem& pr, const ControlPath& u, const SamplingPlan& plan,
                                  const PicardOptions& popt = {}) {
    PlanAdjoints out;
    if (plan.deterministic) {
        out.forward.push_back(simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid())));
        out.adjoint.push_back(solve_adjoint_deterministic(pr, out.forward[0], u));
        return out;
    }
    out.forward.resize(plan.paths);
    std::vector<NoiseRealization> nz(plan.paths);
    const TimePath ubar = control_aggregate(pr, u);
    parallel_for(plan.paths, plan.threads, [&](std::size_t s) {
        nz[s] = plan_noise(pr, plan, s);
        out.forward[s] = simulate_forward(pr, u, ubar, nz[s]);
    });
    if (pr.coeffs().deterministic && pr.coeffs().linear_in_state) {
        out.adjoint.resize(plan.paths);
        parallel_for(plan.paths, plan.threads,
                     [&](std::size_t s) { out.adjoint[s] = solve_adjoint_deterministic(pr, out.forward[s], u); });
        return out;
    }
    out.adjoint = solve_adjoint_picard(pr, u, out.forward, nz, popt).paths;
    return out;
}

inline GradientField plan_gradient(const Problem& pr, const ControlPath& u, const SamplingPlan& plan,
                                   const PicardOptions& popt = {}) {
    if (plan.deterministic) return deterministic_gradient(pr, u);
    const PlanAdjoints pa = plan_adjoints(pr, u, plan, popt);
    return gradient_via_adjoint(pr, u, pa.forward, pa.adjoint);
}

/// Monte Carlo mode: the law is applied to the path mean of the plan's adjoint p, so the
/// fixed point zeroes the sampled gradient. The stored state is the first path.
inline FeedbackSolution solve_feedback(const Problem& pr, FeedbackLaw law, double beta, const ControlPath& start,
                                       const SamplingPlan& plan, const PicardOptions& popt = {}, double tol = 1e-10,
                                       std::size_t max_iter = 500) {
    return detail::feedback_fixed_point(pr, law, beta, start, tol, max_iter, [&](const ControlPath& u, FeedbackSolution& sol) {
        PlanAdjoints pa = plan_adjoints(pr, u, plan, popt);
        sol.state = std::move(pa.forward.front());
        sol.adjoint = std::move(pa.adjoint.front());
        auto mean = sol.adjoint.p.raw();
        for (std::size_t s = 1; s < pa.adjoint.size(); ++s) {
            const auto& src = pa.adjoint[s].p.raw();
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += src[k];
        }
        for (double& v : mean) v /= static_cast<double>(pa.adjoint.size());
    });
}

/// u <- clip(u + step * G) with step halving whenever J falls by more than 2 standard errors.
inline ImprovementResult improve_control(const Problem& pr, const ControlPath& u0, const SamplingPlan& plan,
                                         const ImprovementOptions& opt = {}) {
    if (!(opt.step_size >= 0.0)) throw InvalidArgument("improve_control: step_size must be >= 0");
    ImprovementResult out;
    ControlPath u = u0;
    PerformanceEstimate est = evaluate_performance(pr, u, plan);
    out.controls.push_back(u);
    double step = opt.step_size;
    for (std::size_t it = 1; it <= opt.iterations; ++it) {
        const GradientField grad = plan_gradient(pr, u, plan);
        const double gnorm = gradient_norm(pr, grad);
        if (out.trace.empty()) out.trace.push_back({0, est.mean, est.stderr_, gnorm, 0, step});
        if (gnorm <= opt.gradient_tol || step == 0.0) break;
        bool accepted = false;
        for (std::size_t h = 0; h <= opt.max_halvings; ++h) {
            ControlPath cand = u;
            std::size_t clamps = 0;
            for (long n = 0; n <= pr.grid().last(); ++n) {
                auto dst = cand.values[n];
                for (std::size_t i : pr.mesh().interior()) {
                    const double raw = dst[i] + step * grad.values[n][i];
                    dst[i] = pr.box().clip(raw);
                    if (dst[i] != raw) ++clamps;
                }
            }
            const PerformanceEstimate ce = evaluate_performance(pr, cand, plan);
            const double slack = 2.0 * std::hypot(ce.stderr_, est.stderr_);
            if (ce.mean >= est.mean - slack) {
                u = std::move(cand);
                est = ce;
                out.controls.push_back(u);
                out.trace.push_back({it, est.mean, est.stderr_, gnorm, clamps, step});
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            out.aborted = true;
            out.message = "improve_control: J kept decreasing after step halving";
            break;
        }
    }
    if (out.trace.empty()) out.trace.push_back({0, est.mean, est.stderr_, 0.0, 0, step});
    return out;
}

}  // namespace stic
