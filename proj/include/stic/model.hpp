#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stic/error.hpp"
#include "stic/kernel.hpp"
#include "stic/mesh.hpp"
#include "stic/noise.hpp"

namespace stic {

/// Arguments of a pointwise coefficient: (t, x, X, S_X, u, S_u).
struct PointArgs {
    double t = 0.0;
    std::size_t node = 0;
    std::array<double, 2> x{};
    double X = 0.0;
    double Xbar = 0.0;
    double u = 0.0;
    double ubar = 0.0;
};

/// Partial derivatives with respect to X, S_X, u and S_u.
struct Partials {
    double X = 0.0;
    double Xbar = 0.0;
    double u = 0.0;
    double ubar = 0.0;
};

struct Coefficient {
    std::function<double(const PointArgs&)> value;
    std::function<Partials(const PointArgs&)> partials;

    static Coefficient zero() {
        return {[](const PointArgs&) { return 0.0; }, [](const PointArgs&) { return Partials{}; }};
    }
};

/// Jump coefficient gamma(t, x, X, S_X, u, S_u, zeta); the mark index is passed alongside zeta.
struct JumpCoefficient {
    std::function<double(const PointArgs&, std::size_t, double)> value;
    std::function<Partials(const PointArgs&, std::size_t, double)> partials;

    static JumpCoefficient zero() {
        return {[](const PointArgs&, std::size_t, double) { return 0.0; },
                [](const PointArgs&, std::size_t, double) { return Partials{}; }};
    }
};

/// Terminal reward g(x, X(T)) and its derivative in X.
struct TerminalReward {
    std::function<double(std::size_t, std::array<double, 2>, double)> value;
    std::function<double(std::size_t, std::array<double, 2>, double)> derivative;
};

/// Admissible control values [lo, hi].
struct ControlBox {
    double lo = 0.0;
    double hi = 1.0;

    bool contains(double u) const noexcept { return u >= lo && u <= hi; }
    double clip(double u) const noexcept { return std::clamp(u, lo, hi); }
    double width() const noexcept { return hi - lo; }
    double mid() const noexcept { return 0.5 * (lo + hi); }
    void validate() const {
        detail::require(std::isfinite(lo) && std::isfinite(hi) && lo <= hi, "ControlBox: need lo <= hi");
    }
};

/// Model functions of the controlled system and the performance functional.
///
/// `drift` is the full reaction term of the state equation, including the harvesting
/// term (the state equation is dX = (A X + drift) dt + diffusion dB + jump dN~).
struct CoefficientSet {
    std::string name;
    Coefficient drift;
    Coefficient diffusion;
    JumpCoefficient jump;
    Coefficient reward;
    TerminalReward terminal;
    bool linear_in_state = false;
    bool deterministic = true;
};

/// Point at which the Hamiltonian is evaluated; r holds one value per mark.
struct HamiltonianPoint {
    PointArgs args;
    double p = 0.0;
    double q = 0.0;
    std::vector<double> r;
};

/// H = f + b p + sigma q + sum_j gamma(zeta_j) r_j nu({zeta_j}).
inline double eval_hamiltonian(const CoefficientSet& c, const HamiltonianPoint& pt, const LevySpec& levy,
                               const ControlBox& box) {
    if (!box.contains(pt.args.u)) throw InvalidArgument("eval_hamiltonian: u outside the admissible box");
    detail::require(pt.r.size() == levy.mark_count(), "eval_hamiltonian: one r value per mark");
    double h = c.reward.value(pt.args) + c.drift.value(pt.args) * pt.p + c.diffusion.value(pt.args) * pt.q;
    for (std::size_t j = 0; j < levy.mark_count(); ++j) {
        h += c.jump.value(pt.args, j, levy.marks[j]) * pt.r[j] * levy.nu_weight(j);
    }
    return h;
}

/// Chain-rule partials of H in (X, S_X, u, S_u).
inline Partials hamiltonian_partials(const CoefficientSet& c, const HamiltonianPoint& pt, const LevySpec& levy) {
    detail::require(c.reward.partials && c.drift.partials && c.diffusion.partials && c.jump.partials,
                    "hamiltonian_partials: coefficient set is missing a partial-derivative evaluator");
    detail::require(pt.r.size() == levy.mark_count(), "hamiltonian_partials: one r value per mark");
    const Partials f = c.reward.partials(pt.args);
    const Partials b = c.drift.partials(pt.args);
    const Partials s = c.diffusion.partials(pt.args);
    Partials h{f.X + b.X * pt.p + s.X * pt.q, f.Xbar + b.Xbar * pt.p + s.Xbar * pt.q,
               f.u + b.u * pt.p + s.u * pt.q, f.ubar + b.ubar * pt.p + s.ubar * pt.q};
    for (std::size_t j = 0; j < levy.mark_count(); ++j) {
        const Partials g = c.jump.partials(pt.args, j, levy.marks[j]);
        const double w = pt.r[j] * levy.nu_weight(j);
        h.X += g.X * w;
        h.Xbar += g.Xbar * w;
        h.u += g.u * w;
        h.ubar += g.ubar * w;
    }
    return h;
}

/// Kernel-dual of a path of dH/dS_X (or dH/dS_u) values on [0, T]; result lives on [-delta, T].
inline TimePath hamiltonian_dual_derivative(const DiscreteKernel& k, const TimePath& partial_path) {
    return k.apply_dual(partial_path);
}

/// Spatial profile  base + amplitude * prod_a sin(pi x_a / L_a), used for k(x) and initial data.
struct Profile {
    double base = 1.0;
    double amplitude = 0.0;

    double operator()(std::array<double, 2> x, const Mesh& m) const {
        double s = 1.0;
        for (int a = 0; a < m.dim(); ++a) {
            s *= std::sin(M_PI * x[static_cast<std::size_t>(a)] / m.extent(a));
        }
        return base + amplitude * s;
    }
};

/// Parameters of the population models with state feedback (g1 X + g2 S_X) (g3 dt + g4 dB + g5 dN~).
struct HarvestParams {
    double gamma1 = 1.0;
    double gamma2 = 0.0;
    double gamma3 = 0.0;
    double gamma4 = 0.0;
    std::vector<double> gamma5;  ///< one value per mark
    Profile k;
    double beta = 0.5;  ///< exponent of the power utility
};

/// Linear state dynamics with a quadratic-in-control reward.
struct LinearGenericParams {
    double a0 = 0.0, a1 = 0.2, a2 = 0.3, a3 = 0.1;  ///< b = a0 + a1 X + a2 S_X + a3 S_u - u
    double s0 = 0.0, s1 = 0.2;                      ///< sigma = s0 + s1 X
    double c1 = 0.5;                                ///< gamma = zeta * c1 * X
    double reward_x = 0.1, weight_u = 1.0, u_ref = 1.0, reward_ubar = 0.05;
    Profile k;
};

/// Nonlinear nonlocal logistic growth with proportional harvesting effort u.
struct LogisticParams {
    double growth = 1.0;       ///< b = growth X - crowding X S_X - u X
    double crowding = 0.5;
    double volatility = 0.2;   ///< sigma = volatility X
    double jump_scale = 1.0;   ///< gamma = jump_scale * zeta * X
    double cost = 0.5;         ///< f = u X - cost u^2 / 2
    Profile k;
};

namespace detail {

inline Coefficient harvest_drift(const HarvestParams& p) {
    return {[p](const PointArgs& a) { return p.gamma3 * (p.gamma1 * a.X + p.gamma2 * a.Xbar) - a.u; },
            [p](const PointArgs&) { return Partials{p.gamma3 * p.gamma1, p.gamma3 * p.gamma2, -1.0, 0.0}; }};
}

inline void harvest_noise(CoefficientSet& c, const HarvestParams& p, const LevySpec& levy) {
    detail::require(p.gamma5.size() == levy.mark_count() || p.gamma5.empty(),
                    "harvest coefficients: gamma5 needs one value per mark");
    c.diffusion = {[p](const PointArgs& a) { return p.gamma4 * (p.gamma1 * a.X + p.gamma2 * a.Xbar); },
                   [p](const PointArgs&) { return Partials{p.gamma4 * p.gamma1, p.gamma4 * p.gamma2, 0.0, 0.0}; }};
    std::vector<double> g5 = p.gamma5;
    if (g5.empty()) g5.assign(levy.mark_count(), 0.0);
    c.jump = {[p, g5](const PointArgs& a, std::size_t j, double) {
                  return g5[j] * (p.gamma1 * a.X + p.gamma2 * a.Xbar);
              },
              [p, g5](const PointArgs&, std::size_t j, double) {
                  return Partials{g5[j] * p.gamma1, g5[j] * p.gamma2, 0.0, 0.0};
              }};
}

}  // namespace detail

/// Log utility: f = log u, g = k(x) log X(T).
inline CoefficientSet harvest_log(const HarvestParams& p, const LevySpec& levy, MeshPtr mesh) {
    CoefficientSet c;
    c.name = "harvest_log";
    c.drift = detail::harvest_drift(p);
    detail::harvest_noise(c, p, levy);
    c.reward = {[](const PointArgs& a) { return std::log(a.u); },
                [](const PointArgs& a) { return Partials{0.0, 0.0, 1.0 / a.u, 0.0}; }};
    const Profile k = p.k;
    c.terminal = {[k, mesh](std::size_t, std::array<double, 2> x, double X) { return k(x, *mesh) * std::log(X); },
                  [k, mesh](std::size_t, std::array<double, 2> x, double X) { return k(x, *mesh) / X; }};
    c.linear_in_state = true;
    c.deterministic = true;
    return c;
}

/// Power utility: f = u^beta / beta, g = k(x) X(T).
inline CoefficientSet harvest_power(const HarvestParams& p, const LevySpec& levy, MeshPtr mesh) {
    detail::require(p.beta > 0.0 && p.beta < 1.0, "harvest_power: beta must lie in (0, 1)");
    CoefficientSet c;
    c.name = "harvest_power";
    c.drift = detail::harvest_drift(p);
    detail::harvest_noise(c, p, levy);
    const double beta = p.beta;
    c.reward = {[beta](const PointArgs& a) { return std::pow(a.u, beta) / beta; },
                [beta](const PointArgs& a) { return Partials{0.0, 0.0, std::pow(a.u, beta - 1.0), 0.0}; }};
    const Profile k = p.k;
    c.terminal = {[k, mesh](std::size_t, std::array<double, 2> x, double X) { return k(x, *mesh) * X; },
                  [k, mesh](std::size_t, std::array<double, 2> x, double) { return k(x, *mesh); }};
    c.linear_in_state = true;
    c.deterministic = true;
    return c;
}

inline CoefficientSet linear_generic(const LinearGenericParams& p, MeshPtr mesh) {
    CoefficientSet c;
    c.name = "linear_generic";
    c.drift = {[p](const PointArgs& a) { return p.a0 + p.a1 * a.X + p.a2 * a.Xbar + p.a3 * a.ubar - a.u; },
               [p](const PointArgs&) { return Partials{p.a1, p.a2, -1.0, p.a3}; }};
    c.diffusion = {[p](const PointArgs& a) { return p.s0 + p.s1 * a.X; },
                   [p](const PointArgs&) { return Partials{p.s1, 0.0, 0.0, 0.0}; }};
    c.jump = {[p](const PointArgs& a, std::size_t, double z) { return z * p.c1 * a.X; },
              [p](const PointArgs&, std::size_t, double z) { return Partials{z * p.c1, 0.0, 0.0, 0.0}; }};
    c.reward = {[p](const PointArgs& a) {
                    const double d = a.u - p.u_ref;
                    return p.reward_x * a.X - 0.5 * p.weight_u * d * d + p.reward_ubar * a.ubar;
                },
                [p](const PointArgs& a) {
                    return Partials{p.reward_x, 0.0, -p.weight_u * (a.u - p.u_ref), p.reward_ubar};
                }};
    const Profile k = p.k;
    c.terminal = {[k, mesh](std::size_t, std::array<double, 2> x, double X) { return k(x, *mesh) * X; },
                  [k, mesh](std::size_t, std::array<double, 2> x, double) { return k(x, *mesh); }};
    c.linear_in_state = true;
    c.deterministic = true;
    return c;
}

inline CoefficientSet logistic_nonlocal(const LogisticParams& p, MeshPtr mesh) {
    CoefficientSet c;
    c.name = "logistic_nonlocal";
    c.drift = {[p](const PointArgs& a) { return p.growth * a.X - p.crowding * a.X * a.Xbar - a.u * a.X; },
               [p](const PointArgs& a) {
                   return Partials{p.growth - p.crowding * a.Xbar - a.u, -p.crowding * a.X, -a.X, 0.0};
               }};
    c.diffusion = {[p](const PointArgs& a) { return p.volatility * a.X; },
                   [p](const PointArgs&) { return Partials{p.volatility, 0.0, 0.0, 0.0}; }};
    c.jump = {[p](const PointArgs& a, std::size_t, double z) { return p.jump_scale * z * a.X; },
              [p](const PointArgs&, std::size_t, double z) { return Partials{p.jump_scale * z, 0.0, 0.0, 0.0}; }};
    c.reward = {[p](const PointArgs& a) { return a.u * a.X - 0.5 * p.cost * a.u * a.u; },
                [p](const PointArgs& a) { return Partials{a.u, 0.0, a.X - p.cost * a.u, 0.0}; }};
    const Profile k = p.k;
    c.terminal = {[k, mesh](std::size_t, std::array<double, 2> x, double X) { return k(x, *mesh) * X; },
                  [k, mesh](std::size_t, std::array<double, 2> x, double) { return k(x, *mesh); }};
    c.linear_in_state = false;
    c.deterministic = true;
    return c;
}

inline std::vector<std::string> builtin_coefficient_sets() {
    return {"harvest_log", "harvest_power", "linear_generic", "logistic_nonlocal"};
}

/// Largest relative mismatch between supplied partials and central differences.
struct PartialsCheck {
    double max_relative_error = 0.0;
    std::string worst;  ///< which evaluator/argument produced the maximum
    std::size_t probes = 0;
};

/// Compares every supplied partial with central finite differences on random probes.
/// State samples come from [state_lo, state_hi]; controls from the box.
inline PartialsCheck check_partials(const CoefficientSet& c, const LevySpec& levy, const ControlBox& box,
                                    const Mesh& mesh, std::size_t probes, std::uint64_t seed,
                                    double state_lo = 0.2, double state_hi = 3.0) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> state(state_lo, state_hi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> node(0, mesh.size() - 1);
    PartialsCheck out;
    out.probes = probes;

    auto fd = [](const std::function<double(const PointArgs&)>& f, PointArgs a, double PointArgs::*field) {
        const double h = 1e-5 * std::max(1.0, std::abs(a.*field));
        PointArgs lo = a, hi = a;
        lo.*field -= h;
        hi.*field += h;
        return (f(hi) - f(lo)) / (2.0 * h);
    };
    auto compare = [&](const std::string& label, double analytic, double numeric) {
        const double err = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
        if (err > out.max_relative_error) {
            out.max_relative_error = err;
            out.worst = label;
        }
    };
    const double margin = 1e-4 * std::max(box.width(), 1e-8);
    for (std::size_t k = 0; k < probes; ++k) {
        PointArgs a;
        a.node = node(gen);
        a.x = mesh.position(a.node);
        a.t = unit(gen);
        a.X = state(gen);
        a.Xbar = state(gen) * 0.5;
        a.u = box.lo + margin + (box.width() - 2.0 * margin) * unit(gen);
        a.ubar = box.lo + box.width() * unit(gen);
        struct Named {
            const char* name;
            const Coefficient* coeff;
        };
        for (const Named& e : {Named{"drift", &c.drift}, Named{"diffusion", &c.diffusion}, Named{"reward", &c.reward}}) {
            const Partials p = e.coeff->partials(a);
            const std::string n = e.name;
            compare(n + ".X", p.X, fd(e.coeff->value, a, &PointArgs::X));
            compare(n + ".Xbar", p.Xbar, fd(e.coeff->value, a, &PointArgs::Xbar));
            compare(n + ".u", p.u, fd(e.coeff->value, a, &PointArgs::u));
            compare(n + ".ubar", p.ubar, fd(e.coeff->value, a, &PointArgs::ubar));
        }
        for (std::size_t j = 0; j < levy.mark_count(); ++j) {
            auto f = [&](const PointArgs& b) { return c.jump.value(b, j, levy.marks[j]); };
            const Partials p = c.jump.partials(a, j, levy.marks[j]);
            compare("jump.X", p.X, fd(f, a, &PointArgs::X));
            compare("jump.Xbar", p.Xbar, fd(f, a, &PointArgs::Xbar));
            compare("jump.u", p.u, fd(f, a, &PointArgs::u));
            compare("jump.ubar", p.ubar, fd(f, a, &PointArgs::ubar));
        }
        const double h = 1e-5 * std::max(1.0, a.X);
        const double gfd = (c.terminal.value(a.node, a.x, a.X + h) - c.terminal.value(a.node, a.x, a.X - h)) / (2.0 * h);
        compare("terminal.X", c.terminal.derivative(a.node, a.x, a.X), gfd);
    }
    return out;
}

/// Construction-time validation: throws when any partial disagrees with finite differences.
inline void validate_partials(const CoefficientSet& c, const LevySpec& levy, const ControlBox& box, const Mesh& mesh,
                              std::size_t probes = 200, std::uint64_t seed = 7) {
    const auto res = check_partials(c, levy, box, mesh, probes, seed);
    if (res.max_relative_error > 1e-6) {
        throw InvalidArgument("coefficient set '" + c.name + "': supplied partial " + res.worst +
                              " disagrees with finite differences");
    }
}

}  // namespace stic
