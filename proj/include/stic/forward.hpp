#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stic/error.hpp"
#include "stic/kernel.hpp"
#include "stic/mesh.hpp"
#include "stic/model.hpp"
#include "stic/noise.hpp"
#include "stic/time_grid.hpp"

namespace stic {

enum class Scheme { semi_implicit, explicit_euler };

inline const char* to_string(Scheme s) { return s == Scheme::semi_implicit ? "semi_implicit" : "explicit"; }

/// Control field on [-delta, T] with its admissible box. Rows with n < 0 are the fixed initial segment.
struct ControlPath {
    TimePath values;
    ControlBox box;

    /// Throws unless every value lies inside the box.
    void validate() const {
        box.validate();
        for (double v : values.raw()) {
            if (!std::isfinite(v) || !box.contains(v)) throw InvalidArgument("ControlPath: value outside the admissible box");
        }
    }
};

inline ControlPath constant_control(MeshPtr mesh, const TimeGrid& grid, const ControlBox& box, double value) {
    return {TimePath(std::move(mesh), -static_cast<long>(grid.history), grid.last(), value), box};
}

/// Simulated state on [-delta, T] plus the interaction field S(X) on [0, T].
struct StatePath {
    std::uint64_t path_id = 0;
    bool deterministic = false;
    TimePath X;
    TimePath Xbar;
    /// Fraction of (step, interior node) entries with X < 0 over (0, T].
    double negative_fraction = 0.0;
};

/// Everything fixed across forward runs: operator, kernel, coefficients, jump law,
/// initial segment eta on [-delta, 0] and boundary trace xi on [0, T].
class Problem {
public:
    Problem(EllipticOperator op, DiscreteKernel kernel, CoefficientSet coeffs, LevySpec levy, ControlBox box,
            TimePath history, TimePath boundary, Scheme scheme = Scheme::semi_implicit)
        : op_(std::move(op)),
          kernel_(std::move(kernel)),
          coeffs_(std::move(coeffs)),
          levy_(std::move(levy)),
          box_(box),
          history_(std::move(history)),
          boundary_(std::move(boundary)),
          scheme_(scheme) {
        const auto& g = kernel_.grid();
        detail::require_same_mesh(op_.mesh(), kernel_.mesh(), "Problem");
        detail::require_same_mesh(op_.mesh(), history_.mesh(), "Problem history");
        detail::require_same_mesh(op_.mesh(), boundary_.mesh(), "Problem boundary");
        detail::require_same_domain(history_.first() == -static_cast<long>(g.history) && history_.last() == 0,
                                    "Problem: initial segment must cover [-delta, 0]");
        detail::require_same_domain(boundary_.first() == 0 && boundary_.last() == g.last(),
                                    "Problem: boundary trace must cover [0, T]");
        levy_.validate();
        box_.validate();
        if (scheme_ == Scheme::semi_implicit) implicit_ = std::make_shared<ImplicitDiffusion>(op_, g.dt);
    }

    const Mesh& mesh() const { return op_.mesh(); }
    const MeshPtr& mesh_ptr() const { return op_.mesh_ptr(); }
    const TimeGrid& grid() const { return kernel_.grid(); }
    const EllipticOperator& op() const { return op_; }
    const DiscreteKernel& kernel() const { return kernel_; }
    const CoefficientSet& coeffs() const { return coeffs_; }
    const LevySpec& levy() const { return levy_; }
    const ControlBox& box() const { return box_; }
    const TimePath& history() const { return history_; }
    const TimePath& boundary() const { return boundary_; }
    Scheme scheme() const { return scheme_; }
    const ImplicitDiffusion* implicit() const { return implicit_.get(); }

    void set_coeffs(CoefficientSet c) { coeffs_ = std::move(c); }

    /// Explicit-scheme stability limit dt <= h^2 / (2 d max alpha).
    bool cfl_ok() const {
        const double a = op_.max_diffusion();
        if (a <= 0.0) return true;
        double h = mesh().spacing(0);
        if (mesh().dim() == 2) h = std::min(h, mesh().spacing(1));
        return grid().dt <= h * h / (2.0 * mesh().dim() * a);
    }

private:
    EllipticOperator op_;
    DiscreteKernel kernel_;
    CoefficientSet coeffs_;
    LevySpec levy_;
    ControlBox box_;
    TimePath history_;
    TimePath boundary_;
    Scheme scheme_;
    std::shared_ptr<const ImplicitDiffusion> implicit_;
};

/// Initial segment eta(t, x) sampled on [-delta, 0].
inline TimePath make_history(MeshPtr mesh, const TimeGrid& grid,
                             const std::function<double(double, std::array<double, 2>)>& eta) {
    TimePath h(mesh, -static_cast<long>(grid.history), 0);
    for (long n = h.first(); n <= 0; ++n) {
        auto row = h[n];
        for (std::size_t i = 0; i < mesh->size(); ++i) row[i] = eta(grid.time(n), mesh->position(i));
    }
    return h;
}

/// Boundary trace xi(t, x) on [0, T]; only boundary nodes are filled.
inline TimePath make_boundary(MeshPtr mesh, const TimeGrid& grid,
                              const std::function<double(double, std::array<double, 2>)>& xi) {
    TimePath b(mesh, 0, grid.last());
    for (long n = 0; n <= grid.last(); ++n) {
        auto row = b[n];
        for (std::size_t i : mesh->boundary()) row[i] = xi(grid.time(n), mesh->position(i));
    }
    return b;
}

/// Warning hook; default prints nothing. The CLI installs a stderr printer.
inline std::function<void(const std::string&)>& warning_sink() {
    static std::function<void(const std::string&)> sink;
    return sink;
}

namespace detail {

inline void warn(const std::string& msg) {
    if (auto& s = warning_sink()) s(msg);
}

inline void check_alignment(const Problem& pr, const ControlPath& u, const NoiseRealization& noise) {
    const auto& g = pr.grid();
    require_same_mesh(pr.mesh(), u.values.mesh(), "simulate_forward");
    require_same_domain(u.values.first() == -static_cast<long>(g.history) && u.values.last() == g.last(),
                        "simulate_forward: control must cover [-delta, T]");
    require_same_domain(noise.grid == g, "simulate_forward: noise grid differs from the problem grid");
    require_same_domain(noise.marks == pr.levy().mark_count(), "simulate_forward: noise mark count differs");
}

inline PointArgs point(const Mesh& m, const TimeGrid& g, long n, std::size_t i, double X, double Xbar, double u,
                       double ubar) {
    return {g.time(n), i, m.position(i), X, Xbar, u, ubar};
}

}  // namespace detail

/// Interaction field of a control path, S(u) on [0, T].
inline TimePath control_aggregate(const Problem& pr, const ControlPath& u) { return pr.kernel().apply(u.values); }

/// One forward path with a precomputed control aggregate S(u).
inline StatePath simulate_forward(const Problem& pr, const ControlPath& u, const TimePath& ubar,
                                  const NoiseRealization& noise) {
    detail::check_alignment(pr, u, noise);
    const auto& g = pr.grid();
    const Mesh& m = pr.mesh();
    const auto& c = pr.coeffs();
    const auto& levy = pr.levy();
    const std::size_t marks = levy.mark_count();
    const long K = g.last();
    if (pr.scheme() == Scheme::explicit_euler && !pr.cfl_ok()) {
        detail::warn("explicit scheme: dt exceeds the diffusion stability limit h^2/(2 d max alpha)");
    }

    StatePath out;
    out.path_id = noise.path_id;
    out.deterministic = noise.deterministic;
    out.X = TimePath(pr.mesh_ptr(), -static_cast<long>(g.history), K);
    out.Xbar = TimePath(pr.mesh_ptr(), 0, K);
    for (long n = -static_cast<long>(g.history); n <= 0; ++n) {
        auto src = pr.history()[n];
        std::copy(src.begin(), src.end(), out.X[n].begin());
    }

    std::vector<double> rhs(m.size()), ax(m.size());
    std::size_t negatives = 0;
    for (long n = 0; n < K; ++n) {
        pr.kernel().apply_at(out.X, n, out.Xbar[n]);
        const auto x = out.X[n];
        const auto xb = out.Xbar[n];
        const auto un = u.values[n];
        const auto ub = ubar[n];
        const double dB = noise.brownian(static_cast<std::size_t>(n));
        if (pr.scheme() == Scheme::explicit_euler) pr.op().apply(x, ax);
        for (std::size_t i : m.interior()) {
            const PointArgs a = detail::point(m, g, n, i, x[i], xb[i], un[i], ub[i]);
            double v = x[i] + g.dt * c.drift.value(a) + c.diffusion.value(a) * dB;
            for (std::size_t j = 0; j < marks; ++j) {
                const double dn = noise.centered(static_cast<std::size_t>(n), j);
                if (dn != 0.0) v += c.jump.value(a, j, levy.marks[j]) * dn;
            }
            if (pr.scheme() == Scheme::explicit_euler) v += g.dt * ax[i];
            rhs[i] = v;
        }
        const auto xi = pr.boundary()[n + 1];
        for (std::size_t i : m.boundary()) rhs[i] = xi[i];
        auto next = out.X[n + 1];
        if (pr.scheme() == Scheme::semi_implicit) {
            pr.implicit()->solve(rhs, next);
        } else {
            std::copy(rhs.begin(), rhs.end(), next.begin());
        }
        for (std::size_t i : m.interior()) {
            if (!std::isfinite(next[i])) throw NumericalError("simulate_forward: non-finite state");
            if (next[i] < 0.0) ++negatives;
        }
    }
    pr.kernel().apply_at(out.X, K, out.Xbar[K]);
    const double total = static_cast<double>(K) * static_cast<double>(m.interior().size());
    out.negative_fraction = total > 0 ? static_cast<double>(negatives) / total : 0.0;
    return out;
}

inline StatePath simulate_forward(const Problem& pr, const ControlPath& u, const NoiseRealization& noise) {
    return simulate_forward(pr, u, control_aggregate(pr, u), noise);
}

/// First variation Z of the state along a control direction v: the exact linearization
/// of the forward scheme around (base_X, base_u), with Z = 0 on the initial segment and
/// on the boundary. Aggregates S(Z) and S(v) enter through the partials in S_X and S_u.
inline TimePath simulate_variation(const Problem& pr, const StatePath& base, const ControlPath& base_u,
                                   const ControlPath& direction, const NoiseRealization& noise) {
    detail::check_alignment(pr, base_u, noise);
    detail::check_alignment(pr, direction, noise);
    const auto& g = pr.grid();
    const Mesh& m = pr.mesh();
    const auto& c = pr.coeffs();
    const auto& levy = pr.levy();
    const std::size_t marks = levy.mark_count();
    const long K = g.last();
    detail::require_same_domain(base.X.first() == -static_cast<long>(g.history) && base.X.last() == K,
                                "simulate_variation: base path does not cover [-delta, T]");
    detail::require_same_domain(base.path_id == noise.path_id && base.deterministic == noise.deterministic,
                                "simulate_variation: base path was simulated with different noise");

    const TimePath ubar = control_aggregate(pr, base_u);
    const TimePath vbar = control_aggregate(pr, direction);
    TimePath z(pr.mesh_ptr(), -static_cast<long>(g.history), K);
    std::vector<double> zbar(m.size()), rhs(m.size()), az(m.size());
    for (long n = 0; n < K; ++n) {
        pr.kernel().apply_at(z, n, zbar);
        const auto zn = z[n];
        const auto x = base.X[n];
        const auto xb = base.Xbar[n];
        const auto un = base_u.values[n];
        const auto ub = ubar[n];
        const auto vn = direction.values[n];
        const auto vb = vbar[n];
        const double dB = noise.brownian(static_cast<std::size_t>(n));
        if (pr.scheme() == Scheme::explicit_euler) pr.op().apply(zn, az);
        auto lin = [&](const Partials& d, std::size_t i) {
            return d.X * zn[i] + d.Xbar * zbar[i] + d.u * vn[i] + d.ubar * vb[i];
        };
        for (std::size_t i : m.interior()) {
            const PointArgs a = detail::point(m, g, n, i, x[i], xb[i], un[i], ub[i]);
            double v = zn[i] + g.dt * lin(c.drift.partials(a), i) + lin(c.diffusion.partials(a), i) * dB;
            for (std::size_t j = 0; j < marks; ++j) {
                const double dn = noise.centered(static_cast<std::size_t>(n), j);
                if (dn != 0.0) v += lin(c.jump.partials(a, j, levy.marks[j]), i) * dn;
            }
            if (pr.scheme() == Scheme::explicit_euler) v += g.dt * az[i];
            rhs[i] = v;
        }
        for (std::size_t i : m.boundary()) rhs[i] = 0.0;
        auto next = z[n + 1];
        if (pr.scheme() == Scheme::semi_implicit) {
            pr.implicit()->solve(rhs, next);
        } else {
            std::copy(rhs.begin(), rhs.end(), next.begin());
        }
    }
    return z;
}

}  // namespace stic
