#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stic/error.hpp"
#include "stic/mesh.hpp"
#include "stic/time_grid.hpp"

namespace stic {

enum class KernelKind { exponential, space_average, moving_average, tabulated };

inline const char* to_string(KernelKind k) {
    switch (k) {
        case KernelKind::exponential: return "exponential";
        case KernelKind::space_average: return "space_average";
        case KernelKind::moving_average: return "moving_average";
        case KernelKind::tabulated: return "tabulated";
    }
    return "?";
}

/// One row of a tabulated density: Q at time lag t - s and spatial offset y.
struct TabulatedEntry {
    double t_lag = 0.0;
    std::array<double, 2> offset{};
    double q = 0.0;
};

/// Continuous description of an interaction density Q(t, s, x, y).
///
///  exponential:    Q = scale * exp(-rho1 (t - s)) * exp(-rho2 |y|), |y| < theta (theta = 0: no spatial part)
///  space_average:  Q = scale / V(R_theta), current time slice only
///  moving_average: Q = scale over the window (t - delta, t], no spatial part
///  tabulated:      explicit (t_lag, y, Q) rows
struct KernelSpec {
    KernelKind kind = KernelKind::moving_average;
    double rho1 = 1.0;
    double rho2 = 1.0;
    double theta = 0.0;
    double delta = 0.0;
    double scale = 1.0;
    std::vector<TabulatedEntry> table;
};

/// Kernel sampled on a mesh and time grid. Weights absorb the quadrature measure
/// (dt for temporal kinds, cell volume for spatial kinds), so
///   S(X)(n, x) = sum_taps weight * X(n - lag, x + offset)
/// with X taken as zero outside the open domain.
class DiscreteKernel {
public:
    struct Tap {
        std::size_t lag = 0;
        double q = 0.0;       ///< raw density value
        double weight = 0.0;  ///< q times quadrature measure
    };
    /// All taps sharing one spatial offset, plus node maps for the offset.
    struct OffsetGroup {
        std::array<int, 2> offset{};
        std::vector<long> source;  ///< x -> x + offset if interior, else -1
        std::vector<long> target;  ///< z -> z - offset if interior, else -1
        std::vector<Tap> taps;
    };

    const Mesh& mesh() const { return *mesh_; }
    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    const TimeGrid& grid() const noexcept { return grid_; }
    KernelKind kind() const noexcept { return kind_; }
    std::size_t window() const noexcept { return window_; }
    bool temporal() const noexcept { return temporal_; }
    bool spatial() const noexcept { return spatial_; }
    double bound_M() const noexcept { return bound_m_; }
    std::span<const OffsetGroup> groups() const noexcept { return groups_; }
    std::size_t tap_count() const {
        std::size_t n = 0;
        for (const auto& g : groups_) n += g.taps.size();
        return n;
    }

    /// S(X) at time index n into out (all nodes; boundary entries are zero).
    void apply_at(const TimePath& x, long n, std::span<double> out) const {
        detail::require_same_mesh(*mesh_, x.mesh(), "apply_interaction");
        if (!x.contains(n) || !x.contains(n - static_cast<long>(window_) + 1)) {
            throw InvalidArgument("apply_interaction: path history shorter than the kernel window");
        }
        std::fill(out.begin(), out.end(), 0.0);
        const auto& interior = mesh_->interior();
        for (const auto& g : groups_) {
            for (const auto& tap : g.taps) {
                const auto row = x[n - static_cast<long>(tap.lag)];
                for (std::size_t i : interior) {
                    const long s = g.source[i];
                    if (s >= 0) out[i] += tap.weight * row[static_cast<std::size_t>(s)];
                }
            }
        }
    }

    Field apply_at(const TimePath& x, long n) const {
        Field out(mesh_);
        apply_at(x, n, out.values());
        return out;
    }

    /// S(X) on [0, T] for X on [-delta, T].
    TimePath apply(const TimePath& x) const {
        TimePath out(mesh_, 0, grid_.last());
        for (long n = 0; n <= grid_.last(); ++n) apply_at(x, n, out[n]);
        return out;
    }

    /// Transpose of apply() at time index n, using G values on [n, last_g] only:
    ///   (S* G)(n, z) = sum_taps weight * G(n + lag, z - offset).
    void dual_at(const TimePath& g, long n, long last_g, std::span<double> out) const {
        detail::require_same_mesh(*mesh_, g.mesh(), "apply_interaction_dual");
        std::fill(out.begin(), out.end(), 0.0);
        const auto& interior = mesh_->interior();
        for (const auto& grp : groups_) {
            for (const auto& tap : grp.taps) {
                const long m = n + static_cast<long>(tap.lag);
                if (m < g.first() || m > last_g) continue;
                const auto row = g[m];
                for (std::size_t z : interior) {
                    const long x = grp.target[z];
                    if (x >= 0) out[z] += tap.weight * row[static_cast<std::size_t>(x)];
                }
            }
        }
    }

    /// S* G on [-delta, T] for G on [0, T]; exact transpose of apply().
    TimePath apply_dual(const TimePath& g) const {
        detail::require_same_domain(g.first() == 0 && g.last() == grid_.last(),
                                    "apply_interaction_dual: G must be defined on [0, T]");
        TimePath out(mesh_, -static_cast<long>(grid_.history), grid_.last());
        for (long n = out.first(); n <= out.last(); ++n) dual_at(g, n, grid_.last(), out[n]);
        return out;
    }

private:
    friend DiscreteKernel build_kernel(const KernelSpec&, MeshPtr, const TimeGrid&);

    MeshPtr mesh_;
    TimeGrid grid_;
    KernelKind kind_ = KernelKind::moving_average;
    std::size_t window_ = 1;
    bool temporal_ = true;
    bool spatial_ = false;
    double bound_m_ = 0.0;
    std::vector<OffsetGroup> groups_;
};

namespace detail {

/// Integer offsets y with |y|_2 < theta (open ball), in lexicographic order.
inline std::vector<std::array<int, 2>> ball_offsets(const Mesh& m, double theta) {
    std::vector<std::array<int, 2>> out;
    const double hx = m.spacing(0);
    const double hy = m.dim() == 2 ? m.spacing(1) : 1.0;
    const int rx = static_cast<int>(std::ceil(theta / hx)) + 1;
    const int ry = m.dim() == 2 ? static_cast<int>(std::ceil(theta / hy)) + 1 : 0;
    for (int j = -ry; j <= ry; ++j) {
        for (int i = -rx; i <= rx; ++i) {
            const double d = std::hypot(i * hx, m.dim() == 2 ? j * hy : 0.0);
            if (d < theta) out.push_back({i, j});
        }
    }
    return out;
}

inline long shifted_interior(const Mesh& m, std::size_t node, std::array<int, 2> off) {
    const auto c = m.coords(node);
    const long ix = static_cast<long>(c[0]) + off[0];
    const long iy = static_cast<long>(c[1]) + off[1];
    const long nx = static_cast<long>(m.nodes(0));
    const long ny = m.dim() == 2 ? static_cast<long>(m.nodes(1)) : 1;
    if (ix < 0 || ix >= nx || iy < 0 || iy >= ny) return -1;
    const auto idx = static_cast<std::size_t>(ix + nx * iy);
    return m.on_boundary(idx) ? -1 : static_cast<long>(idx);
}

inline double offset_length(const Mesh& m, std::array<int, 2> off) {
    return std::hypot(off[0] * m.spacing(0), m.dim() == 2 ? off[1] * m.spacing(1) : 0.0);
}

}  // namespace detail

/// Samples a kernel spec on the mesh and time grid and computes its bound constant.
inline DiscreteKernel build_kernel(const KernelSpec& spec, MeshPtr mesh, const TimeGrid& grid) {
    detail::require(mesh != nullptr, "build_kernel: null mesh");
    detail::require(spec.theta >= 0.0 && spec.delta >= 0.0, "build_kernel: theta and delta must be nonnegative");
    detail::require(std::isfinite(spec.scale), "build_kernel: scale must be finite");
    const Mesh& m = *mesh;
    double min_h = m.spacing(0);
    if (m.dim() == 2) min_h = std::min(min_h, m.spacing(1));

    DiscreteKernel k;
    k.mesh_ = mesh;
    k.grid_ = grid;
    k.kind_ = spec.kind;

    std::size_t window = 1;
    const bool temporal = spec.kind != KernelKind::space_average;
    if (temporal) {
        detail::require(spec.delta > 0.0, "build_kernel: temporal kernels need delta > 0");
        window = detail::multiple_of(spec.delta, grid.dt, "kernel delta");
        detail::require(window <= grid.history, "build_kernel: kernel delta exceeds the path history");
    }
    bool spatial = false;
    std::vector<std::array<int, 2>> offsets{{0, 0}};
    if (spec.kind == KernelKind::space_average || (spec.kind == KernelKind::exponential && spec.theta > 0.0)) {
        if (spec.kind == KernelKind::space_average) {
            detail::require(spec.theta > 0.0, "build_kernel: space_average needs theta > 0");
        }
        if (spec.theta < min_h) {
            throw InvalidArgument("build_kernel: theta is smaller than one mesh cell");
        }
        spatial = true;
        offsets = detail::ball_offsets(m, spec.theta);
    }

    // lag/offset -> raw Q value
    std::map<std::pair<std::array<int, 2>, std::size_t>, double> q_values;
    const double vol = m.cell_volume();
    switch (spec.kind) {
        case KernelKind::exponential:
            for (const auto& off : offsets) {
                const double ql = spec.scale * std::exp(-spec.rho2 * detail::offset_length(m, off));
                for (std::size_t lag = 0; lag < window; ++lag) {
                    q_values[{off, lag}] = ql * std::exp(-spec.rho1 * grid.dt * static_cast<double>(lag));
                }
            }
            break;
        case KernelKind::space_average: {
            // Normalized by the discrete ball measure so that weights sum to exactly one.
            const double v = static_cast<double>(offsets.size()) * vol;
            for (const auto& off : offsets) q_values[{off, 0}] = spec.scale / v;
            break;
        }
        case KernelKind::moving_average:
            for (std::size_t lag = 0; lag < window; ++lag) q_values[{{0, 0}, lag}] = spec.scale;
            break;
        case KernelKind::tabulated: {
            detail::require(!spec.table.empty(), "build_kernel: tabulated kernel has no entries");
            spatial = true;
            for (const auto& e : spec.table) {
                detail::require(std::isfinite(e.q), "build_kernel: tabulated weights must be finite");
                const std::size_t lag = detail::multiple_of(e.t_lag, grid.dt, "tabulated t_lag");
                detail::require(lag < window, "build_kernel: tabulated t_lag outside the window [0, delta)");
                std::array<int, 2> off{};
                for (int a = 0; a < m.dim(); ++a) {
                    const auto ia = static_cast<std::size_t>(a);
                    const double r = e.offset[ia] / m.spacing(a);
                    const double ri = std::round(r);
                    detail::require(std::abs(r - ri) <= 1e-9 * std::max(1.0, std::abs(r)),
                                    "build_kernel: tabulated offsets must be multiples of the mesh spacing");
                    off[ia] = static_cast<int>(ri);
                }
                q_values[{off, lag}] += spec.scale * e.q;
            }
            break;
        }
    }
    k.window_ = window;
    k.temporal_ = temporal;
    k.spatial_ = spatial;

    const double measure = (temporal ? grid.dt : 1.0) * (spatial ? vol : 1.0);
    std::map<std::array<int, 2>, std::size_t> group_of;
    for (const auto& [key, q] : q_values) {
        const auto& off = key.first;
        auto it = group_of.find(off);
        if (it == group_of.end()) {
            DiscreteKernel::OffsetGroup g;
            g.offset = off;
            g.source.resize(m.size());
            g.target.resize(m.size());
            for (std::size_t i = 0; i < m.size(); ++i) {
                g.source[i] = detail::shifted_interior(m, i, off);
                g.target[i] = detail::shifted_interior(m, i, {-off[0], -off[1]});
            }
            it = group_of.emplace(off, k.groups_.size()).first;
            k.groups_.push_back(std::move(g));
        }
        k.groups_[it->second].taps.push_back({key.second, q, q * measure});
    }

    // Bound constant: sup over columns (s, z) of sum_{(t, x)} Q^2 dt dx, with t = s + lag
    // restricted to [0, T] and x = z - y restricted to the open domain.
    double bound = 0.0;
    const long first_s = -static_cast<long>(grid.history);
    for (std::size_t z : m.interior()) {
        for (long s = first_s; s <= grid.last(); ++s) {
            double col = 0.0;
            for (const auto& g : k.groups_) {
                if (g.target[z] < 0) continue;
                for (const auto& tap : g.taps) {
                    const long t = s + static_cast<long>(tap.lag);
                    if (t >= 0 && t <= grid.last()) col += tap.q * tap.q * measure;
                }
            }
            bound = std::max(bound, col);
        }
    }
    k.bound_m_ = bound;
    return k;
}

inline Field apply_interaction(const DiscreteKernel& k, const TimePath& x, long n) { return k.apply_at(x, n); }

inline TimePath apply_interaction_dual(const DiscreteKernel& k, const TimePath& g) { return k.apply_dual(g); }

inline double estimate_bound_M(const DiscreteKernel& k) { return k.bound_M(); }

/// Reads a tabulated density from CSV with columns t_lag, y_offset (one per axis), weight.
/// A non-numeric first line is treated as a header. Blank lines and '#' comments are skipped.
inline std::vector<TabulatedEntry> load_tabulated_kernel(const std::string& path, int dim) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("load_tabulated_kernel: cannot open " + path);
    std::vector<TabulatedEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> cols;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                cols.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (out.empty() && line_no == 1) continue;
            throw InvalidArgument(path + ":" + std::to_string(line_no) + ": non-numeric value");
        }
        if (cols.size() != static_cast<std::size_t>(dim) + 2) {
            throw InvalidArgument(path + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(dim + 2) + " columns");
        }
        TabulatedEntry e;
        e.t_lag = cols[0];
        for (int a = 0; a < dim; ++a) e.offset[static_cast<std::size_t>(a)] = cols[static_cast<std::size_t>(a) + 1];
        e.q = cols.back();
        out.push_back(e);
    }
    return out;
}

}  // namespace stic
