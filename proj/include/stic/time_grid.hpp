#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stic/error.hpp"
#include "stic/mesh.hpp"

namespace stic {

/// Uniform time grid t_n = n * dt with horizon T = steps * dt and delay window
/// delta = history * dt. Index n runs over [-history, steps] for forward paths and
/// over [0, steps + history] for adjoint paths.
struct TimeGrid {
    double dt = 0.0;
    std::size_t steps = 0;
    std::size_t history = 0;

    double horizon() const noexcept { return dt * static_cast<double>(steps); }
    double delay() const noexcept { return dt * static_cast<double>(history); }
    double time(long n) const noexcept { return dt * static_cast<double>(n); }
    long last() const noexcept { return static_cast<long>(steps); }

    bool operator==(const TimeGrid&) const = default;
};

namespace detail {

/// Returns the integer k with value == k * dt, or throws naming the multiple-of-dt rule.
inline std::size_t multiple_of(double value, double dt, const char* what) {
    const double ratio = value / dt;
    const double k = std::round(ratio);
    if (!(std::abs(ratio - k) <= 1e-9 * std::max(1.0, std::abs(ratio))) || k < 0) {
        throw InvalidArgument(std::string(what) + " must be an integer multiple of dt");
    }
    return static_cast<std::size_t>(k);
}

}  // namespace detail

inline TimeGrid make_time_grid(double horizon, double delay, double dt) {
    detail::require(dt > 0.0 && std::isfinite(dt), "time grid: dt must be positive");
    detail::require(horizon > 0.0, "time grid: T must be positive");
    detail::require(delay >= 0.0, "time grid: delta must be nonnegative");
    TimeGrid g;
    g.dt = dt;
    g.steps = detail::multiple_of(horizon, dt, "T");
    g.history = detail::multiple_of(delay, dt, "delta");
    detail::require(g.steps >= 1, "time grid: need at least one step");
    return g;
}

/// Fields on a mesh indexed by time index n in [first, last], stored contiguously.
class TimePath {
public:
    TimePath() = default;
    TimePath(MeshPtr mesh, long first, long last, double fill = 0.0)
        : mesh_(std::move(mesh)), first_(first), last_(last) {
        detail::require(mesh_ != nullptr, "TimePath: null mesh");
        detail::require(last >= first, "TimePath: empty index range");
        data_.assign(static_cast<std::size_t>(last - first + 1) * mesh_->size(), fill);
    }

    const Mesh& mesh() const { return *mesh_; }
    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    long first() const noexcept { return first_; }
    long last() const noexcept { return last_; }
    bool contains(long n) const noexcept { return n >= first_ && n <= last_; }
    std::size_t nodes() const noexcept { return mesh_->size(); }

    std::span<double> operator[](long n) {
        check(n);
        return {data_.data() + offset(n), mesh_->size()};
    }
    std::span<const double> operator[](long n) const {
        check(n);
        return {data_.data() + offset(n), mesh_->size()};
    }
    double at(long n, std::size_t node) const { return (*this)[n][node]; }

    Field field(long n) const {
        auto v = (*this)[n];
        return Field(mesh_, std::vector<double>(v.begin(), v.end()));
    }
    void set(long n, const Field& f) {
        detail::require_same_mesh(*mesh_, f.mesh(), "TimePath::set");
        auto dst = (*this)[n];
        std::copy(f.values().begin(), f.values().end(), dst.begin());
    }

    std::span<const double> raw() const noexcept { return data_; }
    std::span<double> raw() noexcept { return data_; }

private:
    void check(long n) const {
        if (n < first_ || n > last_) throw InvalidArgument("TimePath: time index out of range");
    }
    std::size_t offset(long n) const { return static_cast<std::size_t>(n - first_) * mesh_->size(); }

    MeshPtr mesh_;
    long first_ = 0;
    long last_ = -1;
    std::vector<double> data_;
};

/// Space-time H_T-type norm: sqrt(sum_n dt * |X_n|_H^2) over n in [from, to].
inline double space_time_norm(const TimePath& x, long from, long to, double dt) {
    double acc = 0.0;
    for (long n = from; n <= to; ++n) acc += inner_product_h(x[n], x[n], x.mesh());
    return std::sqrt(acc * dt);
}

}  // namespace stic
