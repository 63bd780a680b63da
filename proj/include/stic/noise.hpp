#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "stic/error.hpp"
#include "stic/mesh.hpp"
#include "stic/time_grid.hpp"

namespace stic {

/// Compound-Poisson jump law with finitely many marks: nu(d zeta) = intensity * sum_j probs[j] delta_{marks[j]}.
struct LevySpec {
    double intensity = 0.0;
    std::vector<double> marks;
    std::vector<double> probs;

    std::size_t mark_count() const noexcept { return marks.size(); }
    /// nu({marks[j]}) per unit time.
    double nu_weight(std::size_t j) const { return intensity * probs.at(j); }

    void validate() const {
        detail::require(std::isfinite(intensity) && intensity >= 0.0, "LevySpec: intensity must be >= 0");
        detail::require(marks.size() == probs.size(), "LevySpec: one probability per mark");
        for (double z : marks) detail::require(std::isfinite(z) && z != 0.0, "LevySpec: marks must be nonzero");
        double total = 0.0;
        for (double p : probs) {
            detail::require(p >= 0.0, "LevySpec: probabilities must be nonnegative");
            total += p;
        }
        if (!marks.empty()) {
            detail::require(std::abs(total - 1.0) <= 1e-12, "LevySpec: probabilities must sum to 1");
        }
    }
};

/// Brownian increments and jump counts for one path on [0, T].
///
/// Step n covers (t_n, t_{n+1}]. Jump data is stored per (step, mark) both as a raw
/// count and as the compensated increment count - nu_weight * dt.
struct NoiseRealization {
    std::uint64_t seed = 0;
    std::uint64_t path_id = 0;
    TimeGrid grid;
    std::size_t marks = 0;
    bool deterministic = false;
    std::vector<double> dB;
    std::vector<std::uint32_t> counts;
    std::vector<double> compensated;

    double brownian(std::size_t step) const { return dB[step]; }
    std::uint32_t count(std::size_t step, std::size_t mark) const { return counts[step * marks + mark]; }
    double centered(std::size_t step, std::size_t mark) const { return compensated[step * marks + mark]; }
};

namespace detail {

/// Independent generator for (seed, path_id, channel). Channel 0 drives B, channel 1 + j drives mark j.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t path_id, std::uint64_t channel) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path_id), static_cast<std::uint32_t>(path_id >> 32),
                      static_cast<std::uint32_t>(channel), 0x5171c0deu};
    return std::mt19937_64(seq);
}

}  // namespace detail

/// dB ~ N(0, dt) i.i.d. and counts ~ Poisson(nu_weight(j) dt), from substreams keyed by
/// (seed, path_id, channel). Same inputs give bit-identical output.
inline NoiseRealization sample_noise(const LevySpec& spec, const TimeGrid& grid, std::uint64_t seed,
                                     std::uint64_t path_id) {
    spec.validate();
    detail::require(grid.dt > 0.0, "sample_noise: dt must be positive");
    NoiseRealization r;
    r.seed = seed;
    r.path_id = path_id;
    r.grid = grid;
    r.marks = spec.mark_count();
    r.dB.resize(grid.steps);
    r.counts.assign(grid.steps * r.marks, 0);
    r.compensated.assign(grid.steps * r.marks, 0.0);

    auto gen = detail::substream(seed, path_id, 0);
    std::normal_distribution<double> normal(0.0, std::sqrt(grid.dt));
    for (auto& db : r.dB) db = normal(gen);

    for (std::size_t j = 0; j < r.marks; ++j) {
        const double mean = spec.nu_weight(j) * grid.dt;
        auto jg = detail::substream(seed, path_id, 1 + j);
        if (mean > 0.0) {
            std::poisson_distribution<std::uint32_t> pois(mean);
            for (std::size_t n = 0; n < grid.steps; ++n) r.counts[n * r.marks + j] = pois(jg);
        }
        for (std::size_t n = 0; n < grid.steps; ++n) {
            r.compensated[n * r.marks + j] = static_cast<double>(r.counts[n * r.marks + j]) - mean;
        }
    }
    return r;
}

/// All noise channels removed: dB = 0 and compensated jump increments = 0.
inline NoiseRealization zero_noise(const LevySpec& spec, const TimeGrid& grid, std::uint64_t path_id = 0) {
    NoiseRealization r;
    r.path_id = path_id;
    r.grid = grid;
    r.marks = spec.mark_count();
    r.deterministic = true;
    r.dB.assign(grid.steps, 0.0);
    r.counts.assign(grid.steps * r.marks, 0);
    r.compensated.assign(grid.steps * r.marks, 0.0);
    return r;
}

/// sum_j gamma_j * (count_j - nu_weight(j) dt) on the mesh for one step.
inline Field compensated_increment(const LevySpec& spec, const NoiseRealization& noise, std::size_t step,
                                   std::span<const Field> gamma_per_mark) {
    detail::require(gamma_per_mark.size() == spec.mark_count(),
                    "compensated_increment: need one gamma field per mark in the support");
    detail::require(noise.marks == spec.mark_count(), "compensated_increment: realization/spec mismatch");
    detail::require(step < noise.grid.steps, "compensated_increment: step out of range");
    if (gamma_per_mark.empty()) throw InvalidArgument("compensated_increment: empty mark support");
    Field out(gamma_per_mark[0].mesh_ptr());
    for (std::size_t j = 0; j < gamma_per_mark.size(); ++j) {
        detail::require_same_mesh(out.mesh(), gamma_per_mark[j].mesh(), "compensated_increment");
        const double c = noise.centered(step, j);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += gamma_per_mark[j][i] * c;
    }
    return out;
}

}  // namespace stic
