#pragma once

#include <concepts>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "stic/adjoint.hpp"
#include "stic/control.hpp"
#include "stic/error.hpp"
#include "stic/forward.hpp"
#include "stic/noise.hpp"

namespace stic {

namespace fs = std::filesystem;

/// Shortest round-trip decimal form; stable across runs.
inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path) {
        if (path.has_parent_path()) ensure_directory(path.parent_path());
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw Error("cannot open " + path.string() + " for writing");
        row(header);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
        if (!out_) throw Error("write failed: " + path_.string());
    }

    CsvWriter& operator<<(const std::string& cell) {
        if (!first_) out_ << ',';
        out_ << cell;
        first_ = false;
        return *this;
    }
    CsvWriter& operator<<(double v) { return *this << format_number(v); }
    template <std::integral I>
    CsvWriter& operator<<(I v) {
        return *this << std::to_string(v);
    }

    void end_row() {
        out_ << '\n';
        first_ = true;
        if (!out_) throw Error("write failed: " + path_.string());
    }

    void close() {
        out_.close();
        if (out_.fail()) throw Error("write failed: " + path_.string());
    }

private:
    fs::path path_;
    std::ofstream out_;
    bool first_ = true;
};

namespace detail {

inline std::vector<std::string> node_columns(const Mesh& m) {
    return m.dim() == 2 ? std::vector<std::string>{"node", "ix", "iy"} : std::vector<std::string>{"node", "ix"};
}

inline void put_node(CsvWriter& w, const Mesh& m, std::size_t i) {
    const auto c = m.coords(i);
    w << i << c[0];
    if (m.dim() == 2) w << c[1];
}

}  // namespace detail

/// path_id, t, node, ix[, iy], X, Xbar  (Xbar empty on the initial segment)
inline void write_states_csv(const fs::path& path, const std::vector<StatePath>& paths, const TimeGrid& grid) {
    if (paths.empty()) throw InvalidArgument("write_states_csv: no paths");
    const Mesh& m = paths.front().X.mesh();
    std::vector<std::string> header{"path_id", "t"};
    for (auto& c : detail::node_columns(m)) header.push_back(c);
    header.push_back("X");
    header.push_back("Xbar");
    CsvWriter w(path, header);
    for (const auto& sp : paths) {
        for (long n = sp.X.first(); n <= sp.X.last(); ++n) {
            for (std::size_t i = 0; i < m.size(); ++i) {
                w << sp.path_id << grid.time(n);
                detail::put_node(w, m, i);
                w << sp.X[n][i];
                if (sp.Xbar.contains(n)) w << sp.Xbar[n][i];
                else w << std::string();
                w.end_row();
            }
        }
    }
    w.close();
}

/// path_id, t, node, ix[, iy], p, q, r_0 .. r_{M-1}
inline void write_adjoint_csv(const fs::path& path, const std::vector<AdjointPath>& paths, const TimeGrid& grid) {
    if (paths.empty()) throw InvalidArgument("write_adjoint_csv: no paths");
    const Mesh& m = paths.front().p.mesh();
    std::vector<std::string> header{"path_id", "t"};
    for (auto& c : detail::node_columns(m)) header.push_back(c);
    header.push_back("p");
    header.push_back("q");
    for (std::size_t j = 0; j < paths.front().r.size(); ++j) header.push_back("r_" + std::to_string(j));
    CsvWriter w(path, header);
    for (const auto& ap : paths) {
        for (long n = ap.p.first(); n <= ap.p.last(); ++n) {
            for (std::size_t i = 0; i < m.size(); ++i) {
                w << ap.path_id << grid.time(n);
                detail::put_node(w, m, i);
                w << ap.p[n][i] << ap.q[n][i];
                for (const auto& r : ap.r) w << r[n][i];
                w.end_row();
            }
        }
    }
    w.close();
}

/// t, node, ix[, iy], u  over [0, T]
inline void write_control_csv(const fs::path& path, const ControlPath& u, const TimeGrid& grid) {
    const Mesh& m = u.values.mesh();
    std::vector<std::string> header{"t"};
    for (auto& c : detail::node_columns(m)) header.push_back(c);
    header.push_back("u");
    CsvWriter w(path, header);
    for (long n = 0; n <= grid.last(); ++n) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            w << grid.time(n);
            detail::put_node(w, m, i);
            w << u.values[n][i];
            w.end_row();
        }
    }
    w.close();
}

inline void write_trace_csv(const fs::path& path, const std::vector<ImprovementStep>& trace) {
    CsvWriter w(path, {"iteration", "J", "stderr", "gradient_norm", "clamp_count", "step_size"});
    for (const auto& s : trace) {
        w << s.iteration << s.J << s.stderr_ << s.gradient_norm << s.clamp_count << s.step_size;
        w.end_row();
    }
    w.close();
}

/// path_id, step, dB, count_j, centered_j per mark
inline void write_noise_csv(const fs::path& path, const std::vector<NoiseRealization>& noise) {
    if (noise.empty()) throw InvalidArgument("write_noise_csv: no realizations");
    std::vector<std::string> header{"path_id", "step", "dB"};
    for (std::size_t j = 0; j < noise.front().marks; ++j) header.push_back("count_" + std::to_string(j));
    for (std::size_t j = 0; j < noise.front().marks; ++j) header.push_back("centered_" + std::to_string(j));
    CsvWriter w(path, header);
    for (const auto& nz : noise) {
        for (std::size_t k = 0; k < nz.grid.steps; ++k) {
            w << nz.path_id << k << nz.brownian(k);
            for (std::size_t j = 0; j < nz.marks; ++j) w << static_cast<long>(nz.count(k, j));
            for (std::size_t j = 0; j < nz.marks; ++j) w << nz.centered(k, j);
            w.end_row();
        }
    }
    w.close();
}

inline nlohmann::json picard_report_json(const PicardDiagnostics& d) {
    nlohmann::json j;
    j["iterations"] = d.iterations;
    j["converged"] = d.converged;
    j["increments"] = d.increments;
    j["p_increments"] = d.p_increments;
    j["q_increments"] = d.q_increments;
    j["r_increments"] = d.r_increments;
    j["ratios"] = d.ratios;
    j["alpha1"] = d.alpha1;
    j["alpha2"] = d.alpha2;
    j["lipschitz"] = d.lipschitz;
    j["alpha3"] = d.alpha3;
    j["regression_fallbacks"] = d.regression_fallbacks;
    if (d.increments.size() >= 3) {
        const auto s = picard_contraction_report(d);
        j["geometric_mean_ratio"] = s.geometric_mean;
        j["monotone_nonincreasing"] = s.monotone_nonincreasing;
        j["super_linear"] = s.super_linear;
    }
    return j;
}

inline void write_json(const fs::path& path, const nlohmann::json& doc) {
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw Error("write failed: " + path.string());
}

}  // namespace stic
