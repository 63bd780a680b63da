#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "stic/adjoint.hpp"
#include "stic/config.hpp"
#include "stic/control.hpp"
#include "stic/forward.hpp"
#include "stic/io.hpp"
#include "stic/scenario.hpp"
#include "stic/verify.hpp"

namespace stic {

inline constexpr const char* kToolName = "stic";
inline constexpr const char* kVersion = "0.1.0";

struct CliOverrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
};

namespace cli_detail {

struct RunContext {
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    fs::path out_dir;
    std::vector<std::string> files;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

inline RunContext prepare(ExperimentConfig cfg, const CliOverrides& o) {
    RunContext ctx;
    if (o.paths) {
        if (*o.paths < 1) throw ConfigError("--paths: must be >= 1");
        cfg.paths = *o.paths;
        cfg.effective["paths"] = cfg.paths;
    }
    if (o.threads) {
        cfg.threads = *o.threads;
        cfg.effective["threads"] = cfg.threads;
    }
    ctx.seed = resolve_seed(o.seed, cfg);
    cfg.seed = ctx.seed;
    cfg.effective["seed"] = ctx.seed;
    ctx.out_dir = o.out ? fs::path(*o.out) : fs::path(cfg.output_dir);
    if (o.out) cfg.effective["output_dir"] = *o.out;
    ctx.cfg = std::move(cfg);
    ensure_directory(ctx.out_dir);
    return ctx;
}

inline fs::path file(RunContext& ctx, const std::string& name) {
    ctx.files.push_back(name);
    return ctx.out_dir / name;
}

/// Effective config echo plus the run manifest.
inline void finish(RunContext& ctx, const std::string& command, nlohmann::json extra = nlohmann::json::object()) {
    write_json(ctx.out_dir / "config.json", ctx.cfg.effective);
    ctx.files.push_back("config.json");
    nlohmann::json m;
    m["tool"] = kToolName;
    m["version"] = kVersion;
    m["command"] = command;
    m["seed"] = ctx.seed;
    m["config"] = ctx.cfg.effective;
    m["versions"] = {{"stic", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    m["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count();
    std::vector<std::string> files = ctx.files;
    files.push_back("manifest.json");
    m["files"] = files;
    if (!extra.empty()) m["summary"] = std::move(extra);
    write_json(ctx.out_dir / "manifest.json", m);
}

inline SamplingPlan plan_of(const RunContext& ctx) { return sampling_plan(ctx.cfg, ctx.seed); }

inline int cmd_simulate(RunContext& ctx, std::ostream& out) {
    const Problem pr = build_problem(ctx.cfg);
    const ControlPath u = initial_control(ctx.cfg, pr);
    const SamplingPlan plan = plan_of(ctx);
    const std::size_t n = plan_paths(plan);
    std::vector<StatePath> paths(n);
    std::vector<NoiseRealization> noise(n);
    const TimePath ubar = control_aggregate(pr, u);
    parallel_for(n, plan.threads, [&](std::size_t s) {
        noise[s] = plan_noise(pr, plan, s);
        paths[s] = simulate_forward(pr, u, ubar, noise[s]);
    });
    const PerformanceEstimate J = evaluate_performance(pr, u, paths);
    double neg = 0.0;
    for (const auto& p : paths) neg += p.negative_fraction;
    neg /= static_cast<double>(n);
    write_states_csv(file(ctx, "states.csv"), paths, pr.grid());
    if (!plan.deterministic) write_noise_csv(file(ctx, "noise.csv"), noise);
    CsvWriter w(file(ctx, "performance.csv"), {"paths", "J", "stderr", "running", "terminal", "negative_fraction"});
    w << n << J.mean << J.stderr_ << J.running << J.terminal << neg;
    w.end_row();
    w.close();
    out << "simulate: " << n << " path(s), J = " << format_number(J.mean) << " +- " << format_number(J.stderr_)
        << ", negative fraction " << format_number(neg) << "\n";
    finish(ctx, "simulate", {{"J", J.mean}, {"stderr", J.stderr_}, {"negative_fraction", neg}});
    return 0;
}

inline int cmd_adjoint(RunContext& ctx, std::ostream& out) {
    const Problem pr = build_problem(ctx.cfg);
    const ControlPath u = initial_control(ctx.cfg, pr);
    const SamplingPlan plan = plan_of(ctx);
    const std::size_t n = plan_paths(plan);
    std::vector<StatePath> fw(n);
    std::vector<NoiseRealization> noise(n);
    const TimePath ubar = control_aggregate(pr, u);
    parallel_for(n, plan.threads, [&](std::size_t s) {
        noise[s] = plan_noise(pr, plan, s);
        fw[s] = simulate_forward(pr, u, ubar, noise[s]);
    });
    nlohmann::json report;
    std::vector<AdjointPath> adj;
    const auto cc = measure_coercivity(pr.op());
    if (plan.deterministic) {
        adj.push_back(solve_adjoint_deterministic(pr, fw[0], u));
        report = {{"backend", "deterministic"}, {"alpha1", cc.alpha1}, {"alpha2", cc.alpha2}};
        out << "adjoint: deterministic backend\n";
    } else {
        PicardOptions popt = ctx.cfg.picard;
        PicardResult res = solve_adjoint_picard(pr, u, fw, noise, popt);
        report = picard_report_json(res.diagnostics);
        report["backend"] = "picard";
        adj = std::move(res.paths);
        out << "adjoint: Picard backend, " << res.diagnostics.iterations << " iteration(s), "
            << (res.diagnostics.converged ? "converged" : "NOT converged") << ", C = "
            << format_number(res.diagnostics.lipschitz) << "\n";
    }
    write_adjoint_csv(file(ctx, "adjoint.csv"), adj, pr.grid());
    write_json(file(ctx, "adjoint_report.json"), report);
    finish(ctx, "adjoint", report);
    return 0;
}

inline int cmd_optimize(RunContext& ctx, std::ostream& out) {
    const Problem pr = build_problem(ctx.cfg);
    const ControlPath u0 = initial_control(ctx.cfg, pr);
    const ImprovementResult res = improve_control(pr, u0, plan_of(ctx), ctx.cfg.optimize);
    write_trace_csv(file(ctx, "trace.csv"), res.trace);
    write_control_csv(file(ctx, "control.csv"), res.controls.back(), pr.grid());
    const auto& last = res.trace.back();
    out << "optimize: " << res.trace.size() << " trace row(s), J = " << format_number(last.J)
        << ", gradient norm " << format_number(last.gradient_norm) << "\n";
    if (res.aborted) out << "optimize: " << res.message << "\n";
    finish(ctx, "optimize", {{"J", last.J}, {"aborted", res.aborted}});
    return 0;
}

inline int cmd_verify(RunContext& ctx, const CliOverrides& o, std::ostream& out) {
    VerifyOptions vo;
    vo.seed = ctx.seed;
    vo.paths = o.paths ? *o.paths : std::min<std::size_t>(ctx.cfg.paths, 200);
    vo.threads = ctx.cfg.threads;
    const auto checks = run_verify(ctx.cfg, vo);
    std::size_t passed = 0;
    for (const auto& c : checks) {
        passed += c.passed ? 1 : 0;
        out << (c.passed ? "PASS " : "FAIL ") << c.name << "  value=" << format_number(c.value)
            << "  threshold=" << format_number(c.threshold) << "  " << c.detail << "\n";
    }
    out << "verify: " << passed << "/" << checks.size() << " checks passed\n";
    write_verify_csv(file(ctx, "verify.csv"), checks);
    finish(ctx, "verify", {{"passed", passed}, {"total", checks.size()}});
    return passed == checks.size() ? 0 : 1;
}

inline int cmd_scenario(RunContext& ctx, std::ostream& out) {
    const Problem pr = build_problem(ctx.cfg);
    ScenarioOptions so;
    so.seed = ctx.seed;
    if (ctx.cfg.monte_carlo) so.monte_carlo = plan_of(ctx);
    const ScenarioReport rep = run_scenario(pr, ctx.cfg, so);
    write_control_csv(file(ctx, "control.csv"), rep.feedback.control, pr.grid());
    write_states_csv(file(ctx, "state.csv"), {rep.feedback.state}, pr.grid());
    write_adjoint_csv(file(ctx, "adjoint.csv"), {rep.feedback.adjoint}, pr.grid());
    if (rep.mc_applicable()) write_control_csv(file(ctx, "control_mc.csv"), rep.mc_feedback.control, pr.grid());
    {
        CsvWriter w(file(ctx, "perturbations.csv"), {"index", "sup_norm", "gap", "mc_gap", "mc_stderr", "passed"});
        for (std::size_t k = 0; k < rep.perturbations.size(); ++k) {
            const auto& p = rep.perturbations[k];
            const bool mc = k < rep.mc_perturbations.size();
            w << p.index << p.sup_norm << p.gap;
            if (mc) w << rep.mc_perturbations[k].gap << rep.mc_perturbations[k].stderr_;
            else w << std::string() << std::string();
            w << std::string(p.passed && (!mc || rep.mc_perturbations[k].passed) ? "1" : "0");
            w.end_row();
        }
        w.close();
    }
    {
        CsvWriter w(file(ctx, "scenario.csv"), {"metric", "value"});
        auto row = [&](const std::string& k, double v) {
            w << k << v;
            w.end_row();
        };
        row("feedback_iterations", static_cast<double>(rep.feedback.iterations));
        row("feedback_change", rep.feedback.change);
        row("feedback_converged", rep.feedback.converged ? 1.0 : 0.0);
        row("clamp_count", static_cast<double>(rep.feedback.clamps));
        row("stationarity_residual", rep.stationarity);
        row("J", rep.J);
        row("perturbation_failures", static_cast<double>(rep.perturbation_failures()));
        row("sufficiency_samples", static_cast<double>(rep.sufficiency.samples));
        row("concavity_failures", static_cast<double>(rep.sufficiency.concavity_failures.size()));
        row("maximum_failures", static_cast<double>(rep.sufficiency.maximum_failures.size()));
        row("worst_maximum_gap", rep.sufficiency.worst_maximum_gap);
        if (rep.monte_carlo) row("mc_undefined_paths", static_cast<double>(rep.mc_undefined_paths));
        if (rep.mc_applicable()) {
            row("mc_feedback_iterations", static_cast<double>(rep.mc_feedback.iterations));
            row("mc_feedback_converged", rep.mc_feedback.converged ? 1.0 : 0.0);
            row("mc_stationarity_residual", rep.mc_stationarity);
            row("mc_J", rep.mc_performance.mean);
            row("mc_stderr", rep.mc_performance.stderr_);
            row("mc_perturbation_failures", static_cast<double>(rep.mc_perturbation_failures()));
        }
        w.close();
    }
    out << "scenario " << rep.coefficient_set << ": feedback " << (rep.feedback.converged ? "converged" : "NOT converged")
        << " in " << rep.feedback.iterations << " iteration(s), " << rep.feedback.clamps << " clamp(s)\n"
        << "  stationarity residual " << format_number(rep.stationarity) << " (tol "
        << format_number(rep.stationarity_tol) << ")\n"
        << "  J(u_hat) = " << format_number(rep.J) << ", perturbation failures " << rep.perturbation_failures() << "/"
        << rep.perturbations.size() << "\n"
        << "  sufficient conditions: " << (rep.sufficiency.passed() ? "pass" : "FAIL") << " on "
        << rep.sufficiency.samples << " samples\n";
    if (rep.monte_carlo && !rep.mc_applicable()) {
        out << "  Monte Carlo check not applicable: " << rep.mc_undefined_paths
            << " path(s) leave the domain of the reward (J not finite)\n";
    }
    if (rep.mc_applicable()) {
        out << "  Monte Carlo fixed point " << (rep.mc_feedback.converged ? "converged" : "NOT converged") << " in "
            << rep.mc_feedback.iterations << " iteration(s), stationarity residual "
            << format_number(rep.mc_stationarity) << "\n";
        out << "  Monte Carlo J = " << format_number(rep.mc_performance.mean) << " +- "
            << format_number(rep.mc_performance.stderr_) << ", perturbation failures "
            << rep.mc_perturbation_failures() << "\n";
    }
    out << "scenario: " << (rep.passed() ? "PASS" : "FAIL") << "\n";
    finish(ctx, "scenario",
           {{"stationarity_residual", rep.stationarity}, {"J", rep.J}, {"passed", rep.passed()}});
    return rep.passed() ? 0 : 1;
}

}  // namespace cli_detail

/// Entry point of the command-line tool. Exit codes: 0 success, 1 failed check or
/// runtime error, 2 usage or configuration error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Stochastic control of nonlocal reaction-diffusion systems", kToolName};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CliOverrides o;
    std::string scenario_name;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", o.config_path, "experiment config (JSON)");
        if (config_required) c->required();
        sub->add_option("--seed", o.seed, "seed override (fallback: config, then $STIC_SEED)");
        sub->add_option("--paths", o.paths, "Monte Carlo path count override")->check(CLI::PositiveNumber);
        sub->add_option("--out", o.out, "output directory (created if missing)");
        sub->add_option("--threads", o.threads, "worker thread cap (0 = all cores)");
    };
    auto* sim = app.add_subcommand("simulate", "forward paths, performance estimate and state CSV");
    auto* adj = app.add_subcommand("adjoint", "adjoint solve with diagnostics report");
    auto* opt = app.add_subcommand("optimize", "projected gradient improvement of the control");
    auto* ver = app.add_subcommand("verify", "run the invariant suite; exit 1 on any failure");
    auto* scn = app.add_subcommand("scenario", "harvesting pipeline: forward, adjoint, feedback law, optimality checks");
    for (auto* s : {sim, adj, opt, ver}) add_common(s, true);
    add_common(scn, false);
    scn->add_option("name", scenario_name, "harvest_log or harvest_power")
        ->required()
        ->check(CLI::IsMember({"harvest_log", "harvest_power"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << kToolName << ": " << e.what() << "\n\n";
        const CLI::App* failing = &app;
        for (const auto* s : app.get_subcommands()) failing = s;
        err << failing->help();
        return 2;
    }

    try {
        ExperimentConfig cfg;
        if (*scn) {
            if (o.config_path.empty()) {
                json doc = desk_config_json("desk_1d");
                doc["coefficients"]["name"] = scenario_name;
                doc["output_dir"] = "stic_out/scenario_" + scenario_name;
                cfg = parse_config(doc);
            } else {
                json doc = load_config(o.config_path).effective;
                doc["coefficients"]["name"] = scenario_name;
                cfg = parse_config(doc, fs::path(o.config_path).parent_path());
            }
        } else {
            cfg = load_config(o.config_path);
        }
        cli_detail::RunContext ctx = cli_detail::prepare(std::move(cfg), o);
        if (*sim) return cli_detail::cmd_simulate(ctx, out);
        if (*adj) return cli_detail::cmd_adjoint(ctx, out);
        if (*opt) return cli_detail::cmd_optimize(ctx, out);
        if (*ver) return cli_detail::cmd_verify(ctx, o, out);
        return cli_detail::cmd_scenario(ctx, out);
    } catch (const ConfigError& e) {
        err << kToolName << ": config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << kToolName << ": error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace stic
