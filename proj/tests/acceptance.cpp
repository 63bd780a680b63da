// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"

using namespace stic;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

const fs::path kConfigs = STIC_CONFIG_DIR;
const std::uint64_t kSeed = 20240611;

ExperimentConfig desk(const char* name) { return load_config(kConfigs / (std::string(name) + ".json")); }

Outcome operator_bound() {
    const ExperimentConfig cfg = desk("desk_1d");
    const CheckResult r = check_kernel_bound(cfg, build_mesh(cfg), build_time_grid(cfg), kSeed, 20, 100);
    return {r.passed, "max |S X| / (sqrt(M) |X|) = " + fmt(r.value) + " over " + r.detail.substr(0, r.detail.find(';'))};
}

Outcome dual_transpose() {
    const CheckResult dense = check_kernel_dual_transpose(kSeed, 1);
    const MeshPtr mesh = build_mesh(1, {1.0}, {5});
    const TimeGrid grid = make_time_grid(0.4, 0.2, 0.1);
    std::mt19937_64 rng(kSeed);
    std::vector<KernelSpec> specs = verify_detail::parametric_kernels(*mesh, 0.2);
    specs.push_back(verify_detail::random_tabulated(*mesh, grid, grid.history, rng));
    const double w = grid.dt * mesh->cell_volume();
    double worst = 0.0;
    for (const auto& s : specs) {
        const DiscreteKernel k = build_kernel(s, mesh, grid);
        for (int pair = 0; pair < 100; ++pair) {
            const TimePath x = verify_detail::random_path(mesh, -2, grid.last(), rng);
            const TimePath g = verify_detail::random_path(mesh, 0, grid.last(), rng);
            const TimePath sx = k.apply(x), sg = k.apply_dual(g);
            double lhs = 0.0, rhs = 0.0, scale = 0.0;
            for (std::size_t i = 0; i < sx.raw().size(); ++i) {
                lhs += sx.raw()[i] * g.raw()[i] * w;
                scale += std::abs(sx.raw()[i] * g.raw()[i]) * w;
            }
            for (std::size_t i = 0; i < x.raw().size(); ++i) rhs += sg.raw()[i] * x.raw()[i] * w;
            worst = std::max(worst, std::abs(lhs - rhs) / std::max(scale, 1e-300));
        }
    }
    return {dense.passed && worst <= 1e-12,
            "dense transpose error " + fmt(dense.value) + ", pairing error " + fmt(worst) + " (bound 1e-12)"};
}

Outcome green_identity() {
    double worst = 0.0;
    bool ok = true;
    for (const char* name : {"desk_1d", "desk_2d"}) {
        const CheckResult r = check_green_identity(build_mesh(desk(name)), kSeed);
        ok = ok && r.passed;
        worst = std::max(worst, r.value);
    }
    return {ok, "normalized defect " + fmt(worst) + " for 1/2 Laplacian and variable coefficients (bound 1e-12)"};
}

Outcome heat_benchmark() {
    const double l2 = fixture::heat_error(64, 1e-4, 0.5);
    std::vector<double> space, time;
    for (std::size_t cells : {16u, 32u, 64u}) {
        const double h = 1.0 / static_cast<double>(cells);
        space.push_back(fixture::heat_error(cells, h * h / 16.0, 0.125));
    }
    for (double dt : {1e-2, 5e-3, 2.5e-3}) time.push_back(fixture::heat_error(64, dt, 0.1));
    const double ps = std::min(fixture::observed_order(space[0], space[1]), fixture::observed_order(space[1], space[2]));
    const double pt = std::min(fixture::observed_order(time[0], time[1]), fixture::observed_order(time[1], time[2]));
    return {l2 <= 1e-3 && ps >= 1.8 && pt >= 0.9,
            "L2 error " + fmt(l2) + ", spatial order " + fmt(ps) + ", temporal order " + fmt(pt)};
}

Outcome variation_slope() {
    json doc = desk_config_json("desk_1d");
    doc["coefficients"]["name"] = "logistic_nonlocal";
    const ExperimentConfig cfg = parse_config(doc);
    const Problem pr = build_problem(cfg);
    const ControlPath u = initial_control(cfg, pr);
    std::mt19937_64 rng(kSeed);
    ControlPath v = u;
    v.values = verify_detail::random_direction(pr, rng);
    const std::vector<double> eps{1e-2, 1e-3, 1e-4};
    const auto gaps = fixture::variation_gaps(pr, u, v, sample_noise(pr.levy(), pr.grid(), kSeed, 0), eps);
    const double slope = fixture::loglog_slope(eps, gaps);
    return {std::abs(slope - 1.0) <= 0.2,
            "slope " + fmt(slope) + " (gaps " + fmt(gaps[0]) + ", " + fmt(gaps[1]) + ", " + fmt(gaps[2]) + ")"};
}

Outcome bsde_closed_form() {
    const CheckResult r = check_scalar_closed_form(kSeed, 100, 1e-3);
    return {r.passed, "max |p - e^(T-t)| = " + fmt(r.value) + ", " + r.detail};
}

Outcome picard_contraction() {
    const ExperimentConfig cfg = desk("desk_1d");
    const Problem pr = build_problem(cfg);
    const ControlPath u = initial_control(cfg, pr);
    const std::size_t paths = 200;
    std::vector<NoiseRealization> noise(paths);
    std::vector<StatePath> fw(paths);
    for (std::size_t s = 0; s < paths; ++s) {
        noise[s] = sample_noise(pr.levy(), pr.grid(), kSeed, s);
        fw[s] = simulate_forward(pr, u, noise[s]);
    }
    PicardDriver drv = hamiltonian_driver(pr, u);
    const auto base = drv.value;
    drv.value = [base](const DriverArgs& d) { return base(d) + d.p_ant; };
    drv.anticipated = true;
    const long K = pr.grid().last();
    auto terminal = [&pr, K](long, std::size_t i, const StatePath& X) {
        return pr.mesh().on_boundary(i) ? 0.0 : pr.coeffs().terminal.derivative(i, pr.mesh().position(i), X.X[K][i]);
    };
    PicardOptions opt = cfg.picard;
    opt.tol = 1e-8;
    opt.max_iter = 30;
    const PicardResult res = solve_adjoint_picard(drv, terminal, nullptr, fw, noise, pr.kernel(), pr.op(), pr.levy(), opt);
    const auto& d = res.diagnostics;
    const double gm = d.increments.size() >= 3 ? picard_contraction_report(d).geometric_mean : 0.0;
    return {d.converged && d.iterations <= 30 && gm <= 0.6,
            "geometric-mean ratio " + fmt(gm) + " after iteration 2, " + std::to_string(d.iterations) +
                " iterations, converged=" + (d.converged ? "yes" : "no")};
}

Outcome gradient_equivalence() {
    const auto start = std::chrono::steady_clock::now();
    ExperimentConfig cfg = desk("desk_1d");
    cfg.coefficient_set = "harvest_power";
    const Problem pr = build_problem(cfg);
    const ControlPath u = initial_control(cfg, pr);
    const CheckResult det = check_gradient_equivalence(pr, u, kSeed, 10);

    std::mt19937_64 rng(kSeed + 1);
    std::vector<TimePath> dirs;
    for (int k = 0; k < 10; ++k) dirs.push_back(verify_detail::random_direction(pr, rng));
    const SamplingPlan plan{kSeed, 10000, false, 0};
    const TimePath ubar = control_aggregate(pr, u);
    std::vector<std::vector<double>> pair(dirs.size(), std::vector<double>(plan.paths));
    parallel_for(plan.paths, plan.threads, [&](std::size_t s) {
        const StatePath x = simulate_forward(pr, u, ubar, plan_noise(pr, plan, s));
        const TimePath g = path_gradient(pr, u, ubar, x, solve_adjoint_deterministic(pr, x, u));
        for (std::size_t k = 0; k < dirs.size(); ++k) pair[k][s] = gradient_pairing(pr, g, dirs[k]);
    });
    double worst = 0.0;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        double mean = 0.0;
        const double se = detail::mean_stderr(pair[k], mean);
        const FiniteDifference fd = gradient_via_finite_difference(pr, u, dirs[k], verify_detail::fd_steps(u, dirs[k]), plan);
        const double combined = std::hypot(se, fd.stderr_);
        worst = std::max(worst, std::abs(mean - fd.derivative) / std::max(combined, 1e-300));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {det.passed && worst <= 3.0 && secs <= 600.0,
            "deterministic rel. error " + fmt(det.value) + "; MC |diff|/stderr " + fmt(worst) + " at 1e4 paths; " +
                fmt(secs) + " s"};
}

Outcome scenario_optimality() {
    std::string detail;
    bool ok = true;
    for (const char* set : {"harvest_log", "harvest_power"}) {
        json doc = desk_config_json("desk_1d");
        doc["coefficients"]["name"] = set;
        const ExperimentConfig cfg = parse_config(doc);
        const Problem pr = build_problem(cfg);
        ScenarioOptions opt;
        opt.seed = kSeed;
        opt.monte_carlo = SamplingPlan{kSeed, 200, false, 0};
        const ScenarioReport rep = run_scenario(pr, cfg, opt);
        const bool pass = rep.passed() && rep.perturbations.size() == 50 && rep.stationarity <= 1e-6;
        ok = ok && pass;
        detail += std::string(detail.empty() ? "" : "; ") + set + ": residual " + fmt(rep.stationarity) + ", " +
                  std::to_string(rep.perturbation_failures()) + "/50 strict failures, ";
        if (rep.mc_applicable())
            detail += "MC fixed point residual " + fmt(rep.mc_stationarity) + ", " +
                      std::to_string(rep.mc_perturbation_failures()) + "/50 MC failures";
        else
            detail += "MC check n/a (" + std::to_string(rep.mc_undefined_paths) + "/200 paths with undefined reward)";
    }
    return {ok, detail};
}

Outcome reductions() {
    double worst = 0.0;
    bool ok = true;
    for (const char* name : {"desk_1d", "desk_2d"}) {
        const ExperimentConfig cfg = desk(name);
        const CheckResult r = check_kernel_reductions(build_mesh(cfg), build_time_grid(cfg));
        ok = ok && r.passed;
        worst = std::max(worst, r.value);
    }
    return {ok, "max deviation " + fmt(worst) + " (bound 1e-12)"};
}

int run_tool(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(STIC_EXE) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
    const fs::path root = fixture::scratch("acceptance_determinism");
    fs::create_directories(root);
    const std::string desk1 = (kConfigs / "desk_1d.json").string();
    std::vector<std::string> jobs{"verify --config " + desk1, "scenario harvest_log", "scenario harvest_power"};
    std::vector<std::string> dirs{"verify", "scenario_log", "scenario_power"};
    bool exits_ok = true;
    for (const char* run : {"a", "b"}) {
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            const fs::path out = root / run / dirs[j];
            exits_ok = run_tool(jobs[j] + " --seed 7 --out " + out.string(), root / (std::string(run) + dirs[j] + ".log")) == 0 && exits_ok;
        }
    }
    std::size_t compared = 0, differing = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
        if (entry.path().extension() != ".csv") continue;
        const fs::path twin = root / "b" / fs::relative(entry.path(), root / "a");
        ++compared;
        if (!fs::exists(twin) || fixture::slurp(entry.path()) != fixture::slurp(twin)) ++differing;
    }
    return {exits_ok && compared > 0 && differing == 0,
            std::to_string(compared) + " CSV files compared, " + std::to_string(differing) + " differ" +
                (exits_ok ? "" : ", a run exited nonzero")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"operator bound", operator_bound},
        {"dual transpose and pairing", dual_transpose},
        {"discrete Green identity", green_identity},
        {"forward heat benchmark", heat_benchmark},
        {"variation process slope", variation_slope},
        {"BSDE closed form", bsde_closed_form},
        {"Picard contraction", picard_contraction},
        {"gradient equivalence", gradient_equivalence},
        {"feedback-law optimality", scenario_optimality},
        {"kernel reductions", reductions},
        {"end-to-end determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.passed) ++failed;
        std::cout << (o.passed ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
