#include <gtest/gtest.h>

#include "support.hpp"

using namespace stic;

namespace {

struct Backward {
    Problem pr;
    ControlPath u;
    StatePath x;
};

/// 1/2 Laplacian on (0, 1), h = 1/32, terminal gradient sin(pi x), all model terms zero.
Backward backward_heat(double dt) {
    Problem pr = fixture::heat_problem(32, dt, 1.0);
    ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.0);
    StatePath x = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    return {std::move(pr), std::move(u), std::move(x)};
}

double worst_l2(const TimePath& p, const TimeGrid& g, long shift) {
    double worst = 0.0;
    for (long n = 0; n + shift <= g.last(); ++n) {
        const double decay = std::exp(-0.5 * M_PI * M_PI * (1.0 - g.time(n + shift)));
        worst = std::max(worst, fixture::l2_error(p, n, [decay](auto x) { return decay * fixture::sin_pi(x); }));
    }
    return worst;
}

}  // namespace

TEST(Adjoint, BackwardHeatDeterministic) {
    const Backward b = backward_heat(1e-3);
    const AdjointPath a = solve_adjoint_deterministic(b.pr, b.x, b.u);
    EXPECT_LE(worst_l2(a.p, b.pr.grid(), 0), 1e-3);
    for (double v : a.q.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Adjoint, BackwardHeatPicard) {
    const Backward b = backward_heat(1e-3);
    const PicardResult res = solve_adjoint_picard(b.pr, b.u, {b.x}, {zero_noise(b.pr.levy(), b.pr.grid())});
    EXPECT_LE(worst_l2(res.paths[0].p, b.pr.grid(), 0), 1e-3);
}

TEST(Adjoint, ZeroTerminalGivesZero) {
    const Backward b = backward_heat(1e-2);
    const AdjointPath a = solve_adjoint_deterministic(b.pr, b.x, b.u, Field(b.pr.mesh_ptr()));
    for (double v : a.p.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Adjoint, DeterministicBackendHasNoMartingaleParts) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_log");
    const Problem pr = build_problem(cfg);
    const ControlPath u = initial_control(cfg, pr);
    const AdjointPath a = solve_adjoint_deterministic(pr, simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid())), u);
    for (double v : a.q.raw()) EXPECT_EQ(v, 0.0);
    for (const auto& r : a.r)
        for (double v : r.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Adjoint, ScalarClosedForm) {
    const CheckResult r = check_scalar_closed_form(17, 100, 1e-3);
    EXPECT_TRUE(r.passed) << r.value << " " << r.detail;
}

namespace {

struct ScalarSetup {
    MeshPtr mesh = build_mesh(1, {1.0}, {3});
    TimeGrid grid = make_time_grid(1.0, 0.1, 0.01);
    DiscreteKernel kernel;
    std::vector<NoiseRealization> noise;
    std::vector<StatePath> forward;

    ScalarSetup() {
        KernelSpec ks;
        ks.kind = KernelKind::moving_average;
        ks.delta = 0.1;
        kernel = build_kernel(ks, mesh, grid);
        for (std::size_t s = 0; s < 50; ++s) {
            noise.push_back(sample_noise(LevySpec{}, grid, 3, s));
            StatePath sp;
            sp.path_id = s;
            sp.X = TimePath(mesh, -10, grid.last());
            double b = 0.0;
            for (long n = 1; n <= grid.last(); ++n) sp.X[n][1] = b += noise.back().brownian(static_cast<std::size_t>(n - 1));
            sp.Xbar = TimePath(mesh, 0, grid.last());
            forward.push_back(std::move(sp));
        }
    }

    PicardResult solve(PicardDriver drv, double c) const {
        auto terminal = [c](long, std::size_t, const StatePath&) { return c; };
        return solve_adjoint_picard(drv, terminal, nullptr, forward, noise, kernel, EllipticOperator::zero(mesh), LevySpec{});
    }
};

}  // namespace

TEST(Picard, ZeroDriverKeepsConstantTerminal) {
    const ScalarSetup s;
    PicardDriver drv;
    drv.value = [](const DriverArgs&) { return 0.0; };
    const PicardResult res = s.solve(drv, 2.5);
    for (const auto& a : res.paths) {
        for (long n = 0; n <= s.grid.last(); ++n) {
            EXPECT_NEAR(a.p[n][1], 2.5, 1e-12);
            EXPECT_NEAR(a.q[n][1], 0.0, 1e-12);
        }
    }
    EXPECT_TRUE(res.diagnostics.converged);
    EXPECT_LE(res.diagnostics.increments.back(), 1e-20);
}

TEST(Picard, StateOnlyDriverConvergesAfterOneSweep) {
    const ScalarSetup s;
    PicardDriver drv;
    drv.value = [](const DriverArgs& d) { return std::sin(d.X); };
    const PicardResult res = s.solve(drv, 1.0);
    ASSERT_GE(res.diagnostics.increments.size(), 2u);
    EXPECT_LE(res.diagnostics.increments[1], 1e-20);
}

TEST(Picard, LinearDriverContracts) {
    const ScalarSetup s;
    PicardDriver drv;
    drv.value = [](const DriverArgs& d) { return d.p; };
    const PicardResult res = s.solve(drv, 1.0);
    ASSERT_TRUE(res.diagnostics.converged);
    EXPECT_LE(picard_contraction_report(res.diagnostics).geometric_mean, 0.6);
}

TEST(Picard, ContractionBookkeeping) {
    const std::vector<double> down{0.5, 0.4, 0.3, 0.1};
    const auto a = summarize_ratios(down, 1);
    EXPECT_TRUE(a.monotone_nonincreasing);
    EXPECT_TRUE(a.super_linear);
    EXPECT_NEAR(a.geometric_mean, std::cbrt(0.4 * 0.3 * 0.1), 1e-15);
    const auto b = summarize_ratios(std::vector<double>{0.5, 0.4, 0.45}, 1);
    EXPECT_FALSE(b.monotone_nonincreasing);
    EXPECT_FALSE(b.super_linear);
    EXPECT_THROW(summarize_ratios(std::vector<double>{0.5}, 1), InvalidArgument);
}

TEST(Picard, DeskClausesAndAgreement) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_power");
    const Problem pr = build_problem(cfg);
    const PicardRun run = run_picard(pr, initial_control(cfg, pr), 31, 100, cfg.picard, 1);
    EXPECT_TRUE(check_terminal_clause(pr, run).passed);
    EXPECT_TRUE(check_boundary_clause(pr, run).passed);
    EXPECT_TRUE(check_contraction(run).passed);
    const CheckResult agree = check_picard_agreement(pr, run);
    EXPECT_TRUE(agree.passed) << agree.value;
}
