#include <gtest/gtest.h>

#include "support.hpp"

using namespace stic;

namespace {

AdjointPath constant_adjoint(const Problem& pr, double value) {
    AdjointPath a = make_adjoint_path(pr.mesh_ptr(), pr.grid(), pr.levy().mark_count());
    std::fill(a.p.raw().begin(), a.p.raw().end(), value);
    return a;
}

const SamplingPlan kQuiet{0, 1, true, 1};

/// Sup distance over rows that enter the cost; the control at the final time does not.
double running_distance(const Problem& pr, const ControlPath& a, const ControlPath& b) {
    double d = 0.0;
    for (long n = 0; n < pr.grid().last(); ++n)
        for (std::size_t i : pr.mesh().interior()) d = std::max(d, std::abs(a.values[n][i] - b.values[n][i]));
    return d;
}

}  // namespace

TEST(Performance, TerminalOnlyEqualsInnerProduct) {
    Problem pr = fixture::heat_problem(16, 0.01, 0.2);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.0);
    const StatePath x = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    Field k(pr.mesh_ptr()), xt(pr.mesh_ptr());
    for (std::size_t i = 0; i < k.size(); ++i) {
        k[i] = fixture::sin_pi(pr.mesh().position(i));
        xt[i] = x.X[pr.grid().last()][i];
    }
    EXPECT_NEAR(evaluate_performance(pr, u, kQuiet).mean, inner_product_h(k, xt), 1e-15);
}

TEST(Performance, LogFunctionalMatchesQuadrature) {
    json doc = fixture::quick_config_json("harvest_log");
    doc["mesh"]["nodes"] = {3};
    const ExperimentConfig cfg = parse_config(doc);
    const Problem pr = build_problem(cfg);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.7);
    const StatePath x = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    const double h = pr.mesh().cell_volume(), dt = pr.grid().dt;
    const long K = pr.grid().last();
    double ref = 0.0;
    for (long n = 0; n < K; ++n) ref += dt * h * std::log(0.7);
    const double kx = cfg.harvest.k(pr.mesh().position(1), pr.mesh());
    ref += h * kx * std::log(x.X[K][1]);
    EXPECT_NEAR(evaluate_performance(pr, u, kQuiet).mean, ref, 1e-14);
}

TEST(Performance, LinearInTerminalReward) {
    Problem pr = build_problem(fixture::quick_config("harvest_power"));
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.5);
    const double t1 = evaluate_performance(pr, u, kQuiet).terminal;
    CoefficientSet c = pr.coeffs();
    auto g = c.terminal;
    c.terminal.value = [g](std::size_t i, std::array<double, 2> x, double X) { return 2.0 * g.value(i, x, X); };
    pr.set_coeffs(c);
    EXPECT_NEAR(evaluate_performance(pr, u, kQuiet).terminal, 2.0 * t1, 1e-14);
}

TEST(Feedback, LogFormula) {
    const Problem pr = build_problem(fixture::quick_config("harvest_log"));
    const FeedbackResult fb = feedback_log(constant_adjoint(pr, 2.0), pr.box());
    for (std::size_t i : pr.mesh().interior()) EXPECT_DOUBLE_EQ(fb.control.values[3][i], 0.5);
    EXPECT_EQ(fb.clamps, 0u);
}

TEST(Feedback, LogClampsVanishingCostate) {
    const Problem pr = build_problem(fixture::quick_config("harvest_log"));
    const FeedbackResult fb = feedback_log(constant_adjoint(pr, 0.0), pr.box());
    for (std::size_t i : pr.mesh().interior()) EXPECT_EQ(fb.control.values[0][i], pr.box().hi);
    const std::size_t rows = static_cast<std::size_t>(fb.control.values.last() + 1);
    EXPECT_EQ(fb.clamps, rows * pr.mesh().interior().size());
}

TEST(Feedback, PowerFormula) {
    const Problem pr = build_problem(fixture::quick_config("harvest_power"));
    const FeedbackResult a = feedback_power(constant_adjoint(pr, 4.0), 0.5, pr.box());
    EXPECT_DOUBLE_EQ(a.control.values[2][4], 0.0625);
    for (double beta : {0.2, 0.5, 0.9}) {
        const FeedbackResult b = feedback_power(constant_adjoint(pr, 1.0), beta, pr.box());
        EXPECT_DOUBLE_EQ(b.control.values[2][4], 1.0);
    }
    EXPECT_THROW(feedback_power(constant_adjoint(pr, 1.0), 1.5, pr.box()), InvalidArgument);
}

TEST(Feedback, StationaryWhereUnclamped) {
    for (const char* set : {"harvest_log", "harvest_power"}) {
        const ExperimentConfig cfg = fixture::quick_config(set);
        const Problem pr = build_problem(cfg);
        const CheckResult r = check_feedback_stationarity(pr, feedback_law_for(set), cfg.harvest.beta);
        EXPECT_TRUE(r.passed) << set << " " << r.value;
    }
}

TEST(Gradient, VanishesAtFeedbackOptimum) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_log");
    const Problem pr = build_problem(cfg);
    const FeedbackSolution sol = solve_feedback(pr, FeedbackLaw::log, cfg.harvest.beta, initial_control(cfg, pr));
    ASSERT_TRUE(sol.converged);
    const GradientField g = gradient_via_adjoint(pr, sol.control, {sol.state}, {sol.adjoint});
    EXPECT_LE(stationarity_residual(pr, sol.control, g), 1e-6);
}

TEST(Gradient, ZeroWhenNothingDependsOnControl) {
    const Problem pr = fixture::heat_problem(16, 0.01, 0.2);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.5);
    const GradientField g = deterministic_gradient(pr, u);
    for (double v : g.values.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, MatchesFiniteDifferences) {
    for (const char* set : {"harvest_power", "harvest_log", "linear_generic", "logistic_nonlocal"}) {
        const ExperimentConfig cfg = fixture::quick_config(set);
        const Problem pr = build_problem(cfg);
        const CheckResult r = check_gradient_equivalence(pr, initial_control(cfg, pr), 41);
        EXPECT_TRUE(r.passed) << set << " " << r.value;
    }
}

TEST(FiniteDifference, ZeroDirection) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_power");
    const Problem pr = build_problem(cfg);
    const ControlPath u = initial_control(cfg, pr);
    const TimePath v(pr.mesh_ptr(), u.values.first(), u.values.last());
    EXPECT_EQ(gradient_via_finite_difference(pr, u, v, {1e-3}, kQuiet).derivative, 0.0);
}

// Reward f = u with u-free dynamics: dJ/dv = sum over [0, T) of dt vol v.
TEST(FiniteDifference, LinearFunctionalIsExact) {
    Problem pr = fixture::heat_problem(16, 0.01, 0.2);
    CoefficientSet c = pr.coeffs();
    c.reward = {[](const PointArgs& a) { return a.u; }, [](const PointArgs&) { return Partials{0, 0, 1, 0}; }};
    pr.set_coeffs(c);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.5);
    std::mt19937_64 rng(2);
    const TimePath v = verify_detail::random_direction(pr, rng);
    double ref = 0.0;
    for (long n = 0; n < pr.grid().last(); ++n)
        for (std::size_t i : pr.mesh().interior()) ref += v[n][i];
    ref *= pr.grid().dt * pr.mesh().cell_volume();
    EXPECT_NEAR(gradient_via_finite_difference(pr, u, v, {1e-2, 5e-3}, kQuiet).derivative, ref, 1e-12);
}

TEST(Improve, ZeroStepReturnsSameControl) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_power");
    const Problem pr = build_problem(cfg);
    const ControlPath u = initial_control(cfg, pr);
    ImprovementOptions opt;
    opt.step_size = 0.0;
    const ImprovementResult res = improve_control(pr, u, kQuiet, opt);
    EXPECT_EQ(res.controls.back().values.raw().size(), u.values.raw().size());
    EXPECT_TRUE(std::equal(u.values.raw().begin(), u.values.raw().end(), res.controls.back().values.raw().begin()));
}

TEST(Improve, StaysAtOptimum) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_log");
    const Problem pr = build_problem(cfg);
    const FeedbackSolution sol = solve_feedback(pr, FeedbackLaw::log, 0.5, initial_control(cfg, pr));
    const ImprovementResult res = improve_control(pr, sol.control, kQuiet);
    EXPECT_LE(sup_distance(pr, sol.control, res.controls.back()), 1e-6);
}

TEST(Improve, ReachesFeedbackControl) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_log");
    const Problem pr = build_problem(cfg);
    const ControlPath mid = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), pr.box().mid());
    const FeedbackSolution sol = solve_feedback(pr, FeedbackLaw::log, 0.5, mid);
    ImprovementOptions opt;
    opt.step_size = 2.0;
    opt.iterations = 400;
    const ImprovementResult res = improve_control(pr, mid, kQuiet, opt);
    EXPECT_FALSE(res.aborted) << res.message;
    EXPECT_LE(running_distance(pr, sol.control, res.controls.back()), 1e-3);
    EXPECT_GE(res.trace.back().J, res.trace.front().J);
}

TEST(Sufficiency, PassesAtOptimumAndCatchesPerturbation) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_log");
    const Problem pr = build_problem(cfg);
    const FeedbackSolution sol = solve_feedback(pr, FeedbackLaw::log, 0.5, initial_control(cfg, pr));
    const auto ok = check_sufficient_conditions(pr, sol.control, {sol.state}, {sol.adjoint}, 100000);
    EXPECT_TRUE(ok.passed());

    ControlPath bad = sol.control;
    const std::size_t node = pr.mesh().interior()[3];
    bad.values[5][node] = pr.box().clip(1.1 * bad.values[5][node]);
    ASSERT_NE(bad.values[5][node], sol.control.values[5][node]);
    const auto rep = check_sufficient_conditions(pr, bad, {sol.state}, {sol.adjoint}, 100000);
    ASSERT_FALSE(rep.maximum_failures.empty());
    bool found = false;
    for (const auto& f : rep.maximum_failures) found = found || (f.n == 5 && f.node == node);
    EXPECT_TRUE(found);
}

TEST(Sufficiency, ControlFreeHamiltonianPassesTrivially) {
    const Problem pr = fixture::heat_problem(8, 0.05, 0.2);
    const ControlPath u = constant_control(pr.mesh_ptr(), pr.grid(), pr.box(), 0.3);
    const StatePath x = simulate_forward(pr, u, zero_noise(pr.levy(), pr.grid()));
    const AdjointPath a = solve_adjoint_deterministic(pr, x, u);
    EXPECT_TRUE(check_sufficient_conditions(pr, u, {x}, {a}, 100000).passed());
}

TEST(Scenario, BothPipelinesPass) {
    for (const char* set : {"harvest_log", "harvest_power"}) {
        const ExperimentConfig cfg = fixture::quick_config(set);
        const Problem pr = build_problem(cfg);
        ScenarioOptions opt;
        opt.seed = 5;
        const ScenarioReport rep = run_scenario(pr, cfg, opt);
        EXPECT_TRUE(rep.passed()) << set << " residual " << rep.stationarity;
        EXPECT_EQ(rep.perturbations.size(), 50u);
    }
    const ExperimentConfig lin = fixture::quick_config("linear_generic");
    EXPECT_THROW(run_scenario(build_problem(lin), lin, {}), ConfigError);
}

// With a path-independent adjoint the sampled fixed point is the noise-free one.
TEST(Scenario, MonteCarloFixedPointMatchesDeterministicForPower) {
    const ExperimentConfig cfg = fixture::quick_config("harvest_power");
    const Problem pr = build_problem(cfg);
    ScenarioOptions opt;
    opt.seed = 5;
    opt.perturbations = 10;
    opt.monte_carlo = SamplingPlan{5, 40, false, 1};
    const ScenarioReport rep = run_scenario(pr, cfg, opt);
    ASSERT_TRUE(rep.mc_applicable());
    EXPECT_TRUE(rep.mc_feedback.converged);
    EXPECT_LE(running_distance(pr, rep.feedback.control, rep.mc_feedback.control), 1e-10);
    EXPECT_EQ(rep.mc_perturbation_failures(), 0u);
    EXPECT_TRUE(rep.passed());
}

TEST(Scenario, UndefinedRewardMakesMonteCarloInapplicable) {
    json doc = fixture::quick_config_json("harvest_log");
    doc["initial"] = {{"base", 0.05}, {"sine_amplitude", 0.0}};
    doc["boundary"] = {{"value", 0.05}};
    const ExperimentConfig cfg = parse_config(doc);
    const Problem pr = build_problem(cfg);
    ScenarioOptions opt;
    opt.seed = 5;
    opt.perturbations = 5;
    opt.monte_carlo = SamplingPlan{5, 40, false, 1};
    const ScenarioReport rep = run_scenario(pr, cfg, opt);
    EXPECT_TRUE(rep.monte_carlo);
    EXPECT_GT(rep.mc_undefined_paths, 0u);
    EXPECT_FALSE(rep.mc_applicable());
    EXPECT_TRUE(rep.mc_perturbations.empty());
}
