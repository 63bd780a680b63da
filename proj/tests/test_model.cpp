#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace stic;

namespace {

HamiltonianPoint at(double u, double p, std::size_t marks = 0) {
    HamiltonianPoint pt;
    pt.args.u = u;
    pt.p = p;
    pt.r.assign(marks, 0.0);
    return pt;
}

HarvestParams drift_only() {
    HarvestParams h;
    h.gamma3 = 0.0;
    return h;
}

const ControlBox kBox{0.01, 5.0};

}  // namespace

TEST(Hamiltonian, LogExampleValue) {
    const MeshPtr m = build_mesh(1, {1.0}, {3});
    const CoefficientSet c = harvest_log(drift_only(), LevySpec{}, m);
    EXPECT_DOUBLE_EQ(eval_hamiltonian(c, at(1.0, 1.0), LevySpec{}, kBox), -1.0);
}

TEST(Hamiltonian, ZeroPointOfInertSet) {
    const CoefficientSet c = fixture::inert_coefficients();
    EXPECT_EQ(eval_hamiltonian(c, at(0.5, 0.0), LevySpec{}, kBox), 0.0);
}

TEST(Hamiltonian, TermByTermSum) {
    const ExperimentConfig cfg = desk_config("desk_1d");
    const MeshPtr m = build_mesh(cfg);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> ud(0.1, 2.0);
    for (const auto& name : builtin_coefficient_sets()) {
        const CoefficientSet c = verify_detail::coefficient_set(cfg, name, m);
        for (int k = 0; k < 50; ++k) {
            HamiltonianPoint pt;
            pt.args = {0.3, 5, m->position(5), ud(rng), ud(rng), 0.0, ud(rng)};
            pt.args.u = ud(rng);
            pt.p = ud(rng);
            pt.q = ud(rng) - 1.0;
            pt.r = {ud(rng), ud(rng) - 1.0};
            double ref = c.reward.value(pt.args) + c.drift.value(pt.args) * pt.p + c.diffusion.value(pt.args) * pt.q;
            for (std::size_t j = 0; j < 2; ++j)
                ref += c.jump.value(pt.args, j, cfg.levy.marks[j]) * pt.r[j] * cfg.levy.intensity * cfg.levy.probs[j];
            EXPECT_NEAR(eval_hamiltonian(c, pt, cfg.levy, cfg.box), ref, 1e-13 * (1.0 + std::abs(ref)));
        }
    }
}

TEST(Hamiltonian, LogStationaryPoint) {
    const MeshPtr m = build_mesh(1, {1.0}, {3});
    const CoefficientSet c = harvest_log(drift_only(), LevySpec{}, m);
    EXPECT_DOUBLE_EQ(hamiltonian_partials(c, at(2.0, 0.5), LevySpec{}).u, 0.0);
}

TEST(Hamiltonian, PowerStationaryPoint) {
    const MeshPtr m = build_mesh(1, {1.0}, {3});
    HarvestParams h = drift_only();
    h.beta = 0.5;
    const CoefficientSet c = harvest_power(h, LevySpec{}, m);
    EXPECT_DOUBLE_EQ(hamiltonian_partials(c, at(4.0, 0.5), LevySpec{}).u, 0.0);
}

TEST(Hamiltonian, PartialsMatchFiniteDifferences) {
    const ExperimentConfig cfg = desk_config("desk_1d");
    const CheckResult r = check_model_partials(cfg, build_mesh(cfg), 21);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Hamiltonian, ConcaveInControl) {
    const ExperimentConfig cfg = desk_config("desk_2d");
    EXPECT_TRUE(check_model_concavity(cfg, build_mesh(cfg), 22).passed);
}

TEST(Hamiltonian, RejectsControlOutsideBox) {
    const MeshPtr m = build_mesh(1, {1.0}, {3});
    const CoefficientSet c = harvest_log(drift_only(), LevySpec{}, m);
    EXPECT_THROW(eval_hamiltonian(c, at(6.0, 1.0), LevySpec{}, kBox), InvalidArgument);
}

TEST(Hamiltonian, DualDerivativeOfZeroIsZero) {
    const MeshPtr m = build_mesh(1, {1.0}, {9});
    const TimeGrid g = make_time_grid(0.4, 0.2, 0.1);
    KernelSpec ks;
    ks.kind = KernelKind::moving_average;
    ks.delta = 0.2;
    const DiscreteKernel k = build_kernel(ks, m, g);
    const TimePath d = hamiltonian_dual_derivative(k, TimePath(m, 0, g.last()));
    for (double v : d.raw()) EXPECT_EQ(v, 0.0);
}

// The S_X partial of the harvest drift, diffusion and jumps combine as gamma2 (gamma3 p + gamma4 q + sum gamma5 r nu).
TEST(Hamiltonian, HarvestInteractionPartial) {
    const LevySpec levy{2.0, {-0.1, 0.1}, {0.5, 0.5}};
    HarvestParams h;
    h.gamma2 = 0.5;
    h.gamma3 = 0.3;
    h.gamma4 = 0.2;
    h.gamma5 = {-0.2, 0.2};
    const CoefficientSet c = harvest_log(h, levy, build_mesh(1, {1.0}, {3}));
    HamiltonianPoint pt = at(1.0, 1.3, 2);
    pt.args.X = 0.8;
    pt.q = -0.4;
    pt.r = {0.25, -0.5};
    const double expect = 0.5 * (0.3 * 1.3 + 0.2 * -0.4 + (-0.2 * 0.25 + 0.2 * -0.5) * 1.0);
    EXPECT_NEAR(hamiltonian_partials(c, pt, levy).Xbar, expect, 1e-15);
}

TEST(Model, PowerRejectsBadExponent) {
    HarvestParams h;
    h.beta = 1.0;
    EXPECT_THROW(harvest_power(h, LevySpec{}, build_mesh(1, {1.0}, {3})), InvalidArgument);
}
