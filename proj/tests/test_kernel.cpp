#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "support.hpp"

using namespace stic;

namespace {

MeshPtr line() { return build_mesh(1, {1.0}, {33}); }
TimeGrid desk_grid() { return make_time_grid(1.0, 0.2, 0.01); }

KernelSpec moving(double delta) {
    KernelSpec s;
    s.kind = KernelKind::moving_average;
    s.delta = delta;
    return s;
}

}  // namespace

TEST(Kernel, MovingAverageOfConstant) {
    const MeshPtr m = line();
    const TimeGrid g = desk_grid();
    const DiscreteKernel k = build_kernel(moving(0.2), m, g);
    const TimePath x(m, -20, g.last(), 1.7);
    const TimePath sx = k.apply(x);
    for (long n = 0; n <= g.last(); ++n)
        for (std::size_t i : m->interior()) EXPECT_NEAR(sx[n][i], 1.7 * 0.2, 1e-14);
    EXPECT_NEAR(k.bound_M(), 0.2, 1e-14);
}

TEST(Kernel, MovingAverageColumnSums) {
    const MeshPtr m = line();
    const TimeGrid g = make_time_grid(1.0, 0.2, 0.1);
    const DiscreteKernel k = build_kernel(moving(0.2), m, g);
    double total = 0.0;
    for (const auto& grp : k.groups())
        for (const auto& tap : grp.taps) total += tap.weight;
    EXPECT_NEAR(total, 0.2, 1e-15);
}

TEST(Kernel, SpaceAverageWeightsSumToOne) {
    const MeshPtr m = build_mesh(2, {1.0, 1.0}, {17, 17});
    const DiscreteKernel k = [&] {
        KernelSpec s;
        s.kind = KernelKind::space_average;
        s.theta = 0.2;
        return build_kernel(s, m, desk_grid());
    }();
    double total = 0.0;
    for (const auto& grp : k.groups())
        for (const auto& tap : grp.taps) total += tap.weight;
    EXPECT_NEAR(total, 1.0, 1e-14);
    EXPECT_NEAR(k.bound_M() * static_cast<double>(k.groups().size()) * m->cell_volume(), 1.0, 1e-12);
}

// sum_{l<20} exp(-0.01 l) * 0.01
TEST(Kernel, ExponentialTemporalSum) {
    const MeshPtr m = line();
    KernelSpec s;
    s.kind = KernelKind::exponential;
    s.delta = 0.2;
    const DiscreteKernel k = build_kernel(s, m, desk_grid());
    const TimePath x(m, -20, 100, 1.0);
    EXPECT_NEAR(k.apply_at(x, 50)[16], 0.1821771037311683, 1e-14);
    EXPECT_NEAR(k.bound_M(), 0.1664938713812708, 1e-14);
}

TEST(Kernel, ExponentialWeightsDecrease) {
    const MeshPtr m = build_mesh(2, {1.0, 1.0}, {17, 17});
    KernelSpec s;
    s.kind = KernelKind::exponential;
    s.delta = 0.05;
    s.theta = 0.2;
    const DiscreteKernel k = build_kernel(s, m, desk_grid());
    double centre = 0.0;
    for (const auto& grp : k.groups()) {
        for (std::size_t a = 1; a < grp.taps.size(); ++a) {
            if (grp.taps[a].lag > grp.taps[a - 1].lag) EXPECT_LT(grp.taps[a].q, grp.taps[a - 1].q);
        }
        if (grp.offset == std::array<int, 2>{0, 0}) centre = grp.taps.front().q;
    }
    for (const auto& grp : k.groups()) {
        if (grp.offset != std::array<int, 2>{0, 0}) EXPECT_LT(grp.taps.front().q, centre);
    }
}

TEST(Kernel, TabulatedMatchesBruteForce) {
    const MeshPtr m = build_mesh(1, {1.0}, {5});
    const TimeGrid g = make_time_grid(0.4, 0.3, 0.1);
    KernelSpec s;
    s.kind = KernelKind::tabulated;
    s.delta = 0.3;
    s.table = {{0.0, {0.0, 0.0}, 1.5}, {0.1, {0.25, 0.0}, -0.5}, {0.2, {-0.25, 0.0}, 2.0}};
    const DiscreteKernel k = build_kernel(s, m, g);
    std::mt19937_64 rng(1);
    const TimePath x = verify_detail::random_path(m, -3, g.last(), rng);
    const double dv = 0.1 * 0.25;
    for (long n = 0; n <= g.last(); ++n) {
        const Field out = k.apply_at(x, n);
        for (std::size_t i : m->interior()) {
            double ref = 0.0;
            for (const auto& e : s.table) {
                const long lag = std::lround(e.t_lag / 0.1);
                const long j = static_cast<long>(i) + std::lround(e.offset[0] / 0.25);
                if (j <= 0 || j >= 4) continue;
                ref += e.q * dv * x[n - lag][static_cast<std::size_t>(j)];
            }
            EXPECT_NEAR(out[i], ref, 1e-14);
        }
    }
}

TEST(Kernel, TabulatedCsvRoundTrip) {
    const auto dir = fixture::scratch("kernel_csv");
    std::filesystem::create_directories(dir);
    const auto file = dir / "k.csv";
    std::ofstream(file) << "t_lag,y,weight\n# comment\n0,0,1.0\n0.01,0.03125,0.5\n";
    const auto rows = load_tabulated_kernel(file.string(), 1);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_DOUBLE_EQ(rows[1].offset[0], 0.03125);
    EXPECT_DOUBLE_EQ(rows[1].q, 0.5);
    std::ofstream(file) << "0,0\n";
    EXPECT_THROW(load_tabulated_kernel(file.string(), 1), InvalidArgument);
}

TEST(Kernel, RejectsWindowBeyondHistory) {
    EXPECT_THROW(build_kernel(moving(0.3), line(), desk_grid()), InvalidArgument);
    KernelSpec s;
    s.kind = KernelKind::space_average;
    s.theta = 0.01;
    EXPECT_THROW(build_kernel(s, line(), desk_grid()), InvalidArgument);
}

TEST(Kernel, DualIsDenseTranspose) {
    EXPECT_TRUE(check_kernel_dual_transpose(4, 1).passed);
    EXPECT_TRUE(check_kernel_dual_transpose(4, 2).passed);
}

TEST(Kernel, DualOfZeroIsZero) {
    const MeshPtr m = line();
    const TimeGrid g = desk_grid();
    const DiscreteKernel k = build_kernel(moving(0.2), m, g);
    const TimePath d = k.apply_dual(TimePath(m, 0, g.last()));
    for (double v : d.raw()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(d.first(), -20);
}

TEST(Kernel, OperatorBoundOnDeskGrid) {
    const ExperimentConfig cfg = desk_config("desk_1d");
    const CheckResult r = check_kernel_bound(cfg, build_mesh(cfg), build_time_grid(cfg), 8, 5, 20);
    EXPECT_TRUE(r.passed) << r.value;
}

TEST(Kernel, Reductions) {
    const ExperimentConfig cfg = desk_config("desk_2d");
    EXPECT_TRUE(check_kernel_reductions(build_mesh(cfg), build_time_grid(cfg)).passed);
}
