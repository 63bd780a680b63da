#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace stic;

TEST(Mesh, UniformGridLayout) {
    const MeshPtr m = build_mesh(1, {1.0}, {3});
    EXPECT_DOUBLE_EQ(m->spacing(0), 0.5);
    ASSERT_EQ(m->interior().size(), 1u);
    EXPECT_DOUBLE_EQ(m->position(m->interior()[0])[0], 0.5);

    const MeshPtr sq = build_mesh(2, {1.0, 1.0}, {3, 3});
    EXPECT_EQ(sq->interior().size(), 1u);
    EXPECT_EQ(sq->boundary().size(), 8u);
}

TEST(Mesh, RejectsGridWithoutInterior) {
    EXPECT_THROW(build_mesh(1, {1.0}, {2}), InvalidArgument);
    EXPECT_THROW(build_mesh(3, {1.0, 1.0, 1.0}, {3, 3, 3}), InvalidArgument);
    EXPECT_THROW(build_mesh(1, {-1.0}, {5}), InvalidArgument);
}

TEST(Operator, ThreePointStencil) {
    const MeshPtr m = build_mesh(1, {2.0}, {3});
    const Field f(m, std::vector<double>{0.0, 1.0, 0.0});
    const Field out = apply_operator(EllipticOperator::half_laplacian(m), f);
    EXPECT_DOUBLE_EQ(out[1], -1.0);
}

TEST(Operator, ConstantsAreAnnihilated) {
    const MeshPtr m = build_mesh(2, {1.0, 2.0}, {9, 11});
    const Field c(m, 3.25);
    for (const auto& op : {EllipticOperator::half_laplacian(m), verify_detail::variable_operator(m)}) {
        const Field out = apply_operator(op, c);
        for (std::size_t i : m->interior()) EXPECT_NEAR(out[i], 0.0, 1e-10);
    }
}

TEST(Operator, QuadraticConvergesToConstantCurvature) {
    for (std::size_t n : {17u, 65u}) {
        const MeshPtr m = build_mesh(1, {1.0}, {n});
        Field f(m);
        for (std::size_t i = 0; i < m->size(); ++i) f[i] = std::pow(m->position(i)[0], 2);
        const Field out = apply_operator(EllipticOperator::half_laplacian(m), f);
        for (std::size_t i : m->interior()) EXPECT_NEAR(out[i], 1.0, 1e-9);
    }
}

// Discrete eigenvalue of 1/2 Laplacian for sin(pi x) at h = 1/32: -(2/h^2) sin^2(pi h / 2).
TEST(Operator, SineModeEigenvalue) {
    const MeshPtr m = build_mesh(1, {1.0}, {33});
    Field f(m);
    for (std::size_t i = 0; i < m->size(); ++i) f[i] = std::sin(M_PI * m->position(i)[0]);
    const Field out = apply_operator(EllipticOperator::half_laplacian(m), f);
    const double lambda = -4.9308398876703885;
    for (std::size_t i : m->interior()) EXPECT_NEAR(out[i], lambda * f[i], 1e-12);
}

TEST(Operator, HalfLaplacianIsSelfAdjoint) {
    const MeshPtr m = build_mesh(2, {1.0, 1.0}, {7, 6});
    const auto op = EllipticOperator::half_laplacian(m);
    std::mt19937_64 rng(3);
    const Field f = verify_detail::random_interior_field(m, rng);
    const Field a = apply_operator(op, f), b = apply_adjoint_operator(op, f);
    for (std::size_t i : m->interior()) EXPECT_NEAR(a[i], b[i], 1e-12);
    const Field z = apply_adjoint_operator(op, Field(m));
    for (std::size_t i = 0; i < m->size(); ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(Operator, GreenIdentityBothOperators) {
    for (const MeshPtr& m : {build_mesh(1, {1.0}, {33}), build_mesh(2, {1.0, 1.5}, {9, 13})}) {
        const CheckResult r = check_green_identity(m, 11);
        EXPECT_TRUE(r.passed) << r.value;
    }
}

TEST(Operator, CoercivityHolds) {
    const MeshPtr m = build_mesh(2, {1.0, 1.0}, {9, 9});
    EXPECT_TRUE(check_coercivity(verify_detail::variable_operator(m), 5).passed);
    EXPECT_TRUE(check_coercivity(EllipticOperator::half_laplacian(m), 5).passed);
}

TEST(Operator, RejectsAsymmetricDiffusion) {
    const MeshPtr m = build_mesh(2, {1.0, 1.0}, {5, 5});
    std::vector<EllipticOperator::NodeCoefficients> c(m->size());
    for (auto& x : c) x.alpha = {1.0, 0.3, 0.1, 1.0};
    EXPECT_THROW(EllipticOperator(m, c), InvalidArgument);
}

TEST(InnerProduct, DirectSum) {
    const MeshPtr m = build_mesh(1, {1.5}, {4});
    const Field f(m, std::vector<double>{0.0, 1.0, 2.0, 0.0});
    const Field g(m, std::vector<double>{0.0, 3.0, 4.0, 0.0});
    EXPECT_DOUBLE_EQ(inner_product_h(f, g), 5.5);
    EXPECT_DOUBLE_EQ(inner_product_h(f, g), inner_product_h(g, f));
    EXPECT_EQ(inner_product_h(Field(m), Field(m)), 0.0);
}

TEST(Norms, OrderingAndZero) {
    const MeshPtr m = build_mesh(1, {1.0}, {21});
    EXPECT_EQ(norm_h(Field(m)), 0.0);
    EXPECT_EQ(norm_v(Field(m)), 0.0);
    std::mt19937_64 rng(9);
    for (int k = 0; k < 20; ++k) {
        const Field f = verify_detail::random_interior_field(m, rng);
        EXPECT_GE(norm_v(f), norm_h(f));
    }
}
