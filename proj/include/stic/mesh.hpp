#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stic/error.hpp"

namespace stic {

/// Uniform rectangular grid on the box [0, L_0] x [0, L_1] (dim 1 or 2).
///
/// Node index is ix + nx * iy. The outermost layer of nodes is the boundary;
/// everything else is the open domain. Meshes are immutable and shared via
/// MeshPtr.
class Mesh {
public:
    int dim() const noexcept { return dim_; }
    std::size_t nodes(int axis) const { return nodes_.at(static_cast<std::size_t>(axis)); }
    double extent(int axis) const { return extents_.at(static_cast<std::size_t>(axis)); }
    double spacing(int axis) const { return spacing_.at(static_cast<std::size_t>(axis)); }
    double cell_volume() const noexcept { return cell_volume_; }

    std::size_t size() const noexcept { return boundary_.size(); }
    bool on_boundary(std::size_t idx) const { return boundary_[idx] != 0; }
    std::span<const std::size_t> interior() const noexcept { return interior_; }
    std::span<const std::size_t> boundary() const noexcept { return boundary_nodes_; }

    std::size_t index(std::size_t ix, std::size_t iy = 0) const { return ix + nodes_[0] * iy; }
    std::array<std::size_t, 2> coords(std::size_t idx) const {
        return {idx % nodes_[0], idx / nodes_[0]};
    }
    std::array<double, 2> position(std::size_t idx) const {
        auto c = coords(idx);
        return {static_cast<double>(c[0]) * spacing_[0],
                dim_ == 2 ? static_cast<double>(c[1]) * spacing_[1] : 0.0};
    }

    bool operator==(const Mesh& other) const {
        return dim_ == other.dim_ && nodes_ == other.nodes_ && extents_ == other.extents_;
    }

private:
    friend std::shared_ptr<const Mesh> build_mesh(int, std::vector<double>, std::vector<std::size_t>);

    int dim_ = 1;
    std::vector<std::size_t> nodes_;
    std::vector<double> extents_;
    std::vector<double> spacing_;
    double cell_volume_ = 0.0;
    std::vector<unsigned char> boundary_;
    std::vector<std::size_t> interior_;
    std::vector<std::size_t> boundary_nodes_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// Builds a uniform grid; spacing = extent / (nodes - 1).
inline MeshPtr build_mesh(int dim, std::vector<double> extents, std::vector<std::size_t> nodes) {
    detail::require(dim == 1 || dim == 2, "build_mesh: dim must be 1 or 2");
    detail::require(extents.size() == static_cast<std::size_t>(dim) &&
                        nodes.size() == static_cast<std::size_t>(dim),
                    "build_mesh: need one extent and one node count per axis");
    auto mesh = std::shared_ptr<Mesh>(new Mesh());
    mesh->dim_ = dim;
    mesh->cell_volume_ = 1.0;
    for (int a = 0; a < dim; ++a) {
        const auto i = static_cast<std::size_t>(a);
        detail::require(std::isfinite(extents[i]) && extents[i] > 0.0,
                        "build_mesh: extents must be positive");
        detail::require(nodes[i] >= 3, "build_mesh: need at least 3 nodes per axis (one interior node)");
        mesh->spacing_.push_back(extents[i] / static_cast<double>(nodes[i] - 1));
        mesh->cell_volume_ *= mesh->spacing_.back();
    }
    mesh->extents_ = std::move(extents);
    mesh->nodes_ = std::move(nodes);
    const std::size_t nx = mesh->nodes_[0];
    const std::size_t ny = dim == 2 ? mesh->nodes_[1] : 1;
    mesh->boundary_.assign(nx * ny, 0);
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            bool edge = ix == 0 || ix + 1 == nx;
            if (dim == 2) edge = edge || iy == 0 || iy + 1 == ny;
            const std::size_t idx = ix + nx * iy;
            mesh->boundary_[idx] = edge ? 1 : 0;
            (edge ? mesh->boundary_nodes_ : mesh->interior_).push_back(idx);
        }
    }
    return mesh;
}

/// Scalar function on the nodes of a mesh.
class Field {
public:
    Field() = default;
    explicit Field(MeshPtr mesh, double fill = 0.0) : mesh_(std::move(mesh)) {
        detail::require(mesh_ != nullptr, "Field: null mesh");
        values_.assign(mesh_->size(), fill);
    }
    Field(MeshPtr mesh, std::vector<double> values) : mesh_(std::move(mesh)), values_(std::move(values)) {
        detail::require(mesh_ != nullptr, "Field: null mesh");
        detail::require(values_.size() == mesh_->size(), "Field: value count must equal node count");
        detail::require(is_finite(), "Field: values must be finite");
    }

    const Mesh& mesh() const { return *mesh_; }
    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool is_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    MeshPtr mesh_;
    std::vector<double> values_;
};

namespace detail {

inline void require_same_mesh(const Mesh& a, const Mesh& b, const char* where) {
    require_same_domain(&a == &b || a == b, std::string(where) + ": mesh mismatch");
}

}  // namespace detail

/// Sum over interior nodes of f*g*cell_volume (boundary nodes excluded).
inline double inner_product_h(std::span<const double> f, std::span<const double> g, const Mesh& mesh) {
    double acc = 0.0;
    for (std::size_t i : mesh.interior()) acc += f[i] * g[i];
    return acc * mesh.cell_volume();
}

inline double inner_product_h(const Field& f, const Field& g) {
    detail::require_same_mesh(f.mesh(), g.mesh(), "inner_product_h");
    return inner_product_h(f.values(), g.values(), f.mesh());
}

inline double norm_h(const Field& f) { return std::sqrt(inner_product_h(f, f)); }

/// H^1-type norm: sqrt(|f|_H^2 + sum_axis |D_axis f|_H^2) with forward differences
/// taken at interior nodes.
inline double norm_v(const Field& f) {
    const Mesh& m = f.mesh();
    double grad = 0.0;
    for (int a = 0; a < m.dim(); ++a) {
        const std::size_t stride = a == 0 ? 1 : m.nodes(0);
        const double h = m.spacing(a);
        for (std::size_t i : m.interior()) {
            const double d = (f[i + stride] - f[i]) / h;
            grad += d * d;
        }
    }
    const double nh = norm_h(f);
    return std::sqrt(nh * nh + grad * m.cell_volume());
}

/// Second-order operator  sum_ij a_ij d_i d_j + sum_i b_i d_i  discretized with central
/// differences (4-point cross stencil for the mixed terms). Rows of boundary nodes are zero.
class EllipticOperator {
public:
    using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
    /// Row-major 2x2 diffusion tensor and drift vector at one node.
    struct NodeCoefficients {
        std::array<double, 4> alpha{};
        std::array<double, 2> beta{};
    };

    static EllipticOperator half_laplacian(MeshPtr mesh) {
        std::vector<NodeCoefficients> c(mesh->size());
        for (auto& nc : c) nc.alpha = {0.5, 0.0, 0.0, mesh->dim() == 2 ? 0.5 : 0.0};
        EllipticOperator op(std::move(mesh), std::move(c));
        op.half_laplacian_ = true;
        return op;
    }

    static EllipticOperator zero(MeshPtr mesh) {
        std::vector<NodeCoefficients> c(mesh->size());
        return EllipticOperator(std::move(mesh), std::move(c));
    }

    /// Coefficients sampled from callables of the node position.
    static EllipticOperator from_functions(
        MeshPtr mesh, const std::function<NodeCoefficients(std::array<double, 2>)>& coeff) {
        std::vector<NodeCoefficients> c(mesh->size());
        for (std::size_t i = 0; i < mesh->size(); ++i) c[i] = coeff(mesh->position(i));
        return EllipticOperator(std::move(mesh), std::move(c));
    }

    EllipticOperator(MeshPtr mesh, std::vector<NodeCoefficients> coeffs)
        : mesh_(std::move(mesh)), coeffs_(std::move(coeffs)) {
        detail::require(mesh_ != nullptr, "EllipticOperator: null mesh");
        detail::require(coeffs_.size() == mesh_->size(), "EllipticOperator: one coefficient set per node");
        for (const auto& c : coeffs_) {
            detail::require(std::abs(c.alpha[1] - c.alpha[2]) <= 1e-14 * (1.0 + std::abs(c.alpha[1])),
                            "EllipticOperator: alpha must be symmetric");
            detail::require(c.alpha[0] >= 0.0 && c.alpha[3] >= 0.0,
                            "EllipticOperator: alpha diagonal must be nonnegative");
            if (mesh_->dim() == 1) {
                detail::require(c.alpha[1] == 0.0 && c.alpha[3] == 0.0 && c.beta[1] == 0.0,
                                "EllipticOperator: 1D operator has only the x-coefficients");
            }
        }
        assemble();
    }

    const Mesh& mesh() const { return *mesh_; }
    const MeshPtr& mesh_ptr() const noexcept { return mesh_; }
    bool is_half_laplacian() const noexcept { return half_laplacian_; }
    std::span<const NodeCoefficients> coefficients() const noexcept { return coeffs_; }
    /// Full node-by-node matrix; boundary rows are zero.
    const SparseMatrix& matrix() const noexcept { return matrix_; }
    /// Interior-by-interior block (used by implicit solves and adjoints).
    const SparseMatrix& interior_block() const noexcept { return interior_; }
    /// Interior-by-boundary coupling block.
    const SparseMatrix& boundary_block() const noexcept { return coupling_; }

    double max_diffusion() const {
        double m = 0.0;
        for (const auto& c : coeffs_) m = std::max({m, c.alpha[0], c.alpha[3]});
        return m;
    }

    /// Applies the operator to raw node values (length mesh().size()).
    void apply(std::span<const double> f, std::span<double> out) const {
        Eigen::Map<const Eigen::VectorXd> fv(f.data(), static_cast<Eigen::Index>(f.size()));
        Eigen::Map<Eigen::VectorXd> ov(out.data(), static_cast<Eigen::Index>(out.size()));
        ov = matrix_ * fv;
    }

    /// Transpose of the interior block; boundary values of f are ignored (zero Dirichlet closure).
    void apply_adjoint(std::span<const double> f, std::span<double> out) const {
        const auto& interior = mesh_->interior();
        Eigen::VectorXd fi(static_cast<Eigen::Index>(interior.size()));
        for (std::size_t k = 0; k < interior.size(); ++k) fi[static_cast<Eigen::Index>(k)] = f[interior[k]];
        Eigen::VectorXd oi = interior_.transpose() * fi;
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t k = 0; k < interior.size(); ++k) out[interior[k]] = oi[static_cast<Eigen::Index>(k)];
    }

private:
    void assemble() {
        const Mesh& m = *mesh_;
        const std::size_t n = m.size();
        const std::size_t nx = m.nodes(0);
        const double hx = m.spacing(0);
        const double hy = m.dim() == 2 ? m.spacing(1) : 1.0;
        std::vector<Eigen::Triplet<double>> trip;
        for (std::size_t idx : m.interior()) {
            const auto& c = coeffs_[idx];
            const auto r = static_cast<int>(idx);
            auto add = [&](std::size_t col, double v) {
                if (v != 0.0) trip.emplace_back(r, static_cast<int>(col), v);
            };
            // x-direction second and first derivatives
            add(idx - 1, c.alpha[0] / (hx * hx) - c.beta[0] / (2.0 * hx));
            add(idx, -2.0 * c.alpha[0] / (hx * hx));
            add(idx + 1, c.alpha[0] / (hx * hx) + c.beta[0] / (2.0 * hx));
            if (m.dim() == 2) {
                add(idx - nx, c.alpha[3] / (hy * hy) - c.beta[1] / (2.0 * hy));
                add(idx, -2.0 * c.alpha[3] / (hy * hy));
                add(idx + nx, c.alpha[3] / (hy * hy) + c.beta[1] / (2.0 * hy));
                const double mixed = (c.alpha[1] + c.alpha[2]) / (4.0 * hx * hy);
                add(idx + 1 + nx, mixed);
                add(idx - 1 - nx, mixed);
                add(idx + 1 - nx, -mixed);
                add(idx - 1 + nx, -mixed);
            }
        }
        matrix_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        matrix_.setFromTriplets(trip.begin(), trip.end());
        matrix_.makeCompressed();

        // Split into interior/interior and interior/boundary blocks.
        std::vector<long> interior_pos(n, -1), boundary_pos(n, -1);
        for (std::size_t k = 0; k < m.interior().size(); ++k) interior_pos[m.interior()[k]] = static_cast<long>(k);
        for (std::size_t k = 0; k < m.boundary().size(); ++k) boundary_pos[m.boundary()[k]] = static_cast<long>(k);
        std::vector<Eigen::Triplet<double>> ti, tb;
        for (const auto& t : trip) {
            const long row = interior_pos[static_cast<std::size_t>(t.row())];
            const auto col = static_cast<std::size_t>(t.col());
            if (interior_pos[col] >= 0) ti.emplace_back(row, interior_pos[col], t.value());
            else tb.emplace_back(row, boundary_pos[col], t.value());
        }
        const auto ni = static_cast<Eigen::Index>(m.interior().size());
        const auto nb = static_cast<Eigen::Index>(m.boundary().size());
        interior_.resize(ni, ni);
        interior_.setFromTriplets(ti.begin(), ti.end());
        interior_.makeCompressed();
        coupling_.resize(ni, nb);
        coupling_.setFromTriplets(tb.begin(), tb.end());
        coupling_.makeCompressed();
    }

    MeshPtr mesh_;
    std::vector<NodeCoefficients> coeffs_;
    bool half_laplacian_ = false;
    SparseMatrix matrix_;
    SparseMatrix interior_;
    SparseMatrix coupling_;
};

/// Central-difference application; output is zero on boundary nodes.
inline Field apply_operator(const EllipticOperator& op, const Field& f) {
    detail::require_same_mesh(op.mesh(), f.mesh(), "apply_operator");
    Field out(f.mesh_ptr());
    op.apply(f.values(), out.values());
    return out;
}

/// Exact transpose of apply_operator's interior block, so that
/// <A phi, psi>_H == <phi, A* psi>_H for fields vanishing on the boundary.
inline Field apply_adjoint_operator(const EllipticOperator& op, const Field& f) {
    detail::require_same_mesh(op.mesh(), f.mesh(), "apply_adjoint_operator");
    Field out(f.mesh_ptr());
    op.apply_adjoint(f.values(), out.values());
    return out;
}

/// Spectral norm of the interior block (the operator norm under <.,.>_H).
inline double operator_norm(const EllipticOperator& op) {
    const Eigen::MatrixXd dense = Eigen::MatrixXd(op.interior_block());
    if (dense.size() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
    return svd.singularValues()(0);
}

/// Constants (alpha1, alpha2) with 2<A u,u> + alpha1 |u|_V^2 <= alpha2 |u|_H^2 for all u
/// vanishing on the boundary. alpha1 is chosen by the caller, alpha2 is the smallest
/// admissible value (largest generalized eigenvalue, floored at zero).
struct CoercivityConstants {
    double alpha1 = 1.0;
    double alpha2 = 0.0;
};

inline Eigen::MatrixXd forward_difference_gram(const Mesh& m) {
    const auto& interior = m.interior();
    const auto ni = static_cast<Eigen::Index>(interior.size());
    std::vector<long> pos(m.size(), -1);
    for (std::size_t k = 0; k < interior.size(); ++k) pos[interior[k]] = static_cast<long>(k);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(ni, ni);
    for (int a = 0; a < m.dim(); ++a) {
        const std::size_t stride = a == 0 ? 1 : m.nodes(0);
        const double h = m.spacing(a);
        for (std::size_t k = 0; k < interior.size(); ++k) {
            // Row of D: (u[i+e] - u[i]) / h, with boundary values fixed at zero.
            Eigen::VectorXd row = Eigen::VectorXd::Zero(ni);
            row[static_cast<Eigen::Index>(k)] = -1.0 / h;
            const long nb = pos[interior[k] + stride];
            if (nb >= 0) row[nb] = 1.0 / h;
            gram += row * row.transpose();
        }
    }
    return gram;
}

inline CoercivityConstants measure_coercivity(const EllipticOperator& op, double alpha1 = 1.0) {
    detail::require(alpha1 > 0.0, "measure_coercivity: alpha1 must be positive");
    const Mesh& m = op.mesh();
    const Eigen::MatrixXd a = Eigen::MatrixXd(op.interior_block());
    const auto ni = a.rows();
    Eigen::MatrixXd b = a + a.transpose();
    b += alpha1 * (Eigen::MatrixXd::Identity(ni, ni) + forward_difference_gram(m));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b, Eigen::EigenvaluesOnly);
    return {alpha1, std::max(0.0, eig.eigenvalues().maxCoeff())};
}

/// Backward-Euler diffusion solve  (I - dt A_II) x_I = rhs_I + dt A_IB b_B.
///
/// 1D operators are tridiagonal and use a Thomas factorization; 2D uses SparseLU.
/// Both the matrix and its transpose are factorized once; solves are const.
class ImplicitDiffusion {
public:
    ImplicitDiffusion(const EllipticOperator& op, double dt)
        : mesh_(op.mesh_ptr()), dt_(dt), coupling_(op.boundary_block()) {
        detail::require(dt > 0.0, "ImplicitDiffusion: dt must be positive");
        const auto& a = op.interior_block();
        const auto ni = a.rows();
        Eigen::SparseMatrix<double> eye(ni, ni);
        eye.setIdentity();
        Eigen::SparseMatrix<double> sys = eye - dt * Eigen::SparseMatrix<double>(a);
        sys.makeCompressed();
        if (mesh_->dim() == 1) {
            tri_ = true;
            const auto n = static_cast<std::size_t>(ni);
            lower_.assign(n, 0.0);
            diag_.assign(n, 0.0);
            upper_.assign(n, 0.0);
            for (int k = 0; k < sys.outerSize(); ++k) {
                for (Eigen::SparseMatrix<double>::InnerIterator it(sys, k); it; ++it) {
                    const auto r = static_cast<std::size_t>(it.row());
                    const auto c = static_cast<std::size_t>(it.col());
                    if (r == c) diag_[r] = it.value();
                    else if (c + 1 == r) lower_[r] = it.value();
                    else if (r + 1 == c) upper_[r] = it.value();
                }
            }
            for (double d : diag_) {
                if (d == 0.0) throw NumericalError("ImplicitDiffusion: singular implicit system");
            }
        } else {
            lu_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
            lu_->compute(sys);
            if (lu_->info() != Eigen::Success) throw NumericalError("ImplicitDiffusion: singular implicit system");
            Eigen::SparseMatrix<double> syst = sys.transpose();
            lut_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
            lut_->compute(syst);
            if (lut_->info() != Eigen::Success) throw NumericalError("ImplicitDiffusion: singular implicit system");
        }
    }

    const Mesh& mesh() const { return *mesh_; }
    double dt() const noexcept { return dt_; }

    /// rhs holds the interior right-hand side at interior nodes and the new boundary
    /// values at boundary nodes. out (may alias rhs) receives the solution.
    void solve(std::span<const double> rhs, std::span<double> out) const { solve_impl(rhs, out, false); }

    /// Same as solve() with (I - dt A_II)^T; boundary values are copied through without coupling.
    void solve_transpose(std::span<const double> rhs, std::span<double> out) const { solve_impl(rhs, out, true); }

private:
    void solve_impl(std::span<const double> rhs, std::span<double> out, bool transpose) const {
        const Mesh& m = *mesh_;
        const auto& interior = m.interior();
        const auto& boundary = m.boundary();
        Eigen::VectorXd b(static_cast<Eigen::Index>(interior.size()));
        for (std::size_t k = 0; k < interior.size(); ++k) b[static_cast<Eigen::Index>(k)] = rhs[interior[k]];
        if (!transpose && coupling_.nonZeros() > 0) {
            Eigen::VectorXd bb(static_cast<Eigen::Index>(boundary.size()));
            for (std::size_t k = 0; k < boundary.size(); ++k) bb[static_cast<Eigen::Index>(k)] = rhs[boundary[k]];
            b += dt_ * (coupling_ * bb);
        }
        Eigen::VectorXd x;
        if (tri_) {
            x = thomas(b, transpose);
        } else {
            x = transpose ? lut_->solve(b) : lu_->solve(b);
        }
        for (std::size_t k = 0; k < boundary.size(); ++k) out[boundary[k]] = rhs[boundary[k]];
        for (std::size_t k = 0; k < interior.size(); ++k) out[interior[k]] = x[static_cast<Eigen::Index>(k)];
    }

    Eigen::VectorXd thomas(const Eigen::VectorXd& b, bool transpose) const {
        const std::size_t n = diag_.size();
        // Transposing a tridiagonal matrix swaps the sub- and super-diagonals.
        auto sub = [&](std::size_t r) { return transpose ? upper_[r - 1] : lower_[r]; };
        auto sup = [&](std::size_t r) { return transpose ? lower_[r + 1] : upper_[r]; };
        std::vector<double> c(n), d(n);
        double denom = diag_[0];
        c[0] = n > 1 ? sup(0) / denom : 0.0;
        d[0] = b[0] / denom;
        for (std::size_t r = 1; r < n; ++r) {
            denom = diag_[r] - sub(r) * c[r - 1];
            if (denom == 0.0) throw NumericalError("ImplicitDiffusion: zero pivot");
            c[r] = r + 1 < n ? sup(r) / denom : 0.0;
            d[r] = (b[static_cast<Eigen::Index>(r)] - sub(r) * d[r - 1]) / denom;
        }
        Eigen::VectorXd x(static_cast<Eigen::Index>(n));
        x[static_cast<Eigen::Index>(n - 1)] = d[n - 1];
        for (std::size_t r = n - 1; r-- > 0;) {
            x[static_cast<Eigen::Index>(r)] = d[r] - c[r] * x[static_cast<Eigen::Index>(r + 1)];
        }
        return x;
    }

    MeshPtr mesh_;
    double dt_;
    EllipticOperator::SparseMatrix coupling_;
    bool tri_ = false;
    std::vector<double> lower_, diag_, upper_;
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_, lut_;
};

}  // namespace stic
