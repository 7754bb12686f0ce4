#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include "frachom/coefficient.hpp"
#include "frachom/errors.hpp"
#include "frachom/grid.hpp"
#include "frachom/io.hpp"
#include "frachom/mask.hpp"

namespace frachom {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

enum class OperatorKind { local_elliptic, extension_weighted };

/**
 * Symmetric positive semidefinite operator on grid nodes.
 *
 * For local_elliptic operators the entries scale like 1/length^2 and rows sum
 * to zero in periodic mode. `norm` is the max absolute row sum.
 */
struct DiscreteOperator {
    CartesianGrid grid;
    SparseMatrix matrix;
    OperatorKind kind = OperatorKind::local_elliptic;
    double norm = 0.0;

    Eigen::Index size() const { return matrix.rows(); }
};

namespace detail {

inline double max_row_sum(const SparseMatrix& m)
{
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(m.rows());
    for (int c = 0; c < m.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(m, c); it; ++it) sums[it.row()] += std::abs(it.value());
    return sums.size() ? sums.maxCoeff() : 0.0;
}

/// Exact symmetry plus weak diagonal dominance with a non-negative diagonal; implies PSD.
inline void certify_psd(const SparseMatrix& m, double norm)
{
    const SparseMatrix t = m.transpose();
    if ((m - t).norm() != 0.0) throw std::logic_error("assembled operator is not symmetric");
    Eigen::VectorXd off = Eigen::VectorXd::Zero(m.rows());
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(m.rows());
    for (int c = 0; c < m.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
            if (it.row() == it.col()) diag[it.row()] += it.value();
            else off[it.row()] += std::abs(it.value());
        }
    const double tol = 1e-10 * norm;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        if (diag[i] - off[i] < -tol) throw std::logic_error("assembled operator is not diagonally dominant");
}

} // namespace detail

/**
 * Flux-form finite differences for -div(A grad) with diagonal A.
 *
 * The coefficient on the face between adjacent nodes is the stored face value
 * when the field carries one, and otherwise the harmonic mean of the two
 * nodal samples. In zero-exterior mode a face leaving the box contributes to
 * the diagonal only, with the boundary node's own sample.
 */
inline DiscreteOperator assemble_stiffness(const CartesianGrid& grid, const CoefficientField& coeff)
{
    if (!(coeff.grid == grid)) throw std::invalid_argument("coefficient field lives on a different grid");
    if (grid.dim == 2)
        for (const auto& a : coeff.samples)
            if (a(0, 1) != 0.0 || a(1, 0) != 0.0)
                throw std::invalid_argument("off-diagonal coefficients are not supported by the flux stencil");

    const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(grid.size() * (1 + 4 * static_cast<std::size_t>(grid.dim)));

    auto harmonic = [](double a, double b) { return 2.0 * a * b / (a + b); };
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto row = static_cast<int>(k);
        for (int axis = 0; axis < grid.dim; ++axis) {
            const double own = coeff.samples[k](axis, axis);
            const auto up = grid.neighbor(k, axis, +1);
            if (up >= 0) {
                const double c = coeff.faces[axis].empty()
                                     ? harmonic(own, coeff.samples[static_cast<std::size_t>(up)](axis, axis))
                                     : coeff.faces[axis][k];
                const auto col = static_cast<int>(up);
                const double w = c * inv_h2;
                trip.emplace_back(row, row, w);
                trip.emplace_back(col, col, w);
                trip.emplace_back(row, col, -w);
                trip.emplace_back(col, row, -w);
            } else {
                const double c = coeff.faces[axis].empty() ? own : coeff.faces[axis][k];
                trip.emplace_back(row, row, c * inv_h2);
            }
            if (grid.neighbor(k, axis, -1) < 0) trip.emplace_back(row, row, own * inv_h2);
        }
    }

    const auto n = static_cast<Eigen::Index>(grid.size());
    SparseMatrix m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    DiscreteOperator op{grid, std::move(m), OperatorKind::local_elliptic, 0.0};
    op.norm = detail::max_row_sum(op.matrix);
    detail::certify_psd(op.matrix, op.norm);
    return op;
}

inline Eigen::VectorXd apply(const DiscreteOperator& op, const Eigen::VectorXd& v)
{
    if (v.size() != op.size()) throw std::invalid_argument("vector length does not match the operator");
    return op.matrix * v;
}

/**
 * Solves L u = f on Interior nodes with u = g on Exterior and Hole nodes.
 *
 * f and g are full nodal vectors; only their Interior (resp. pinned) entries
 * are read. The interior block is solved by Jacobi-preconditioned CG.
 */
inline Eigen::VectorXd solve_local_dirichlet(const DiscreteOperator& op, const DomainMask& mask,
                                             const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                                             double rel_tol = 1e-10)
{
    const auto n = op.size();
    if (!(mask.grid == op.grid)) throw std::invalid_argument("mask and operator grids differ");
    if (f.size() != n || g.size() != n) throw std::invalid_argument("data length does not match the grid");

    const auto interior = mask.interior_indices();
    const auto ni = static_cast<Eigen::Index>(interior.size());
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Index> position(static_cast<std::size_t>(n), -1);
    for (Eigen::Index p = 0; p < ni; ++p) position[interior[static_cast<std::size_t>(p)]] = p;
    for (Eigen::Index k = 0; k < n; ++k)
        if (mask.pinned(static_cast<std::size_t>(k))) u[k] = g[k];
    if (ni == 0) return u;

    const Eigen::VectorXd lifted = op.matrix * u;
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs(ni);
    for (int c = 0; c < op.matrix.outerSize(); ++c) {
        const auto pc = position[static_cast<std::size_t>(c)];
        if (pc < 0) continue;
        for (SparseMatrix::InnerIterator it(op.matrix, c); it; ++it) {
            const auto pr = position[static_cast<std::size_t>(it.row())];
            if (pr >= 0) trip.emplace_back(static_cast<int>(pr), static_cast<int>(pc), it.value());
        }
    }
    for (Eigen::Index p = 0; p < ni; ++p) {
        const auto k = static_cast<Eigen::Index>(interior[static_cast<std::size_t>(p)]);
        rhs[p] = f[k] - lifted[k];
    }
    SparseMatrix block(ni, ni);
    block.setFromTriplets(trip.begin(), trip.end());

    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(rel_tol);
    cg.setMaxIterations(std::max<Eigen::Index>(1000, 20 * ni));
    cg.compute(block);
    const Eigen::VectorXd x = cg.solve(rhs);
    const double scale = rhs.norm() > 0.0 ? rhs.norm() : 1.0;
    const double residual = (block * x - rhs).norm() / scale;
    if (cg.info() != Eigen::Success || !(residual <= 10.0 * rel_tol))
        throw SolverError("local Dirichlet CG did not converge", residual);
    for (Eigen::Index p = 0; p < ni; ++p) u[static_cast<Eigen::Index>(interior[static_cast<std::size_t>(p)])] = x[p];
    return u;
}

/// Writes one "row col value" line per stored entry, column-major order.
inline void write_triplets(std::ostream& out, const DiscreteOperator& op)
{
    for (int c = 0; c < op.matrix.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(op.matrix, c); it; ++it)
            out << it.row() << ' ' << it.col() << ' ' << io::format_double(it.value()) << '\n';
}

} // namespace frachom
