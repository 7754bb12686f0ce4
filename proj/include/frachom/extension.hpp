#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <gsl/gsl_sf_gamma.h>
#include <json.hpp>

#include "frachom/coefficient.hpp"
#include "frachom/errors.hpp"
#include "frachom/io.hpp"
#include "frachom/local_op.hpp"
#include "frachom/quadrature.hpp"

namespace frachom {

/**
 * Tensor grid base x (0, Y] with graded levels y_j = Y (j/M)^gamma, j = 0..M.
 *
 * Level 0 carries the trace. Vertical conductances and horizontal dual-cell
 * weights integrate the weight y^(1-2s) exactly:
 *   kappa_j = 1 / int_{y_j}^{y_{j+1}} y^(2s-1) dy
 *   w_j     = int over the dual cell of level j of y^(1-2s) dy
 * The top dual cell ends at Y (natural condition).
 */
struct ExtensionGrid {
    CartesianGrid base;
    double s = 0.5;
    int levels = 64;
    double height = 8.0;
    double grading = 2.0;
    std::vector<double> y;
    std::vector<double> kappa;
    std::vector<double> weight;

    std::size_t base_size() const { return base.size(); }
    std::size_t size() const { return base.size() * static_cast<std::size_t>(levels + 1); }
    std::size_t node(std::size_t k, int level) const { return static_cast<std::size_t>(level) * base.size() + k; }
};

inline ExtensionGrid build_extension_grid(const CartesianGrid& base, double s, int levels, double height,
                                          double grading = 2.0)
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
    if (levels < 1) throw std::invalid_argument("extension needs at least one y level");
    if (!(grading >= 1.0)) throw std::invalid_argument("y grading exponent must be at least 1");
    if (!(height >= 2.0 * base.half_width)) throw std::invalid_argument("extension height must be at least 2R");
    ExtensionGrid g{base, s, levels, height, grading, {}, {}, {}};
    g.y.resize(static_cast<std::size_t>(levels) + 1);
    for (int j = 0; j <= levels; ++j) g.y[static_cast<std::size_t>(j)] = height * std::pow(double(j) / levels, grading);

    const double y1 = g.y[1];
    if (!(y1 > 1e-12 * height) || !(std::pow(y1, 2.0 * s) > 0.0)) {
        const double suggest = std::log(1e12) / std::log(double(levels));
        throw ConfigError("first y level " + io::format_double(y1) + " underflows the weight; use grading <= " +
                          io::format_double(std::floor(100.0 * suggest) / 100.0));
    }
    auto weight_integral = [s](double a, double b) {
        return (std::pow(b, 2.0 - 2.0 * s) - std::pow(a, 2.0 - 2.0 * s)) / (2.0 - 2.0 * s);
    };
    g.kappa.resize(static_cast<std::size_t>(levels));
    for (std::size_t j = 0; j + 1 < g.y.size(); ++j)
        g.kappa[j] = 2.0 * s / (std::pow(g.y[j + 1], 2.0 * s) - std::pow(g.y[j], 2.0 * s));
    g.weight.resize(g.y.size());
    for (std::size_t j = 0; j < g.y.size(); ++j) {
        const double lo = j == 0 ? 0.0 : 0.5 * (g.y[j - 1] + g.y[j]);
        const double hi = j + 1 == g.y.size() ? height : 0.5 * (g.y[j] + g.y[j + 1]);
        g.weight[j] = weight_integral(lo, hi);
    }
    for (double k : g.kappa)
        if (!std::isfinite(k) || !(k > 0.0)) throw ConfigError("vertical conductance overflow; lower the y grading");
    return g;
}

/**
 * Energy matrix of the weighted extension problem over all levels.
 *
 * U^T K U h^dim is the discrete Dirichlet functional
 * sum_j w_j h^dim U_j^T L U_j + sum_j kappa_j h^dim |U_{j+1} - U_j|^2,
 * where L is the base stiffness of -div(A grad).
 */
struct ExtensionOperator {
    ExtensionGrid grid;
    SparseMatrix matrix;
    OperatorKind kind = OperatorKind::extension_weighted;
};

inline ExtensionOperator assemble_extension(const ExtensionGrid& ext, const CoefficientField& coeff)
{
    const auto base_op = assemble_stiffness(ext.base, coeff);
    const auto nb = static_cast<Eigen::Index>(ext.base_size());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(base_op.matrix.nonZeros()) * ext.y.size() + 4 * ext.size());
    for (std::size_t j = 0; j < ext.y.size(); ++j) {
        const auto off = static_cast<Eigen::Index>(j) * nb;
        for (int c = 0; c < base_op.matrix.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(base_op.matrix, c); it; ++it)
                trips.emplace_back(off + it.row(), off + it.col(), ext.weight[j] * it.value());
    }
    for (std::size_t j = 0; j < ext.kappa.size(); ++j) {
        const auto lo = static_cast<Eigen::Index>(j) * nb;
        const auto hi = lo + nb;
        const double k = ext.kappa[j];
        for (Eigen::Index i = 0; i < nb; ++i) {
            trips.emplace_back(lo + i, lo + i, k);
            trips.emplace_back(hi + i, hi + i, k);
            trips.emplace_back(lo + i, hi + i, -k);
            trips.emplace_back(hi + i, lo + i, -k);
        }
    }
    const auto n = static_cast<Eigen::Index>(ext.size());
    SparseMatrix m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();
    return {ext, std::move(m), OperatorKind::extension_weighted};
}

struct ExtensionSolution {
    ExtensionGrid grid;
    Eigen::VectorXd U;        // level-major: U[j * base_size + k]
    Eigen::VectorXd residual; // (K U) on every node; zero off the trace level up to the solver tolerance
    double energy = 0.0;
    int iterations = 0;

    Eigen::VectorXd level(int j) const
    {
        const auto nb = static_cast<Eigen::Index>(grid.base_size());
        return U.segment(static_cast<Eigen::Index>(j) * nb, nb);
    }
    Eigen::VectorXd trace() const { return level(0); }
};

/// Minimises the discrete Dirichlet functional with U(., 0) = trace.
inline ExtensionSolution solve_extension(const ExtensionOperator& op, const Eigen::VectorXd& trace,
                                         double rel_tol = 1e-12)
{
    const auto nb = static_cast<Eigen::Index>(op.grid.base_size());
    if (trace.size() != nb) throw std::invalid_argument("trace length does not match the base grid");
    if (!trace.allFinite()) throw std::invalid_argument("trace is not finite");
    const Eigen::Index n = op.matrix.rows();
    const Eigen::Index nf = n - nb;
    const SparseMatrix free = op.matrix.bottomRightCorner(nf, nf);
    const SparseMatrix couple = op.matrix.bottomLeftCorner(nf, nb);
    const Eigen::VectorXd rhs = -(couple * trace);

    ExtensionSolution sol{op.grid, Eigen::VectorXd::Zero(n), {}, 0.0, 0};
    sol.U.head(nb) = trace;
    if (rhs.norm() > 0.0) {
        Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
        cg.setTolerance(rel_tol);
        cg.setMaxIterations(static_cast<Eigen::Index>(20 * nf + 1000));
        cg.compute(free);
        const Eigen::VectorXd x = cg.solve(rhs);
        const double res = (free * x - rhs).norm() / rhs.norm();
        sol.iterations = static_cast<int>(cg.iterations());
        if (!(res <= 10.0 * rel_tol)) throw SolverError("extension solve did not converge", res);
        sol.U.tail(nf) = x;
    }
    sol.residual = op.matrix * sol.U;
    sol.energy = std::max(0.0, sol.U.dot(sol.residual)) * op.grid.base.cell_volume();
    return sol;
}

/// 4^s Gamma(s) / (2s Gamma(-s)); exactly -1 at s = 1/2.
inline double dtn_constant(double s)
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
    return std::pow(4.0, s) * std::tgamma(s) / (2.0 * s * std::tgamma(-s));
}

namespace detail {

inline void check_levels(const ExtensionSolution& sol)
{
    if (sol.grid.levels < 4) throw std::invalid_argument("DtN extraction needs at least 4 y levels");
}

} // namespace detail

/// lim y^(1-2s) dU/dy by the quotient 2s (U(., y_1) - U(., 0)) / y_1^(2s); unscaled.
inline Eigen::VectorXd dtn_raw(const ExtensionSolution& sol)
{
    detail::check_levels(sol);
    const double s = sol.grid.s;
    return (2.0 * s / std::pow(sol.grid.y[1], 2.0 * s)) * (sol.level(1) - sol.level(0));
}

/// lim y^(1-2s) dU/dy from the discrete Neumann residual on the trace level; unscaled.
inline Eigen::VectorXd dtn_raw_flux(const ExtensionSolution& sol)
{
    detail::check_levels(sol);
    return -sol.residual.head(static_cast<Eigen::Index>(sol.grid.base_size()));
}

/// L^s u recovered from the difference quotient.
inline Eigen::VectorXd dtn_extract(const ExtensionSolution& sol) { return dtn_constant(sol.grid.s) * dtn_raw(sol); }

/// L^s u recovered from the discrete Neumann residual.
inline Eigen::VectorXd dtn_extract_flux(const ExtensionSolution& sol)
{
    return dtn_constant(sol.grid.s) * dtn_raw_flux(sol);
}

/// Discrete Dirichlet functional; equals -<dtn_raw_flux, u> h^dim.
inline double extension_energy(const ExtensionSolution& sol) { return sol.energy; }

/// Weighted H^1 norm (int y^(1-2s) (U^2 + |grad U|^2))^(1/2).
inline double weighted_h1_norm(const ExtensionSolution& sol)
{
    const auto nb = static_cast<Eigen::Index>(sol.grid.base_size());
    double mass = 0.0;
    for (std::size_t j = 0; j < sol.grid.y.size(); ++j)
        mass += sol.grid.weight[j] * sol.U.segment(static_cast<Eigen::Index>(j) * nb, nb).squaredNorm();
    return std::sqrt(mass * sol.grid.base.cell_volume() + sol.energy);
}

/// Discrete Dirichlet functional of an arbitrary field with the same layout.
inline double dirichlet_functional(const ExtensionOperator& op, const Eigen::VectorXd& V)
{
    if (V.size() != op.matrix.rows()) throw std::invalid_argument("field length does not match the extension grid");
    return std::max(0.0, V.dot(op.matrix * V)) * op.grid.base.cell_volume();
}

/**
 * P_y^s(d) for A = I in one dimension:
 * (y^(2s) / (4^s Gamma(s))) int_0^inf exp(-y^2 / 4t) W_t(d) dt / t^(1+s).
 */
inline double poisson_kernel(double y, double d, double s, double rel_tol = 1e-11)
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
    if (!(y > 0.0)) throw std::invalid_argument("Poisson kernel needs y > 0");
    const double r2 = y * y + d * d;
    const double decay = s + 0.5;
    // Scaled by r2^(s + 1/2) so the integral is O(1) at every distance.
    auto integrand = [&](double t) {
        return std::exp(-r2 / (4.0 * t)) / std::sqrt(4.0 * std::numbers::pi * t) * std::pow(t, -1.0 - s) *
               std::pow(r2, decay);
    };
    const double integral = quad::log_time(integrand, r2 / (4.0 * decay), decay, rel_tol);
    return std::pow(y, 2.0 * s) / (std::pow(4.0, s) * std::tgamma(s)) * integral * std::pow(r2, -decay);
}

/// Closed form of the same kernel: Gamma(s + 1/2) / (sqrt(pi) Gamma(s)) y^(2s) (y^2 + d^2)^(-s - 1/2).
inline double poisson_kernel_closed_form(double y, double d, double s)
{
    return std::tgamma(s + 0.5) / (std::sqrt(std::numbers::pi) * std::tgamma(s)) * std::pow(y, 2.0 * s) *
           std::pow(y * y + d * d, -s - 0.5);
}

namespace detail {

/// Mass of the kernel on |d| > a, one side: I_x(s, 1/2) / 2 with x = y^2 / (y^2 + a^2).
inline double poisson_tail_mass(double y, double a, double s)
{
    return 0.5 * gsl_sf_beta_inc(s, 0.5, y * y / (y * y + a * a));
}

/// int P(m h - z) hat(z / h) dz over the two elements of a hat centred at 0.
inline double poisson_hat_weight(double y, double s, double h, long m)
{
    auto f = [&](double z) { return poisson_kernel(y, m * h - z, s) * (1.0 - std::abs(z) / h); };
    if (std::abs(m) <= 2) return quad::adaptive(f, -h, 0.0, 1e-10) + quad::adaptive(f, 0.0, h, 1e-10);
    return quad::gauss<8>(f, -h, 0.0) + quad::gauss<8>(f, 0.0, h);
}

/// Same weight from the closed form; for offsets far from the singularity.
inline double poisson_hat_weight_far(double y, double s, double h, long m)
{
    auto f = [&](double z) { return poisson_kernel_closed_form(y, m * h - z, s) * (1.0 - std::abs(z) / h); };
    return quad::gauss<4>(f, -h, 0.0) + quad::gauss<4>(f, 0.0, h);
}

} // namespace detail

/**
 * U(., y) = int P_y^s(., z) u_h(z) dz for the piecewise-linear interpolant u_h.
 *
 * Periodic grids extend u periodically: offsets up to half a period use the
 * quadrature kernel, offsets up to 64 periods the closed form, and
 * the remaining mass is spread evenly. Zero-exterior grids extend u by zero.
 */
inline Eigen::VectorXd poisson_extend(const Eigen::VectorXd& u, double s, double y, const CartesianGrid& grid)
{
    if (grid.dim != 1) throw std::invalid_argument("poisson_extend supports one-dimensional grids only");
    const int n = grid.nodes_per_axis;
    if (u.size() != n) throw std::invalid_argument("trace length does not match the grid");
    if (!(y > 0.0)) throw std::invalid_argument("Poisson extension needs y > 0");
    const double h = grid.spacing();
    auto residue = [n](long m) { return static_cast<Eigen::Index>(((m % n) + n) % n); };

    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    if (grid.mode == BoundaryMode::periodic) {
        Eigen::VectorXd folded = Eigen::VectorXd::Zero(n);
        const int near = n / 2;
        for (int m = -near; m <= near; ++m) folded[residue(m)] += detail::poisson_hat_weight(y, s, h, m);
        const long far = 64L * n;
        for (long m = near + 1; m <= far; ++m) {
            const double w = detail::poisson_hat_weight_far(y, s, h, m);
            folded[residue(m)] += w;
            folded[residue(-m)] += w;
        }
        const double tail = 2.0 * detail::poisson_tail_mass(y, (static_cast<double>(far) + 0.5) * h, s);
        folded.array() += tail / n;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out[i] += folded[residue(i - j)] * u[j];
        return out;
    }
    std::vector<double> w(static_cast<std::size_t>(2 * n - 1));
    for (int m = -(n - 1); m <= n - 1; ++m) w[static_cast<std::size_t>(m + n - 1)] = detail::poisson_hat_weight(y, s, h, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out[i] += w[static_cast<std::size_t>(i - j + n - 1)] * u[j];
    return out;
}

/// One y level as CSV with columns x, y, U (1D) or x1, x2, y, U (2D).
inline std::string extension_slice_csv(const ExtensionSolution& sol, int level)
{
    const auto& g = sol.grid.base;
    io::CsvTable table(g.dim == 1 ? std::vector<std::string>{"x", "y", "U"}
                                  : std::vector<std::string>{"x1", "x2", "y", "U"});
    const Eigen::VectorXd v = sol.level(level);
    const double yj = sol.grid.y[static_cast<std::size_t>(level)];
    for (std::size_t k = 0; k < g.size(); ++k) {
        const auto p = g.point(k);
        const double val = v[static_cast<Eigen::Index>(k)];
        if (g.dim == 1) table.add_row({p[0], yj, val});
        else table.add_row({p[0], p[1], yj, val});
    }
    return table.str();
}

inline nlohmann::ordered_json to_json(const ExtensionSolution& sol)
{
    nlohmann::ordered_json j;
    j["s"] = sol.grid.s;
    j["Y"] = sol.grid.height;
    j["M"] = sol.grid.levels;
    j["gamma"] = sol.grid.grading;
    j["energy"] = sol.energy;
    const Eigen::VectorXd raw = sol.grid.levels >= 4 ? dtn_raw(sol) : Eigen::VectorXd();
    const Eigen::VectorXd ls = sol.grid.levels >= 4 ? dtn_extract(sol) : Eigen::VectorXd();
    j["dtn"] = std::vector<double>(ls.data(), ls.data() + ls.size());
    j["dtn_raw"] = std::vector<double>(raw.data(), raw.data() + raw.size());
    return j;
}

} // namespace frachom
