#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "frachom/io.hpp"
#include "frachom/local_op.hpp"

namespace frachom {

/**
 * Eigenpairs L = Phi diag(lambda) Phi^T of a symmetric PSD matrix.
 *
 * Eigenvalues are ascending and non-negative; values within 1e-10 ||L|| of
 * zero are stored as exactly 0 so the kernel is treated exactly.
 */
struct SpectralDecomposition {
    CartesianGrid grid;
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    double op_norm = 0.0;

    Eigen::Index size() const { return values.size(); }
};

inline constexpr Eigen::Index default_dense_cap = 4096;

inline SpectralDecomposition decompose(const CartesianGrid& grid, const Eigen::MatrixXd& matrix,
                                       Eigen::Index cap = default_dense_cap)
{
    if (matrix.rows() != matrix.cols()) throw std::invalid_argument("matrix is not square");
    if (matrix.rows() > cap)
        throw std::invalid_argument("operator size " + std::to_string(matrix.rows()) +
                                    " exceeds the dense cap " + std::to_string(cap));
    if (matrix != matrix.transpose()) throw std::invalid_argument("operator is not symmetric");

    const double norm = matrix.cwiseAbs().rowwise().sum().maxCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix);
    if (solver.info() != Eigen::Success) throw std::runtime_error("dense eigensolver failed");

    SpectralDecomposition dec{grid, solver.eigenvalues(), solver.eigenvectors(), norm};
    const double tol = 1e-10 * norm;
    for (Eigen::Index k = 0; k < dec.values.size(); ++k) {
        if (dec.values[k] < -tol) throw std::invalid_argument("operator is not positive semidefinite");
        if (std::abs(dec.values[k]) <= tol) dec.values[k] = 0.0;
    }
    return dec;
}

inline SpectralDecomposition decompose(const DiscreteOperator& op, Eigen::Index cap = default_dense_cap)
{
    if (op.size() > cap)
        throw std::invalid_argument("operator size " + std::to_string(op.size()) + " exceeds the dense cap " +
                                    std::to_string(cap));
    return decompose(op.grid, Eigen::MatrixXd(op.matrix), cap);
}

/// phi(L) v = sum_k phi(lambda_k) (v . phi_k) phi_k.
template <class Phi>
Eigen::VectorXd apply_phi(const SpectralDecomposition& dec, Phi&& phi, const Eigen::VectorXd& v)
{
    if (v.size() != dec.size()) throw std::invalid_argument("vector length does not match the decomposition");
    Eigen::VectorXd coef = dec.vectors.transpose() * v;
    for (Eigen::Index k = 0; k < coef.size(); ++k) {
        const double w = phi(dec.values[k]);
        if (!std::isfinite(w)) throw std::domain_error("spectral function is not finite at an eigenvalue");
        coef[k] *= w;
    }
    return dec.vectors * coef;
}

namespace detail {

inline void check_order(double s)
{
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1]");
}

inline double power(double lambda, double p) { return lambda == 0.0 ? 0.0 : std::pow(lambda, p); }

} // namespace detail

inline Eigen::VectorXd fractional_apply(const SpectralDecomposition& dec, double s, const Eigen::VectorXd& v)
{
    detail::check_order(s);
    return apply_phi(dec, [s](double l) { return detail::power(l, s); }, v);
}

/// L^(s/2) v, so that <L^s v, v> = |L^(s/2) v|^2.
inline Eigen::VectorXd half_apply(const SpectralDecomposition& dec, double s, const Eigen::VectorXd& v)
{
    detail::check_order(s);
    return apply_phi(dec, [s](double l) { return detail::power(l, 0.5 * s); }, v);
}

inline Eigen::VectorXd heat_apply(const SpectralDecomposition& dec, double t, const Eigen::VectorXd& v)
{
    if (!(t >= 0.0)) throw std::invalid_argument("heat time must be non-negative");
    return apply_phi(dec, [t](double l) { return std::exp(-t * l); }, v);
}

/// ||L^(s/2) v|| in the h^dim-weighted discrete L2 norm.
inline double energy_norm(const SpectralDecomposition& dec, double s, const Eigen::VectorXd& v)
{
    return half_apply(dec, s, v).norm() * std::sqrt(dec.grid.cell_volume());
}

/// Log-uniform time nodes for the semigroup integral.
struct QuadSpec {
    int nodes = 200;
    double t_min = 1e-8;
    double t_max = 1e4;
};

/**
 * L^s v from the heat semigroup: (1/Gamma(-s)) int_0^inf (e^{-tL} v - v) t^{-1-s} dt.
 *
 * The kernel component of v is removed first (L^s annihilates it). The
 * trapezoid rule in ln t covers [t_min, t_max]; the two tails use the
 * expansions e^{-tL} ~ 1 - tL + t^2 L^2 / 2 below t_min and e^{-tL} ~ 0 above t_max.
 */
inline Eigen::VectorXd balakrishnan_apply(const SpectralDecomposition& dec, double s, const Eigen::VectorXd& v,
                                          const QuadSpec& spec = {})
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("semigroup quadrature needs s in (0, 1)");
    if (spec.nodes < 2 || !(spec.t_min > 0.0) || !(spec.t_max > spec.t_min))
        throw std::invalid_argument("empty semigroup quadrature range");

    const Eigen::VectorXd perp = apply_phi(dec, [](double l) { return l == 0.0 ? 0.0 : 1.0; }, v);
    const double a = std::log(spec.t_min);
    const double b = std::log(spec.t_max);
    const double step = (b - a) / (spec.nodes - 1);

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.size());
    for (int m = 0; m < spec.nodes; ++m) {
        const double tau = a + m * step;
        const double t = std::exp(tau);
        const double w = (m == 0 || m == spec.nodes - 1 ? 0.5 : 1.0) * step * std::pow(t, -s);
        acc += w * (heat_apply(dec, t, perp) - perp);
    }
    const Eigen::VectorXd lv = apply_phi(dec, [](double l) { return l; }, perp);
    const Eigen::VectorXd l2v = apply_phi(dec, [](double l) { return l * l; }, perp);
    acc += -std::pow(spec.t_min, 1.0 - s) / (1.0 - s) * lv + std::pow(spec.t_min, 2.0 - s) / (2.0 * (2.0 - s)) * l2v;
    acc += -std::pow(spec.t_max, -s) / s * perp;
    return acc / std::tgamma(-s);
}

inline std::string eigenvalue_csv(const SpectralDecomposition& dec)
{
    io::CsvTable table({"k", "lambda"});
    for (Eigen::Index k = 0; k < dec.size(); ++k) table.add_row({std::to_string(k), io::format_double(dec.values[k])});
    return table.str();
}

} // namespace frachom
