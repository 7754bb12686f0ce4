#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "frachom/errors.hpp"
#include "frachom/kernel.hpp"
#include "frachom/local_op.hpp"
#include "frachom/mask.hpp"
#include "frachom/spectral.hpp"

namespace frachom {

enum class Route { spectral, kernel };

inline std::string to_string(Route r) { return r == Route::spectral ? "spectral" : "kernel"; }

inline Route route_from_string(const std::string& name)
{
    if (name == "spectral") return Route::spectral;
    if (name == "kernel") return Route::kernel;
    throw std::invalid_argument("unknown route '" + name + "'");
}

/**
 * Nodal matrix of a fractional form, weighted so that v^T M w approximates
 * the continuum pairing <L^(s/2) v, L^(s/2) w>.
 *
 * `seminorm` is the same kind of matrix for A = I and gives the H^s seminorm.
 * `decomposition` is set on the spectral route and gives L^(s/2) u.
 */
struct NonlocalForm {
    Route route = Route::spectral;
    double s = 0.5;
    CartesianGrid grid;
    std::shared_ptr<const Eigen::MatrixXd> matrix;
    std::shared_ptr<const Eigen::MatrixXd> seminorm;
    std::shared_ptr<const SpectralDecomposition> decomposition;
    double norm = 0.0;
};

namespace detail {

inline std::shared_ptr<const Eigen::MatrixXd> weighted_power(const SpectralDecomposition& dec, double s)
{
    Eigen::VectorXd w(dec.size());
    for (Eigen::Index k = 0; k < dec.size(); ++k) w[k] = power(dec.values[k], s);
    auto m = std::make_shared<Eigen::MatrixXd>(dec.grid.cell_volume() *
                                               (dec.vectors * w.asDiagonal() * dec.vectors.transpose()));
    *m = 0.5 * (*m + m->transpose()).eval();
    return m;
}

inline double row_sum_norm(const Eigen::MatrixXd& m) { return m.cwiseAbs().rowwise().sum().maxCoeff(); }

} // namespace detail

/**
 * Spectral-route form h^dim * L^s from a decomposition of L.
 *
 * `identity` is the decomposition of the A = I operator on the same grid; pass
 * nullptr when `dec` itself is that operator.
 */
inline NonlocalForm spectral_form(std::shared_ptr<const SpectralDecomposition> dec, double s,
                                  std::shared_ptr<const SpectralDecomposition> identity = nullptr)
{
    if (!dec) throw std::invalid_argument("spectral form needs a decomposition");
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
    NonlocalForm form{Route::spectral, s, dec->grid, detail::weighted_power(*dec, s), nullptr, dec, 0.0};
    if (identity && !(identity->grid == dec->grid)) throw std::invalid_argument("identity decomposition grid differs");
    form.seminorm = identity ? detail::weighted_power(*identity, s) : form.matrix;
    form.norm = detail::row_sum_norm(*form.matrix);
    return form;
}

/// Kernel-route form: the assembled matrix is already the continuum pairing for A = I.
inline NonlocalForm kernel_form(const KernelMatrix& km)
{
    auto m = std::make_shared<const Eigen::MatrixXd>(km.form);
    NonlocalForm form{Route::kernel, km.s, km.grid, m, m, nullptr, 0.0};
    form.norm = detail::row_sum_norm(*m);
    return form;
}

/// Spectral form of the constant-coefficient operator -div(a grad) on `grid`.
inline NonlocalForm laplacian_form(const CartesianGrid& grid, double s, double a = 1.0)
{
    auto dec = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(grid, constant_field(grid, a))));
    if (a == 1.0) return spectral_form(dec, s);
    auto id = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(grid, constant_field(grid, 1.0))));
    return spectral_form(dec, s, id);
}

struct SolveReport {
    Route route = Route::spectral;
    double s = 0.5;
    CartesianGrid grid;
    Eigen::VectorXd u;
    double l2 = 0.0;        // h^dim-weighted L2 norm of u
    double hs_seminorm = 0.0; // ||(-Delta)^(s/2) u||
    double flux = 0.0;      // ||L^(s/2) u||
    double residual = 0.0;  // reduced-system residual relative to ||F|| + ||B|| ||g||
    double dual_f = 0.0;    // discrete dual norm of f on the interior
};

/// sqrt(||v||^2_{L2} + v^T S v) with S the A = I seminorm matrix of `form`.
inline double hs_norm(const Eigen::VectorXd& v, const NonlocalForm& form)
{
    if (v.size() != form.seminorm->rows()) throw std::invalid_argument("vector length does not match the form");
    const double semi = std::max(0.0, v.dot(*form.seminorm * v));
    return std::sqrt(form.grid.cell_volume() * v.squaredNorm() + semi);
}

/// H^s norm computed spectrally with the A = I operator on `grid`.
inline double hs_norm(const Eigen::VectorXd& v, const CartesianGrid& grid, double s)
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
    const auto dec = decompose(assemble_stiffness(grid, constant_field(grid, 1.0)));
    const double semi = half_apply(dec, s, v).squaredNorm() * grid.cell_volume();
    return std::sqrt(grid.cell_volume() * v.squaredNorm() + semi);
}

/**
 * Solves B(u, w) = <f, w> for every interior hat w, with u = g on pinned nodes.
 *
 * f and g are full nodal vectors; f is read on Interior nodes, g on Exterior
 * and Hole nodes, and the whole of g is the extension used in ||g||_{H^s}.
 * The load is lumped: F_i = h^dim f_i.
 */
inline SolveReport solve_nonlocal(const NonlocalForm& form, const DomainMask& mask, const Eigen::VectorXd& f,
                                  const Eigen::VectorXd& g)
{
    const auto& B = *form.matrix;
    const Eigen::Index n = B.rows();
    if (!(mask.grid == form.grid)) throw std::invalid_argument("mask and form grids differ");
    if (f.size() != n || g.size() != n) throw std::invalid_argument("data length does not match the grid");
    const auto interior = mask.interior_indices();
    const auto pinned = mask.pinned_indices();
    if (interior.empty()) throw std::invalid_argument("singular reduced system: the mask has no interior nodes");

    const auto ni = static_cast<Eigen::Index>(interior.size());
    const auto np = static_cast<Eigen::Index>(pinned.size());
    const double vol = form.grid.cell_volume();
    Eigen::MatrixXd S(ni, ni);
    Eigen::MatrixXd C(ni, np);
    Eigen::VectorXd F(ni);
    Eigen::VectorXd gp(np);
    for (Eigen::Index p = 0; p < np; ++p) gp[p] = g[static_cast<Eigen::Index>(pinned[static_cast<std::size_t>(p)])];
    for (Eigen::Index a = 0; a < ni; ++a) {
        const auto ia = static_cast<Eigen::Index>(interior[static_cast<std::size_t>(a)]);
        F[a] = vol * f[ia];
        for (Eigen::Index b = 0; b < ni; ++b) S(a, b) = B(ia, static_cast<Eigen::Index>(interior[static_cast<std::size_t>(b)]));
        for (Eigen::Index p = 0; p < np; ++p) C(a, p) = B(ia, static_cast<Eigen::Index>(pinned[static_cast<std::size_t>(p)]));
    }
    const Eigen::VectorXd rhs = F - C * gp;

    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw SolverError("singular reduced system", std::nan(""));
    const Eigen::VectorXd x = llt.solve(rhs);

    SolveReport rep{form.route, form.s, form.grid, g, 0.0, 0.0, 0.0, 0.0, 0.0};
    for (Eigen::Index a = 0; a < ni; ++a) rep.u[static_cast<Eigen::Index>(interior[static_cast<std::size_t>(a)])] = x[a];
    const double scale = F.norm() + form.norm * gp.norm();
    rep.residual = scale > 0.0 ? (S * x - rhs).norm() / scale : (S * x - rhs).norm();
    if (!(rep.residual <= 1e-8)) throw SolverError("reduced nonlocal system not solved to tolerance", rep.residual);

    rep.l2 = std::sqrt(vol * rep.u.squaredNorm());
    rep.flux = std::sqrt(std::max(0.0, rep.u.dot(B * rep.u)));
    rep.hs_seminorm = std::sqrt(std::max(0.0, rep.u.dot(*form.seminorm * rep.u)));
    rep.dual_f = llt.matrixL().solve(F).norm();
    return rep;
}

/**
 * Contrast solver with the spectral Dirichlet power (L restricted to O)^s.
 *
 * Only homogeneous exterior data is meaningful for this operator.
 */
inline SolveReport solve_spectral_dirichlet(const DiscreteOperator& op, const DomainMask& mask, double s,
                                            const Eigen::VectorXd& f, const Eigen::VectorXd& g)
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
    if (!(mask.grid == op.grid)) throw std::invalid_argument("mask and operator grids differ");
    for (auto k : mask.pinned_indices())
        if (g[static_cast<Eigen::Index>(k)] != 0.0)
            throw std::invalid_argument("the spectral Dirichlet variant needs zero exterior data");
    const auto interior = mask.interior_indices();
    const auto ni = static_cast<Eigen::Index>(interior.size());
    if (ni == 0) throw std::invalid_argument("singular reduced system: the mask has no interior nodes");
    const Eigen::MatrixXd full(op.matrix);
    Eigen::MatrixXd block(ni, ni);
    for (Eigen::Index a = 0; a < ni; ++a)
        for (Eigen::Index b = 0; b < ni; ++b)
            block(a, b) = full(static_cast<Eigen::Index>(interior[static_cast<std::size_t>(a)]),
                               static_cast<Eigen::Index>(interior[static_cast<std::size_t>(b)]));
    const auto dec = decompose(op.grid, block);
    Eigen::VectorXd fi(ni);
    for (Eigen::Index a = 0; a < ni; ++a) fi[a] = f[static_cast<Eigen::Index>(interior[static_cast<std::size_t>(a)])];
    for (Eigen::Index k = 0; k < dec.size(); ++k)
        if (!(dec.values[k] > 0.0)) throw SolverError("singular spectral Dirichlet operator", 0.0);
    const Eigen::VectorXd x = apply_phi(dec, [s](double l) { return std::pow(l, -s); }, fi);
    const Eigen::VectorXd back = apply_phi(dec, [s](double l) { return std::pow(l, s); }, x);

    SolveReport rep{Route::spectral, s, op.grid, Eigen::VectorXd::Zero(op.size()), 0.0, 0.0, 0.0, 0.0, 0.0};
    for (Eigen::Index a = 0; a < ni; ++a) rep.u[static_cast<Eigen::Index>(interior[static_cast<std::size_t>(a)])] = x[a];
    rep.residual = (back - fi).norm() / std::max(fi.norm(), 1e-300);
    const double vol = op.grid.cell_volume();
    rep.l2 = std::sqrt(vol * rep.u.squaredNorm());
    rep.flux = std::sqrt(vol * x.dot(back));
    rep.hs_seminorm = std::nan("");
    rep.dual_f = std::sqrt(vol * fi.dot(x));
    return rep;
}

/// ||u||_{H^s} / (||f||_* + ||g||_{H^s}); zero when the data vanish.
inline double stability_check(const SolveReport& rep, const NonlocalForm& form, const Eigen::VectorXd& g)
{
    const double denom = rep.dual_f + hs_norm(g, form);
    return denom > 0.0 ? hs_norm(rep.u, form) / denom : 0.0;
}

/// ||L^(s/2) u|| / (||f||_* + ||g||_{H^s}); zero when the data vanish.
inline double flux_check(const SolveReport& rep, const NonlocalForm& form, const Eigen::VectorXd& g)
{
    const double denom = rep.dual_f + hs_norm(g, form);
    return denom > 0.0 ? rep.flux / denom : 0.0;
}

/// L^(s/2) u on the spectral route.
inline Eigen::VectorXd flux_vector(const NonlocalForm& form, const Eigen::VectorXd& u)
{
    if (!form.decomposition) throw std::invalid_argument("flux vectors need the spectral route");
    return half_apply(*form.decomposition, form.s, u);
}

inline nlohmann::ordered_json to_json(const SolveReport& rep)
{
    nlohmann::ordered_json j;
    j["route"] = to_string(rep.route);
    j["s"] = rep.s;
    j["N"] = rep.grid.nodes_per_axis;
    j["R"] = rep.grid.half_width;
    j["norms"] = {{"l2", rep.l2}, {"hs", rep.hs_seminorm}, {"flux", rep.flux}, {"residual", rep.residual}};
    j["u"] = std::vector<double>(rep.u.data(), rep.u.data() + rep.u.size());
    return j;
}

} // namespace frachom
