#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_zeta.h>

#include "frachom/grid.hpp"
#include "frachom/io.hpp"
#include "frachom/quadrature.hpp"

namespace frachom {

using Point = std::array<double, 2>;

namespace detail {

inline void check_open_order(double s)
{
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("fractional order must lie in (0, 1)");
}

inline double distance(const Point& x, const Point& z, int n)
{
    double d2 = 0.0;
    for (int a = 0; a < n; ++a) d2 += (x[a] - z[a]) * (x[a] - z[a]);
    return std::sqrt(d2);
}

} // namespace detail

/// c_{n,s} = Gamma(n/2 + s) / |Gamma(-s)| * 4^s / pi^(n/2).
inline double c_ns(int n, double s)
{
    detail::check_open_order(s);
    if (n < 1) throw std::invalid_argument("dimension must be positive");
    const double half_n = 0.5 * n;
    return std::exp(std::lgamma(half_n + s) - std::lgamma(-s) + s * std::log(4.0) -
                    half_n * std::log(std::numbers::pi));
}

/// W_t(x, z) = (4 pi t)^(-n/2) exp(-|x - z|^2 / (4t)).
inline double gaussian_heat_kernel(double t, const Point& x, const Point& z, int n)
{
    if (!(t > 0.0)) throw std::invalid_argument("heat kernel time must be positive");
    const double d = detail::distance(x, z, n);
    return std::pow(4.0 * std::numbers::pi * t, -0.5 * n) * std::exp(-d * d / (4.0 * t));
}

/**
 * K^s(x, z) = (1 / (2 |Gamma(-s)|)) int_0^inf W_t(x, z) t^(-1-s) dt by quadrature in ln t.
 */
inline double kernel_Ks(const Point& x, const Point& z, double s, int n, double rel_tol = 1e-10)
{
    detail::check_open_order(s);
    const double d = detail::distance(x, z, n);
    if (!(d > 0.0)) throw std::invalid_argument("kernel is singular on the diagonal");
    const double decay = 0.5 * n + s;
    auto integrand = [&](double t) { return gaussian_heat_kernel(t, x, z, n) * std::pow(t, -1.0 - s); };
    const double integral = quad::log_time(integrand, d * d / (4.0 * decay), decay, rel_tol);
    return integral / (2.0 * std::abs(std::tgamma(-s)));
}

/// (c_{n,s} / 2) |x - z|^(-n - 2s).
inline double kernel_closed_form(double d, double s, int n)
{
    return 0.5 * c_ns(n, s) * std::pow(d, -n - 2.0 * s);
}

/// Two-sided Gaussian bounds c1 t^(-n/2) e^(-d^2/(c2 t)) <= W_t <= c3 t^(-n/2) e^(-d^2/(c4 t)).
struct HeatKernelConstants {
    double c1;
    double c2;
    double c3;
    double c4;

    static HeatKernelConstants gaussian(int n)
    {
        const double c = std::pow(4.0 * std::numbers::pi, -0.5 * n);
        return {c, 4.0, c, 4.0};
    }
};

struct KernelBounds {
    double lower;
    double upper;
};

/// Pointwise bounds on K^s at distance d implied by the heat kernel bounds.
inline KernelBounds kernel_bounds(double d, double s, int n, const HeatKernelConstants& k)
{
    detail::check_open_order(s);
    if (!(d > 0.0)) throw std::invalid_argument("kernel bounds need a positive distance");
    const double p = 0.5 * n + s;
    const double base = std::tgamma(p) / (2.0 * std::abs(std::tgamma(-s))) * std::pow(d, -2.0 * p);
    return {k.c1 * std::pow(k.c2, p) * base, k.c3 * std::pow(k.c4, p) * base};
}

inline KernelBounds kernel_bounds(double d, double s, int n)
{
    return kernel_bounds(d, s, n, HeatKernelConstants::gaussian(n));
}

/**
 * Dense matrix B[i][j] = B^s(chi_i, chi_j) of the fractional Laplacian form
 * (c_{1,s}/2) int int (v(x)-v(z))(w(x)-w(z)) |x-z|^(-1-2s) dx dz over P1 hat
 * functions of a 1D grid.
 *
 * Periodic grids use the periodized kernel. Zero-exterior grids extend every
 * function by zero outside the box.
 */
struct KernelMatrix {
    CartesianGrid grid;
    double s = 0.5;
    Eigen::MatrixXd form;
    double far_field_check = 0.0; // relative change of the nearest far-field block from 8 to 16 Gauss points

    Eigen::Index size() const { return form.rows(); }
};

namespace detail {

inline void gsl_quiet()
{
    static const bool done = [] {
        gsl_set_error_handler_off();
        return true;
    }();
    (void)done;
}

/// Hurwitz zeta zeta(p, q) with GSL errors turned into exceptions.
inline double hurwitz_zeta(double p, double q)
{
    gsl_quiet();
    gsl_sf_result r;
    const int status = gsl_sf_hzeta_e(p, q, &r);
    if (status != GSL_SUCCESS) throw std::runtime_error(std::string("Hurwitz zeta failed: ") + gsl_strerror(status));
    return r.val;
}

/// Local 4x4 block over nodes (e, e+1, e+m, e+m+1) for x in element 0 and z in element m.
using Block = Eigen::Matrix4d;

template <std::size_t P, class Kernel>
Block element_pair(double h, int m, Kernel&& kernel)
{
    const auto& rule = quad::gauss_unit<P>();
    Block b = Block::Zero();
    for (std::size_t i = 0; i < P; ++i) {
        const double xi = rule.nodes[i];
        for (std::size_t j = 0; j < P; ++j) {
            const double eta = rule.nodes[j];
            const double w = rule.weights[i] * rule.weights[j] * h * h * kernel(h * (xi - m - eta));
            // Differences chi_p(x) - chi_p(z) for the four local hats.
            const Eigen::Vector4d d(1.0 - xi, xi, -(1.0 - eta), -eta);
            b.noalias() += w * d * d.transpose();
        }
    }
    return b;
}

} // namespace detail

/**
 * Assembles the P1 Galerkin matrix of the fractional Laplacian form on a 1D grid.
 *
 * Element pairs are split into the same-element block (closed form), the
 * adjacent block (exact integrals of eta^q (1+eta)^(-1-2s) after a Duffy
 * split) and the far field (8x8 Gauss-Legendre). In periodic mode the image
 * sum of the kernel is added through the Hurwitz zeta function. In
 * zero-exterior mode the mesh carries one extra vanishing node on each side
 * and the exterior of the box contributes c int chi_i chi_j kappa with
 * kappa(x) = ((x-a)^(-2s) + (b-x)^(-2s)) / (2s).
 */
inline KernelMatrix assemble_fraclap_form(const CartesianGrid& grid, double s)
{
    detail::check_open_order(s);
    if (grid.dim != 1) throw std::invalid_argument("kernel assembly supports 1D grids only");

    const double h = grid.spacing();
    const double c = c_ns(1, s);
    const double p = 1.0 + 2.0 * s;
    const double L = 2.0 * grid.half_width;
    const bool periodic = grid.mode == BoundaryMode::periodic;
    const int n = grid.nodes_per_axis;

    auto direct = [&](double u) { return 0.5 * c * std::pow(std::abs(u), -p); };
    auto images = [&](double u) {
        return 0.5 * c * std::pow(L, -p) * (detail::hurwitz_zeta(p, 1.0 + u / L) + detail::hurwitz_zeta(p, 1.0 - u / L));
    };

    // Same element: int_0^h int_0^h |x-z|^(1-2s) = 2 h^(3-2s) / ((2-2s)(3-2s)).
    Eigen::Matrix2d same;
    same << 1.0, -1.0, -1.0, 1.0;
    same *= 0.5 * c * std::pow(h, 1.0 - 2.0 * s) * 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));

    // Adjacent elements sharing a node; ordered pair (x left, z right).
    auto moment = [&](int q) {
        return quad::adaptive([&](double e) { return std::pow(e, q) * std::pow(1.0 + e, -p); }, 0.0, 1.0, 1e-14);
    };
    const double j20 = (moment(0) + moment(2)) / (3.0 - 2.0 * s);
    const double j11 = 2.0 * moment(1) / (3.0 - 2.0 * s);
    const Eigen::Vector3d a(-1.0, 1.0, 0.0);
    const Eigen::Vector3d b(0.0, -1.0, 1.0);
    const Eigen::Matrix3d adjacent = 0.5 * c * std::pow(h, 1.0 - 2.0 * s) *
                                     (j20 * (a * a.transpose() + b * b.transpose()) +
                                      j11 * (a * b.transpose() + b * a.transpose()));

    // Nodes of the element mesh: periodic uses n nodes mod n; zero-exterior uses n + 2 with ends dropped.
    const int mesh_nodes = periodic ? n : n + 2;
    const int elements = periodic ? n : n + 1;
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(mesh_nodes, mesh_nodes);
    auto node = [&](int k) { return periodic ? ((k % n) + n) % n : k; };

    const int m_max = periodic ? n / 2 : elements - 1;
    for (int m = 0; m <= m_max; ++m) {
        // Ordered pairs (E, E+m) and (E+m, E) give equal blocks; the periodic offset n/2 is its own mirror.
        const double mult = (m == 0 || (periodic && 2 * m == n)) ? 1.0 : 2.0;
        detail::Block block = detail::Block::Zero();
        if (m >= 2) block += detail::element_pair<8>(h, m, direct);
        if (periodic) block += detail::element_pair<8>(h, m, images);
        const int e_count = periodic ? n : elements - m;
        for (int e = 0; e < e_count; ++e) {
            const std::array<int, 4> idx{node(e), node(e + 1), node(e + m), node(e + m + 1)};
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) full(idx[i], idx[j]) += mult * block(i, j);
            if (m == 0) {
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) full(idx[i], idx[j]) += same(i, j);
            } else if (m == 1) {
                const std::array<int, 3> adj{idx[0], idx[1], idx[3]};
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) full(adj[i], adj[j]) += 2.0 * adjacent(i, j);
            }
        }
    }

    KernelMatrix km{grid, s, Eigen::MatrixXd(), 0.0};
    const detail::Block b8 = detail::element_pair<8>(h, 2, direct);
    const detail::Block b16 = detail::element_pair<16>(h, 2, direct);
    km.far_field_check = (b8 - b16).norm() / b16.norm();
    if (!(km.far_field_check < 1e-6)) throw std::runtime_error("far-field quadrature tolerance not met");

    if (periodic) {
        km.form = std::move(full);
    } else {
        // Exterior tail: chi_i chi_j against kappa on the mesh [a, b].
        const double lo = -grid.half_width - h;
        const double hi = grid.half_width;
        auto kappa = [&](double x) { return (std::pow(x - lo, -2.0 * s) + std::pow(hi - x, -2.0 * s)) / (2.0 * s); };
        const auto& rule = quad::gauss_unit<16>();
        for (int e = 0; e < elements; ++e) {
            const double x0 = lo + e * h;
            const bool left_end = e == 0;
            const bool right_end = e == elements - 1;
            Eigen::Matrix2d local = Eigen::Matrix2d::Zero();
            for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
                // Substitution xi = t^2 (from the singular end) flattens the endpoint singularity.
                const double t = rule.nodes[q];
                double xi = rule.nodes[q];
                double jac = 1.0;
                if (left_end) {
                    xi = t * t;
                    jac = 2.0 * t;
                } else if (right_end) {
                    xi = 1.0 - t * t;
                    jac = 2.0 * t;
                }
                const Eigen::Vector2d phi(1.0 - xi, xi);
                local.noalias() += rule.weights[q] * jac * h * kappa(x0 + h * xi) * phi * phi.transpose();
            }
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) full(e + i, e + j) += c * local(i, j);
        }
        km.form = full.block(1, 1, n, n);
    }
    km.form = 0.5 * (km.form + km.form.transpose()).eval();
    return km;
}

inline double bilinear_eval(const KernelMatrix& k, const Eigen::VectorXd& v, const Eigen::VectorXd& w)
{
    if (v.size() != k.size() || w.size() != k.size()) throw std::invalid_argument("vector length does not match the form");
    return v.dot(k.form * w);
}

/// Binary layout: uint64 N, float64 s, then N*N float64 row-major, all little-endian host order.
inline void write_binary(std::ostream& out, const KernelMatrix& k)
{
    const auto n = static_cast<std::uint64_t>(k.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&k.s), sizeof k.s);
    for (Eigen::Index i = 0; i < k.size(); ++i)
        for (Eigen::Index j = 0; j < k.size(); ++j) {
            const double v = k.form(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}

inline std::string kernel_csv(const KernelMatrix& k)
{
    std::string out;
    for (Eigen::Index i = 0; i < k.size(); ++i) {
        for (Eigen::Index j = 0; j < k.size(); ++j) {
            if (j) out += ',';
            out += io::format_double(k.form(i, j));
        }
        out += '\n';
    }
    return out;
}

} // namespace frachom
