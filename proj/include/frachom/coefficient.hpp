#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "frachom/grid.hpp"
#include "frachom/profile.hpp"
#include "frachom/quadrature.hpp"

namespace frachom {

/// How the flux stencil obtains coefficients on the faces between nodes.
enum class FaceRule {
    node_harmonic,   // harmonic mean of the two nodal samples
    cell_integrated, // exact cell average of 1/a (or of a, across laminate layers)
};

/**
 * Sampled symmetric coefficient field A(x) with an ellipticity certificate.
 *
 * `ellipticity` is the smallest lambda >= 1 with
 * lambda^-1 |xi|^2 <= xi.A(x)xi <= lambda |xi|^2 at every sample.
 * When `faces[axis]` is non-empty, entry k is the coefficient on the face
 * between node k and its +axis neighbour.
 */
struct CoefficientField {
    CartesianGrid grid;
    std::vector<Eigen::Matrix2d> samples;
    double ellipticity = 1.0;
    std::array<std::vector<double>, 2> faces;

    const Eigen::Matrix2d& at(std::size_t k) const { return samples[k]; }
};

namespace detail {

inline std::pair<double, double> eigen_range(const Eigen::Matrix2d& a, int dim)
{
    if (dim == 1) return {a(0, 0), a(0, 0)};
    const double mean = 0.5 * (a(0, 0) + a(1, 1));
    const double diff = 0.5 * (a(0, 0) - a(1, 1));
    const double r = std::hypot(diff, a(0, 1));
    return {mean - r, mean + r};
}

inline double certificate(const std::vector<Eigen::Matrix2d>& samples, int dim)
{
    double lambda = 1.0;
    for (const auto& a : samples) {
        if (dim == 2 && a(0, 1) != a(1, 0)) throw std::invalid_argument("coefficient sample is not symmetric");
        const auto [lo, hi] = eigen_range(a, dim);
        if (!(lo > 0.0) || !std::isfinite(hi)) throw std::invalid_argument("coefficient sample is not elliptic");
        lambda = std::max({lambda, hi, 1.0 / lo});
    }
    return lambda;
}

} // namespace detail

inline CoefficientField field_from_samples(const CartesianGrid& grid, std::vector<Eigen::Matrix2d> samples)
{
    if (samples.size() != grid.size()) throw std::invalid_argument("sample count does not match the grid");
    CoefficientField field{grid, std::move(samples), 1.0, {}};
    field.ellipticity = detail::certificate(field.samples, grid.dim);
    return field;
}

inline CoefficientField constant_field(const CartesianGrid& grid, const Eigen::Matrix2d& a)
{
    return field_from_samples(grid, std::vector<Eigen::Matrix2d>(grid.size(), a));
}

inline CoefficientField constant_field(const CartesianGrid& grid, double value)
{
    return constant_field(grid, Eigen::Matrix2d::Identity() * value);
}

/**
 * Samples A_eps(x) = A(x1/eps) from a 1-periodic profile.
 *
 * The certificate uses the analytic range of the profile, so it holds for
 * every x, not only at nodes. With FaceRule::cell_integrated the faces carry
 * the exact cell harmonic mean across the oscillation direction and the exact
 * arithmetic mean along laminate layers.
 */
inline CoefficientField periodic_coefficient(const Profile& profile, double eps, const CartesianGrid& grid,
                                             FaceRule rule = FaceRule::cell_integrated)
{
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (grid.dim == 1 && profile.family == Profile::Family::laminate2d)
        throw std::invalid_argument("laminate profiles need a 2D grid");
    if (grid.dim == 2 && profile.family == Profile::Family::scalar && !profile.is_constant())
        throw std::invalid_argument("2D oscillating coefficients must use the laminate family");

    std::vector<Eigen::Matrix2d> samples(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) samples[k] = profile.evaluate(grid.point(k)[0] / eps);

    CoefficientField field{grid, std::move(samples), 1.0, {}};
    const double lo = std::min(profile.axis_x.lower_bound(),
                               grid.dim == 2 ? profile.axis_y.lower_bound() : profile.axis_x.lower_bound());
    const double hi = std::max(profile.axis_x.upper_bound(),
                               grid.dim == 2 ? profile.axis_y.upper_bound() : profile.axis_x.upper_bound());
    field.ellipticity = std::max({1.0, hi, 1.0 / lo, detail::certificate(field.samples, grid.dim)});

    if (rule == FaceRule::node_harmonic || profile.is_constant()) return field;

    const double h = grid.spacing();
    const auto& a1 = profile.axis_x;
    const auto& a2 = profile.family == Profile::Family::laminate2d ? profile.axis_y : profile.axis_x;
    // Four 16-point Gauss panels per cell; exact to round-off for sin1d with eps >= 4h.
    auto cell_mean = [&](auto&& g, double x0) {
        constexpr int pieces = 4;
        double sum = 0.0;
        for (int p = 0; p < pieces; ++p)
            sum += quad::gauss<16>(g, x0 + p * h / pieces, x0 + (p + 1) * h / pieces);
        return sum / h;
    };

    field.faces[0].resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double x = grid.point(k)[0];
        field.faces[0][k] = 1.0 / cell_mean([&](double t) { return 1.0 / a1(t / eps); }, x);
    }
    if (grid.dim == 2) {
        // Faces normal to x2 straddle the dual cell [x - h/2, x + h/2] in x1.
        field.faces[1].resize(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double x = grid.point(k)[0];
            field.faces[1][k] = cell_mean([&](double t) { return a2(t / eps); }, x - 0.5 * h);
        }
    }
    return field;
}

} // namespace frachom
