#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace frachom {

enum class BoundaryMode { periodic, zero_exterior };

inline std::string to_string(BoundaryMode mode)
{
    return mode == BoundaryMode::periodic ? "periodic" : "zero-exterior";
}

inline BoundaryMode boundary_mode_from_string(std::string_view name)
{
    if (name == "periodic") return BoundaryMode::periodic;
    if (name == "zero-exterior") return BoundaryMode::zero_exterior;
    throw std::invalid_argument("unknown boundary mode '" + std::string(name) + "'");
}

/**
 * Uniform tensor grid on the truncation box [-R, R)^dim.
 *
 * Node i on an axis sits at x_i = -R + i*h with h = 2R/N. Coordinates are
 * never stored; only (dim, R, N, mode) define the grid. Flat node indices run
 * fastest along the first axis: k = i + N*j.
 */
struct CartesianGrid {
    int dim = 1;
    double half_width = 1.0;
    int nodes_per_axis = 4;
    BoundaryMode mode = BoundaryMode::periodic;

    double spacing() const { return 2.0 * half_width / nodes_per_axis; }

    std::size_t size() const
    {
        std::size_t n = static_cast<std::size_t>(nodes_per_axis);
        return dim == 1 ? n : n * n;
    }

    double coordinate(int i) const { return -half_width + i * spacing(); }

    std::array<int, 2> index(std::size_t k) const
    {
        const auto n = static_cast<std::size_t>(nodes_per_axis);
        return {static_cast<int>(k % n), static_cast<int>(k / n)};
    }

    std::size_t flat(int i, int j = 0) const
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(nodes_per_axis) * static_cast<std::size_t>(j);
    }

    std::array<double, 2> point(std::size_t k) const
    {
        const auto ij = index(k);
        return {coordinate(ij[0]), dim == 2 ? coordinate(ij[1]) : 0.0};
    }

    /// h^dim, the weight of the discrete L2 inner product.
    double cell_volume() const { return std::pow(spacing(), dim); }

    /// Neighbour of node k one step along `axis` in direction `step` (+1 or -1).
    /// Returns -1 when the step leaves a zero-exterior box.
    std::ptrdiff_t neighbor(std::size_t k, int axis, int step) const
    {
        auto ij = index(k);
        int c = ij[axis] + step;
        if (c < 0 || c >= nodes_per_axis) {
            if (mode == BoundaryMode::zero_exterior) return -1;
            c = (c + nodes_per_axis) % nodes_per_axis;
        }
        ij[axis] = c;
        return static_cast<std::ptrdiff_t>(flat(ij[0], dim == 2 ? ij[1] : 0));
    }

    friend bool operator==(const CartesianGrid&, const CartesianGrid&) = default;
};

inline CartesianGrid build_grid(int dim, double half_width, int nodes_per_axis, BoundaryMode mode)
{
    if (dim != 1 && dim != 2) throw std::invalid_argument("grid dimension must be 1 or 2");
    if (!(half_width > 0.0) || !std::isfinite(half_width))
        throw std::invalid_argument("grid half width must be positive");
    if (nodes_per_axis < 4) throw std::invalid_argument("grid needs at least 4 nodes per axis");
    if (nodes_per_axis % 2 != 0)
        throw std::invalid_argument("nodes per axis must be even (symmetric node placement)");
    return CartesianGrid{dim, half_width, nodes_per_axis, mode};
}

} // namespace frachom
