#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace frachom::testing {

/// Seeded standard-normal vector; identical across runs and platforms using mt19937_64.
inline Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(gen);
    return v;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    return (a - b).norm() / b.norm();
}

} // namespace frachom::testing
