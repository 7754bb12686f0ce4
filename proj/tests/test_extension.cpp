#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "frachom/extension.hpp"
#include "frachom/spectral.hpp"
#include "support.hpp"

using namespace frachom;
using frachom::testing::random_vector;
using frachom::testing::rel_err;

namespace {

constexpr double pi = std::numbers::pi;

const CartesianGrid& base256()
{
    static const auto g = build_grid(1, 4.0, 256, BoundaryMode::periodic);
    return g;
}

const SpectralDecomposition& identity_dec()
{
    static const auto dec = decompose(assemble_stiffness(base256(), constant_field(base256(), 1.0)));
    return dec;
}

/// sin(2 pi k x / 2R) and its exact eigenvalue for the periodic three-point stencil.
Eigen::VectorXd sine_mode(const CartesianGrid& g, int k)
{
    Eigen::VectorXd v(g.nodes_per_axis);
    for (int i = 0; i < g.nodes_per_axis; ++i) v[i] = std::sin(pi * k * g.coordinate(i) / g.half_width);
    return v;
}

double stencil_eigenvalue(const CartesianGrid& g, int k)
{
    const double h = g.spacing();
    const double sn = std::sin(pi * k / g.nodes_per_axis);
    return 4.0 / (h * h) * sn * sn;
}

Eigen::VectorXd band_limited(const CartesianGrid& g)
{
    return sine_mode(g, 1) + 0.5 * sine_mode(g, 3) - 0.25 * sine_mode(g, 8);
}

ExtensionSolution extend(const Eigen::VectorXd& u, double s, int m, double gamma = 2.0, double height = 8.0)
{
    const auto eg = build_extension_grid(base256(), s, m, height, gamma);
    return solve_extension(assemble_extension(eg, constant_field(base256(), 1.0)), u);
}

} // namespace

TEST(ExtensionGrid, GradedLevelsAndPositiveWeights)
{
    const auto eg = build_extension_grid(base256(), 0.3, 64, 8.0, 2.0);
    ASSERT_EQ(eg.y.size(), 65u);
    EXPECT_EQ(eg.y[0], 0.0);
    EXPECT_DOUBLE_EQ(eg.y[1], 8.0 / 4096.0);
    EXPECT_DOUBLE_EQ(eg.y[64], 8.0);
    for (std::size_t j = 0; j < eg.weight.size(); ++j) EXPECT_GT(eg.weight[j], 0.0);
    for (double k : eg.kappa) EXPECT_GT(k, 0.0);
    // Dual cells tile (0, Y): the weights integrate y^(1-2s) over the whole column.
    double total = 0.0;
    for (double w : eg.weight) total += w;
    EXPECT_NEAR(total, std::pow(8.0, 1.4) / 1.4, 1e-12 * total);
}

TEST(ExtensionGrid, RejectsBadParameters)
{
    EXPECT_THROW(build_extension_grid(base256(), 0.5, 64, 7.9), std::invalid_argument);
    EXPECT_THROW(build_extension_grid(base256(), 0.5, 64, 8.0, 0.5), std::invalid_argument);
    EXPECT_THROW(build_extension_grid(base256(), 1.0, 64, 8.0), std::invalid_argument);
    EXPECT_THROW(build_extension_grid(base256(), 0.5, 4096, 8.0, 8.0), ConfigError);
}

TEST(AssembleExtension, HalfOrderIsUnweightedLaplacian)
{
    const auto eg = build_extension_grid(base256(), 0.5, 16, 8.0, 2.0);
    for (std::size_t j = 0; j + 1 < eg.y.size(); ++j) EXPECT_NEAR(eg.kappa[j], 1.0 / (eg.y[j + 1] - eg.y[j]), 1e-9 * eg.kappa[j]);
    for (std::size_t j = 1; j + 1 < eg.y.size(); ++j)
        EXPECT_NEAR(eg.weight[j], 0.5 * (eg.y[j + 1] - eg.y[j - 1]), 1e-12);
    const auto op = assemble_extension(eg, constant_field(base256(), 1.0));
    const SparseMatrix t = op.matrix.transpose();
    EXPECT_EQ((op.matrix - t).norm(), 0.0);
    // Interior row: weighted 3-point stencil in x plus the vertical conductances.
    const auto k = static_cast<Eigen::Index>(eg.node(10, 3));
    const double h = base256().spacing();
    EXPECT_NEAR(op.matrix.coeff(k, k), 2.0 * eg.weight[3] / (h * h) + eg.kappa[2] + eg.kappa[3], 1e-9);
    EXPECT_NEAR(op.matrix.coeff(k, k + 1), -eg.weight[3] / (h * h), 1e-9);
    EXPECT_NEAR(op.matrix.coeff(k, k + 256), -eg.kappa[3], 1e-9);
}

TEST(AssembleExtension, SymmetricForOscillatingCoefficient)
{
    const auto eg = build_extension_grid(base256(), 0.3, 32, 8.0);
    const auto field = periodic_coefficient(Profile::scalar(Profile1d::sin1d(2.0)), 0.25, base256());
    const auto op = assemble_extension(eg, field);
    const SparseMatrix t = op.matrix.transpose();
    EXPECT_EQ((op.matrix - t).norm(), 0.0);
}

TEST(SolveExtension, HalfOrderModeDecaysExponentially)
{
    for (int k : {1, 2}) {
        const auto u = sine_mode(base256(), k);
        const auto sol = extend(u, 0.5, 64);
        const double root = std::sqrt(stencil_eigenvalue(base256(), k));
        for (int j = 1; j <= 64; ++j) {
            const double y = sol.grid.y[static_cast<std::size_t>(j)];
            const double expected = std::exp(-root * y);
            if (expected < 0.05) break;
            const double ratio = sol.level(j).dot(u) / u.squaredNorm();
            EXPECT_NEAR(ratio, expected, 0.02 * expected) << "k=" << k << " y=" << y;
        }
    }
}

TEST(SolveExtension, ZeroAndConstantTraces)
{
    const auto zero = extend(Eigen::VectorXd::Zero(256), 0.4, 32);
    EXPECT_EQ(zero.U.norm(), 0.0);
    EXPECT_EQ(zero.energy, 0.0);
    const auto c = extend(Eigen::VectorXd::Constant(256, 2.5), 0.4, 32);
    EXPECT_LE((c.U.array() - 2.5).abs().maxCoeff(), 1e-10);
    EXPECT_LE(c.energy, 1e-9);
    EXPECT_LE(dtn_extract(c).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveExtension, MinimisesDirichletFunctional)
{
    const auto eg = build_extension_grid(base256(), 0.6, 32, 8.0);
    const auto op = assemble_extension(eg, constant_field(base256(), 1.0));
    for (std::uint64_t seed : {1, 2, 3}) {
        const Eigen::VectorXd u = random_vector(256, seed);
        const auto sol = solve_extension(op, u);
        EXPECT_NEAR(dirichlet_functional(op, sol.U), sol.energy, 1e-12 * sol.energy);
        // Competitor: trace times the cutoff max(0, 1 - y).
        Eigen::VectorXd lifted(sol.U.size());
        for (std::size_t j = 0; j < eg.y.size(); ++j)
            lifted.segment(static_cast<Eigen::Index>(j) * 256, 256) = std::max(0.0, 1.0 - eg.y[j]) * u;
        EXPECT_LE(sol.energy, dirichlet_functional(op, lifted));
        // Any perturbation off the trace level raises the functional.
        Eigen::VectorXd bumped = sol.U;
        bumped.tail(bumped.size() - 256) += 1e-3 * random_vector(bumped.size() - 256, seed + 10);
        EXPECT_GT(dirichlet_functional(op, bumped), sol.energy);
    }
}

TEST(DtnConstant, MatchesGammaIdentities)
{
    EXPECT_NEAR(dtn_constant(0.5), -1.0, 1e-15);
    // Reflection form: -2^(2s-1) Gamma(s) / Gamma(1-s).
    for (double s : {0.1, 0.3, 0.7, 0.9})
        EXPECT_NEAR(dtn_constant(s), -std::pow(2.0, 2.0 * s - 1.0) * std::tgamma(s) / std::tgamma(1.0 - s),
                    1e-13 * std::abs(dtn_constant(s)));
}

TEST(DtnExtract, EigenvectorTraceMatchesSpectralPower)
{
    for (double s : {0.3, 0.5, 0.7}) {
        for (int k : {1, 4}) {
            const auto u = sine_mode(base256(), k);
            const Eigen::VectorXd ref = fractional_apply(identity_dec(), s, u);
            double previous = 1.0;
            for (int m : {32, 64, 128}) {
                const double err = rel_err(dtn_extract(extend(u, s, m)), ref);
                if (m == 64) EXPECT_LE(err, 0.05) << "s=" << s << " k=" << k;
                EXPECT_LT(err, previous) << "s=" << s << " k=" << k << " M=" << m;
                previous = err;
            }
        }
    }
}

TEST(DtnExtract, BandLimitedTraceAndExtractorAgreement)
{
    const auto u = band_limited(base256());
    for (double s : {0.3, 0.5, 0.7}) {
        const Eigen::VectorXd ref = fractional_apply(identity_dec(), s, u);
        const auto coarse = extend(u, s, 64);
        const auto fine = extend(u, s, 128);
        const double q64 = rel_err(dtn_extract(coarse), ref);
        const double q128 = rel_err(dtn_extract(fine), ref);
        EXPECT_LE(q64, 0.05) << "s=" << s;
        EXPECT_LT(q128, q64) << "s=" << s;
        EXPECT_LE(rel_err(dtn_extract_flux(fine), ref), rel_err(dtn_extract_flux(coarse), ref));
        // Extractors agree within twice the larger refinement gap.
        const double gap = std::max((dtn_extract(fine) - dtn_extract(coarse)).norm(),
                                    (dtn_extract_flux(fine) - dtn_extract_flux(coarse)).norm());
        EXPECT_LE((dtn_extract(fine) - dtn_extract_flux(fine)).norm(), 2.0 * gap) << "s=" << s;
    }
}

TEST(DtnExtract, HeightRefinementImproves)
{
    const auto u = sine_mode(base256(), 1);
    const Eigen::VectorXd ref = fractional_apply(identity_dec(), 0.3, u);
    const double short_col = rel_err(dtn_extract_flux(extend(u, 0.3, 64, 2.0, 8.0)), ref);
    const double tall_col = rel_err(dtn_extract_flux(extend(u, 0.3, 96, 2.0, 16.0)), ref);
    EXPECT_LT(tall_col, short_col);
}

TEST(DtnExtract, RejectsCoarseColumns)
{
    const auto sol = extend(sine_mode(base256(), 1), 0.5, 3);
    EXPECT_THROW(dtn_extract(sol), std::invalid_argument);
    EXPECT_THROW(dtn_raw_flux(sol), std::invalid_argument);
}

TEST(WeakNeumann, DiscreteGreenIdentity)
{
    for (double s : {0.3, 0.5, 0.7}) {
        const auto eg = build_extension_grid(base256(), s, 64, 8.0);
        const auto op = assemble_extension(eg, constant_field(base256(), 1.0));
        const auto sol = solve_extension(op, band_limited(base256()));
        Eigen::VectorXd phi(sol.U.size());
        for (std::size_t j = 0; j < eg.y.size(); ++j)
            for (int i = 0; i < 256; ++i)
                phi[static_cast<Eigen::Index>(eg.node(static_cast<std::size_t>(i), static_cast<int>(j)))] =
                    std::sin(pi * base256().coordinate(i) / 4.0) * std::exp(-eg.y[j]);
        const double h = base256().spacing();
        const double bulk = h * phi.dot(op.matrix * sol.U);
        // Outward normal at y = 0 is -e_y.
        const double boundary = -h * dtn_raw_flux(sol).dot(phi.head(256));
        EXPECT_NEAR(boundary, bulk, 0.01 * std::abs(bulk)) << "s=" << s;
        EXPECT_NEAR(-h * dtn_raw_flux(sol).dot(sol.trace()), sol.energy, 1e-9 * sol.energy);
    }
}

TEST(ExtensionEnergy, MatchesSpectralEnergy)
{
    for (double s : {0.3, 0.5, 0.7}) {
        for (const Eigen::VectorXd& u : {sine_mode(base256(), 2), band_limited(base256())}) {
            const auto sol = extend(u, s, 64);
            const double spectral = std::pow(energy_norm(identity_dec(), s, u), 2);
            EXPECT_NEAR(-dtn_constant(s) * extension_energy(sol), spectral, 0.05 * spectral) << "s=" << s;
        }
    }
    const auto u = sine_mode(base256(), 3);
    const double lambda = stencil_eigenvalue(base256(), 3);
    const double l2sq = base256().cell_volume() * u.squaredNorm();
    EXPECT_NEAR(extension_energy(extend(u, 0.5, 64)) / (std::sqrt(lambda) * l2sq), 1.0, 0.05);
}

TEST(TraceContinuity, RatioStableAcrossRandomTraces)
{
    const auto eg = build_extension_grid(base256(), 0.4, 64, 8.0);
    const auto op = assemble_extension(eg, constant_field(base256(), 1.0));
    std::vector<double> ratios;
    for (std::uint64_t seed = 20; seed < 28; ++seed) {
        const Eigen::VectorXd u = random_vector(256, seed);
        const auto sol = solve_extension(op, u);
        const double hs = std::sqrt(base256().cell_volume() * u.squaredNorm() +
                                    std::pow(energy_norm(identity_dec(), 0.4, u), 2));
        ratios.push_back(hs / weighted_h1_norm(sol));
    }
    double mean = 0.0;
    for (double r : ratios) mean += r / static_cast<double>(ratios.size());
    for (double r : ratios) EXPECT_NEAR(r, mean, 0.2 * mean);
}

TEST(PoissonKernel, HalfOrderIsHalfPlaneKernel)
{
    for (double y : {0.05, 0.5, 1.0, 3.0})
        for (double d : {0.0, 0.1, 0.7, 2.0, 10.0}) {
            const double expected = y / (pi * (y * y + d * d));
            EXPECT_NEAR(poisson_kernel(y, d, 0.5), expected, 1e-6 * expected) << "y=" << y << " d=" << d;
        }
}

TEST(PoissonKernel, GeneralOrderMatchesAlgebraicForm)
{
    for (double s : {0.2, 0.35, 0.8})
        for (double y : {0.1, 1.0})
            for (double d : {0.0, 0.3, 4.0}) {
                const double expected = std::tgamma(s + 0.5) / (std::sqrt(pi) * std::tgamma(s)) * std::pow(y, 2 * s) /
                                        std::pow(y * y + d * d, s + 0.5);
                EXPECT_NEAR(poisson_kernel(y, d, s), expected, 1e-8 * expected);
                EXPECT_NEAR(poisson_kernel_closed_form(y, d, s), expected, 1e-12 * expected);
            }
}

TEST(PoissonKernel, UnitMass)
{
    boost::math::quadrature::tanh_sinh<double> integrator;
    for (double s : {0.3, 0.5, 0.7})
        for (double y : {0.2, 1.0}) {
            // d = y tan(theta) maps the line onto (-pi/2, pi/2); the endpoint singularity is integrable.
            auto f = [&](double th) {
                const double c = std::cos(th);
                return poisson_kernel(y, y * std::tan(th), s) * y / (c * c);
            };
            const double mass = 2.0 * integrator.integrate(f, 0.0, pi / 2, 1e-11);
            EXPECT_NEAR(mass, 1.0, 1e-6) << "s=" << s << " y=" << y;
        }
}

TEST(PoissonExtend, ConstantsAreReproduced)
{
    for (double s : {0.3, 0.5, 0.7})
        for (double y : {0.01, 1.0, 5.0}) {
            const auto U = poisson_extend(Eigen::VectorXd::Constant(256, 1.0), s, y, base256());
            EXPECT_LE((U.array() - 1.0).abs().maxCoeff(), 1e-6) << "s=" << s << " y=" << y;
        }
}

TEST(PoissonExtend, AgreesWithExtensionSolve)
{
    const auto u = band_limited(base256());
    for (double s : {0.3, 0.5, 0.7}) {
        const auto sol = extend(u, s, 64);
        int j = 1;
        while (sol.grid.y[static_cast<std::size_t>(j + 1)] <= 1.0) ++j;
        const double y = sol.grid.y[static_cast<std::size_t>(j)];
        EXPECT_LE(rel_err(poisson_extend(u, s, y, base256()), sol.level(j)), 0.02) << "s=" << s;
    }
}

TEST(PoissonExtend, RejectsTwoDimensionalGrids)
{
    const auto g = build_grid(2, 1.0, 8, BoundaryMode::periodic);
    EXPECT_THROW(poisson_extend(Eigen::VectorXd::Ones(64), 0.5, 1.0, g), std::invalid_argument);
}

TEST(ExtensionSmoke, TwoDimensionalBase)
{
    const auto g = build_grid(2, 2.0, 32, BoundaryMode::periodic);
    const auto eg = build_extension_grid(g, 0.5, 32, 4.0);
    const auto op = assemble_extension(eg, constant_field(g, 1.0));
    Eigen::VectorXd u(static_cast<Eigen::Index>(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) {
        const auto p = g.point(k);
        u[static_cast<Eigen::Index>(k)] = std::cos(pi * p[0] / 2.0) * std::sin(pi * p[1] / 2.0);
    }
    const auto sol = solve_extension(op, u);
    EXPECT_GT(sol.energy, 0.0);
    const auto dec = decompose(assemble_stiffness(g, constant_field(g, 1.0)));
    EXPECT_LE(rel_err(dtn_extract(sol), fractional_apply(dec, 0.5, u)), 0.05);
}

TEST(ExtensionExport, SliceCsvAndJson)
{
    const auto sol = extend(sine_mode(base256(), 1), 0.5, 8);
    const auto csv = extension_slice_csv(sol, 2);
    EXPECT_EQ(csv.substr(0, 6), "x,y,U\n");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 257);
    const auto j = to_json(sol);
    EXPECT_EQ(j["M"], 8);
    EXPECT_EQ(j["dtn"].size(), 256u);
    EXPECT_EQ(j["dtn_raw"].size(), 256u);
    EXPECT_DOUBLE_EQ(j["dtn"][5].get<double>(), -j["dtn_raw"][5].get<double>());
}
