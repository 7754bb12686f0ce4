#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "frachom/dirichlet.hpp"
#include "support.hpp"

using namespace frachom;
using frachom::testing::random_vector;
using frachom::testing::rel_err;

namespace {

/// Exact solution of (-Delta)^s u = 1 on (-1, 1) with zero exterior data.
double torsion(double x, double s)
{
    if (std::abs(x) >= 1.0) return 0.0;
    const double c = std::tgamma(0.5) / (std::pow(4.0, s) * std::tgamma(1.0 + s) * std::tgamma(0.5 + s));
    return c * std::pow(1.0 - x * x, s);
}

Eigen::VectorXd sample(const CartesianGrid& g, double s)
{
    Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) v[static_cast<Eigen::Index>(k)] = torsion(g.point(k)[0], s);
    return v;
}

struct Setup {
    CartesianGrid grid;
    DomainMask mask;
    NonlocalForm form;
};

Setup spectral_setup(int n, double s, BoundaryMode mode = BoundaryMode::zero_exterior)
{
    const auto g = build_grid(1, 4.0, n, mode);
    return {g, mask_domain(g, Region{}), laplacian_form(g, s)};
}

Setup kernel_setup(int n, double s, BoundaryMode mode = BoundaryMode::zero_exterior)
{
    const auto g = build_grid(1, 4.0, n, mode);
    return {g, mask_domain(g, Region{}), kernel_form(assemble_fraclap_form(g, s))};
}

Eigen::VectorXd ones(const Setup& st) { return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(st.grid.size())); }
Eigen::VectorXd zeros(const Setup& st) { return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(st.grid.size())); }

} // namespace

TEST(SolveNonlocal, ZeroDataGivesZero)
{
    for (const auto& st : {spectral_setup(64, 0.5), kernel_setup(64, 0.5)}) {
        const auto rep = solve_nonlocal(st.form, st.mask, zeros(st), zeros(st));
        EXPECT_EQ(rep.u.norm(), 0.0);
        EXPECT_EQ(stability_check(rep, st.form, zeros(st)), 0.0);
        EXPECT_EQ(flux_check(rep, st.form, zeros(st)), 0.0);
    }
}

TEST(SolveNonlocal, ConstantsSolveOnPeriodicGrids)
{
    for (const auto& st : {spectral_setup(64, 0.4, BoundaryMode::periodic), kernel_setup(64, 0.4, BoundaryMode::periodic)}) {
        const Eigen::VectorXd g = 1.7 * ones(st);
        const auto rep = solve_nonlocal(st.form, st.mask, zeros(st), g);
        EXPECT_LE((rep.u - g).cwiseAbs().maxCoeff(), 1e-9);
        const double ratio = stability_check(rep, st.form, g);
        EXPECT_GT(ratio, 0.0);
        EXPECT_LE(ratio, 1.0 + 1e-8);
    }
}

TEST(SolveNonlocal, PinnedValuesAreExact)
{
    const auto st = kernel_setup(128, 0.3);
    const Eigen::VectorXd g = random_vector(128, 7);
    const auto rep = solve_nonlocal(st.form, st.mask, ones(st), g);
    for (auto k : st.mask.pinned_indices()) EXPECT_EQ(rep.u[static_cast<Eigen::Index>(k)], g[static_cast<Eigen::Index>(k)]);
}

TEST(SolveNonlocal, GalerkinOrthogonality)
{
    for (const auto& st : {spectral_setup(256, 0.6), kernel_setup(256, 0.6)}) {
        const Eigen::VectorXd f = random_vector(256, 8);
        const Eigen::VectorXd g = random_vector(256, 9);
        const auto rep = solve_nonlocal(st.form, st.mask, f, g);
        const Eigen::VectorXd bu = *st.form.matrix * rep.u;
        const double h = st.grid.spacing();
        const double scale = h * f.norm() + st.form.norm * g.norm();
        for (auto k : st.mask.interior_indices())
            EXPECT_NEAR(bu[static_cast<Eigen::Index>(k)], h * f[static_cast<Eigen::Index>(k)], 1e-8 * scale);
        EXPECT_LE(rep.residual, 1e-8);
    }
}

TEST(SolveNonlocal, KernelRouteMatchesExactTorsion)
{
    for (double s : {0.3, 0.5, 0.7}) {
        const auto st = kernel_setup(512, s);
        const auto rep = solve_nonlocal(st.form, st.mask, ones(st), zeros(st));
        EXPECT_LE(rel_err(rep.u, sample(st.grid, s)), 0.01) << "s=" << s;
    }
    const auto st = kernel_setup(512, 0.5);
    const auto rep = solve_nonlocal(st.form, st.mask, ones(st), zeros(st));
    for (auto k : st.mask.interior_indices()) {
        const double x = st.grid.point(k)[0];
        EXPECT_NEAR(rep.u[static_cast<Eigen::Index>(k)], std::sqrt(1.0 - x * x), 0.02);
    }
}

TEST(SolveNonlocal, RoutesAgree)
{
    const auto fine = kernel_setup(2048, 0.5);
    const auto reference = solve_nonlocal(fine.form, fine.mask, ones(fine), zeros(fine));
    for (auto [n, tol] : {std::pair{512, 0.03}, std::pair{1024, 0.015}}) {
        const auto sp = spectral_setup(n, 0.5);
        const auto kr = kernel_setup(n, 0.5);
        const auto us = solve_nonlocal(sp.form, sp.mask, ones(sp), zeros(sp)).u;
        const auto uk = solve_nonlocal(kr.form, kr.mask, ones(kr), zeros(kr)).u;
        EXPECT_LE(rel_err(us, uk), tol) << "N=" << n;
        // Fine-grid kernel solution restricted to the coarse nodes.
        Eigen::VectorXd ref(n);
        const int stride = 2048 / n;
        for (int i = 0; i < n; ++i) ref[i] = reference.u[stride * i];
        EXPECT_LE(rel_err(uk, ref), 0.5 * tol) << "N=" << n;
    }
}

TEST(SolveNonlocal, NonNegativeForNonNegativeLoad)
{
    for (const auto& st : {spectral_setup(256, 0.3), kernel_setup(256, 0.3), spectral_setup(256, 0.8),
                           kernel_setup(256, 0.8)}) {
        Eigen::VectorXd f = random_vector(256, 12).cwiseAbs();
        const auto rep = solve_nonlocal(st.form, st.mask, f, zeros(st));
        EXPECT_GE(rep.u.minCoeff(), -1e-10);
    }
}

TEST(SolveNonlocal, RejectsEmptyInteriorAndMismatch)
{
    const auto g = build_grid(1, 4.0, 8, BoundaryMode::zero_exterior);
    const auto form = laplacian_form(g, 0.5);
    Region tiny{{0.2, 0.2}, {0.8, 0.8}};
    EXPECT_THROW(solve_nonlocal(form, mask_domain(g, tiny), Eigen::VectorXd::Ones(8), Eigen::VectorXd::Zero(8)),
                 std::invalid_argument);
    const auto g2 = build_grid(1, 4.0, 16, BoundaryMode::zero_exterior);
    EXPECT_THROW(solve_nonlocal(form, mask_domain(g2, Region{}), Eigen::VectorXd::Ones(8), Eigen::VectorXd::Zero(8)),
                 std::invalid_argument);
}

TEST(FluxCheck, FluxNormIsEnergyNorm)
{
    const auto st = spectral_setup(128, 0.45);
    const auto rep = solve_nonlocal(st.form, st.mask, ones(st), zeros(st));
    EXPECT_NEAR(rep.flux, energy_norm(*st.form.decomposition, 0.45, rep.u), 1e-10 * rep.flux);
    EXPECT_NEAR(rep.flux, flux_vector(st.form, rep.u).norm() * std::sqrt(st.grid.spacing()), 1e-10 * rep.flux);
    // For g = 0 the energy identity gives ||L^(s/2) u|| = ||f||_*.
    EXPECT_NEAR(flux_check(rep, st.form, zeros(st)), 1.0, 1e-8);
}

TEST(StabilityCheck, BoundedOverCoefficientSweep)
{
    const auto g = build_grid(1, 4.0, 512, BoundaryMode::zero_exterior);
    const auto mask = mask_domain(g, Region{});
    auto identity = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(g, constant_field(g, 1.0))));
    std::vector<double> ratios;
    for (double eps : {0.25, 0.125, 0.0625, 1.0 / 32}) {
        const auto field = periodic_coefficient(Profile::scalar(Profile1d::sin1d(2.0)), eps, g);
        auto dec = std::make_shared<const SpectralDecomposition>(decompose(assemble_stiffness(g, field)));
        const auto form = spectral_form(dec, 0.5, identity);
        const Eigen::VectorXd f = Eigen::VectorXd::Ones(512);
        const auto rep = solve_nonlocal(form, mask, f, Eigen::VectorXd::Zero(512));
        ratios.push_back(stability_check(rep, form, Eigen::VectorXd::Zero(512)));
        EXPECT_TRUE(std::isfinite(ratios.back()));
        EXPECT_GT(ratios.back(), 0.0);
    }
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    EXPECT_LE(*hi / *lo, 3.0);
}

TEST(HsNorm, ZeroConstantAndSineModes)
{
    const auto g = build_grid(1, 4.0, 512, BoundaryMode::periodic);
    EXPECT_EQ(hs_norm(Eigen::VectorXd::Zero(512), g, 0.5), 0.0);
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(512, 2.0);
    EXPECT_NEAR(hs_norm(c, g, 0.5), std::sqrt(g.spacing()) * c.norm(), 1e-10);
    const auto form = laplacian_form(g, 0.4);
    for (int k : {1, 4, 10}) {
        Eigen::VectorXd v(512);
        for (int i = 0; i < 512; ++i) v[i] = std::sin(std::numbers::pi * k * g.coordinate(i) / 4.0);
        const double l2 = std::sqrt(g.spacing()) * v.norm();
        const double full = hs_norm(v, form);
        const double semi = std::sqrt(full * full - l2 * l2);
        const double symbol = std::pow(std::numbers::pi * k / 4.0, 0.4);
        EXPECT_NEAR(semi, symbol * l2, 0.02 * symbol * l2) << "k=" << k;
        EXPECT_GE(full, l2);
        EXPECT_NEAR(full, hs_norm(v, g, 0.4), 1e-10 * full);
    }
}

TEST(SpectralDirichlet, DiffersFromRestrictedOperator)
{
    const auto g = build_grid(1, 4.0, 256, BoundaryMode::zero_exterior);
    const auto mask = mask_domain(g, Region{});
    const auto op = assemble_stiffness(g, constant_field(g, 1.0));
    const Eigen::VectorXd f = Eigen::VectorXd::Ones(256);
    const auto sd = solve_spectral_dirichlet(op, mask, 0.5, f, Eigen::VectorXd::Zero(256));
    const auto rf = solve_nonlocal(laplacian_form(g, 0.5), mask, f, Eigen::VectorXd::Zero(256));
    EXPECT_LE(sd.residual, 1e-10);
    EXPECT_GT(rel_err(sd.u, rf.u), 0.05);
    EXPECT_THROW(solve_spectral_dirichlet(op, mask, 0.5, f, Eigen::VectorXd::Ones(256)), std::invalid_argument);
}

TEST(SolveReport, JsonShape)
{
    const auto st = spectral_setup(32, 0.5);
    const auto rep = solve_nonlocal(st.form, st.mask, ones(st), zeros(st));
    const auto j = to_json(rep);
    EXPECT_EQ(j["route"], "spectral");
    EXPECT_EQ(j["N"], 32);
    EXPECT_EQ(j["u"].size(), 32u);
    EXPECT_TRUE(j["norms"].contains("residual"));
    EXPECT_TRUE(j["norms"].contains("flux"));
}
