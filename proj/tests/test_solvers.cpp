#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "fracvar/solvers.hpp"
#include "fracvar/spectral.hpp"

using namespace fracvar;

namespace {

struct Setup {
    GridPtr grid;
    GradientPtr grad;
    EigenPair eig;
};

Setup make_setup(int n, double s = 0.5) {
    const auto g = build_grid(DomainSpec::interval(0.0, 1.0, n));
    return {g, std::make_shared<const NonlocalOperator>(assemble_gradient(g, s)), first_eigenpair(assemble_laplacian(g, s))};
}

CoefficientModel paper() { return make_paper_coefficient(1.0, 2.0, 1.5); }

// Nonincreasing up to the floating-point resolution of J (the Armijo rounding allowance).
bool nonincreasing(const std::vector<double>& v) {
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (v[k] > v[k - 1] + detail::energy_slack(v[k], v[k - 1])) return false;
    }
    return true;
}

}  // namespace

TEST(ProjectCone, Examples) {
    const auto g = build_grid(DomainSpec::interval(0.0, 1.0, 4));
    const Field pos(g, Eigen::Vector4d(0.0, 1.0, 2.0, 3.0));
    EXPECT_EQ(project_cone(pos).values(), pos.values());
    const Field neg(g, Eigen::Vector4d(-1.0, 0.0, -2.0, -1e-300));
    EXPECT_TRUE(project_cone(neg).values().isZero(0.0));
    const Field mixed(g, Eigen::Vector4d(-1.0, 0.5, -2.0, 3.0));
    const Field p = project_cone(mixed);
    EXPECT_EQ(p.values(), Eigen::Vector4d(0.0, 0.5, 0.0, 3.0));
    EXPECT_EQ(project_cone(p).values(), p.values());
}

TEST(Kkt, Examples) {
    const auto g = build_grid(DomainSpec::interval(0.0, 1.0, 4));
    const Field u(g, Eigen::Vector4d(0.0, 0.5, 0.0, 1.0));
    EXPECT_EQ(kkt_residual(u, Field(g), 1e-12), 0.0);
    EXPECT_EQ(kkt_residual(Field(g), Field(g, Eigen::Vector4d(1.0, 2.0, 0.0, 3.0)), 1e-12), 0.0);
    // Free nodes count |g|, active nodes only the descent part max(0, -g).
    const Field gr(g, Eigen::Vector4d(5.0, -0.25, -0.75, 0.125));
    EXPECT_DOUBLE_EQ(kkt_residual(u, gr, 1e-12), 0.75);
}

TEST(MinimizeCone, LinearProblemMatchesDenseSolve) {
    const auto st = make_setup(128);
    const Field h = field_from_function(st.grid, [](const Point& p) { return 1.0 + std::sin(3.0 * p[0]); });
    const auto m = make_energy_model(st.grad, make_constant_coefficient(1.0), make_linear_reaction(0.0), h);
    const auto rep = minimize_cone(m, SolverOptions{}, Field(st.grid));
    ASSERT_TRUE(rep.converged) << rep.message;
    EXPECT_LE(rep.kkt, 1e-6);
    EXPECT_EQ(rep.classification, Classification::local_min);
    EXPECT_GE(rep.solution.values().minCoeff(), 0.0);
    const Eigen::VectorXd oracle = composed_laplacian_table(*st.grad).llt().solve(h.values());
    EXPECT_LE((rep.solution.values() - oracle).norm() / oracle.norm(), 1e-4);
    EXPECT_TRUE(nonincreasing(rep.energy_history));
}

TEST(MinimizeCone, PreconditionedDescentAloneConverges) {
    const auto st = make_setup(64);
    const Field h = field_from_function(st.grid, [](const Point& p) { return p[0]; });
    const auto m = make_energy_model(st.grad, paper(), make_cubic_saturating_reaction(0.5 * st.eig.lambda), h);
    SolverOptions opts;
    opts.newton = false;
    const auto rep = minimize_cone(m, opts, Field(st.grid));
    ASSERT_TRUE(rep.converged) << rep.message;
    EXPECT_LE(kkt_residual(m, rep.solution, opts.tol_active), opts.tol_g);
    EXPECT_TRUE(nonincreasing(rep.energy_history));
    opts.newton = true;
    const auto fast = minimize_cone(m, opts, Field(st.grid));
    ASSERT_TRUE(fast.converged);
    EXPECT_LT(fast.iterations, rep.iterations);
    EXPECT_NEAR(fast.energy, rep.energy, 1e-8 * std::abs(rep.energy));
}

TEST(MinimizeCone, SublinearSmallParameterIsTrivial) {
    const auto st = make_setup(64);
    const auto c = paper();
    // C_g = sup g(t)/t = 1 for the saturating family.
    const double nu = 0.01 * c.gamma_min * st.eig.lambda;
    const auto m = make_energy_model(st.grad, c, make_saturating_reaction(nu), Field(st.grid));
    const auto rep = minimize_cone(m, SolverOptions{}, 0.1 * st.eig.phi);
    ASSERT_TRUE(rep.converged) << rep.message;
    EXPECT_EQ(rep.classification, Classification::trivial);
    EXPECT_LE(l2_norm(rep.solution), trivial_threshold);
}

TEST(MinimizeCone, SublinearLargeParameterIsNontrivial) {
    const auto st = make_setup(64);
    const auto c = paper();
    const auto m = make_energy_model(st.grad, c, make_saturating_reaction(50.0 * c.gamma_max * st.eig.lambda), Field(st.grid));
    const auto rep = minimize_cone(m, SolverOptions{}, 0.1 * st.eig.phi);
    ASSERT_TRUE(rep.converged) << rep.message;
    EXPECT_EQ(rep.classification, Classification::local_min);
    EXPECT_LT(rep.energy, 0.0);
    EXPECT_GE(rep.solution.values().minCoeff(), 0.0);
    EXPECT_TRUE(nonincreasing(rep.energy_history));
}

TEST(MinimizeCone, BallRescalingRecordsBoundaryCondition) {
    const auto st = make_setup(48);
    const auto c = paper();
    const auto m = make_energy_model(st.grad, c, make_saturating_reaction(50.0 * c.gamma_max * st.eig.lambda), Field(st.grid));
    const auto free = minimize_cone(m, SolverOptions{}, 0.1 * st.eig.phi);
    SolverOptions opts;
    opts.ball_radius = 0.5 * hs_norm(*st.grad, free.solution);
    opts.max_iterations = 200;
    const auto rep = minimize_cone(m, opts, 0.1 * st.eig.phi);
    EXPECT_GT(rep.boundary.boundary_hits, 0);
    EXPECT_LE(rep.max_hs_norm, opts.ball_radius * (1.0 + 1e-12));
    // The energy still decreases outward, so the radial derivative is negative: alternative (b).
    EXPECT_EQ(rep.boundary.condition, 'b');
    EXPECT_LT(rep.boundary.radial_derivative, 0.0);
    EXPECT_EQ(free.boundary.condition, 'a');
}

TEST(MinimizeCone, RejectsNegativeStartAndBadOptions) {
    const auto st = make_setup(16);
    const auto m = make_energy_model(st.grad, paper(), make_linear_reaction(1.0), Field(st.grid));
    EXPECT_THROW(minimize_cone(m, SolverOptions{}, -1.0 * st.eig.phi), ArgumentError);
    SolverOptions bad;
    bad.path_points = 40;
    EXPECT_THROW(minimize_cone(m, bad, Field(st.grid)), ArgumentError);
    bad = SolverOptions{};
    bad.tol_g = 0.0;
    EXPECT_THROW(minimize_cone(m, bad, Field(st.grid)), ArgumentError);
}

TEST(MinimizeCone, IterationCapYieldsFailedReport) {
    const auto st = make_setup(32);
    const auto c = paper();
    const auto m = make_energy_model(st.grad, c, make_saturating_reaction(50.0 * st.eig.lambda), Field(st.grid));
    SolverOptions opts;
    opts.max_iterations = 1;
    const auto rep = minimize_cone(m, opts, 0.1 * st.eig.phi);
    EXPECT_FALSE(rep.converged);
    EXPECT_EQ(rep.classification, Classification::failed);
    EXPECT_EQ(rep.solution.size(), st.grid->size());
    EXPECT_FALSE(rep.message.empty());
}

TEST(RaySearch, FindsDropAboveResonance) {
    const auto st = make_setup(64);
    const auto m = make_energy_model(st.grad, make_constant_coefficient(1.0), make_cubic_saturating_reaction(2.0 * st.eig.lambda),
                                     Field(st.grid));
    const auto ray = ray_search(m, st.eig.phi, 1e4, 200);
    ASSERT_TRUE(ray.t_star.has_value());
    EXPECT_LT(energy(m, *ray.t_star * st.eig.phi), 0.0);
    EXPECT_EQ(ray.curve.size(), 200u);
}

TEST(RaySearch, NoDropWithoutReaction) {
    const auto st = make_setup(32);
    const auto m = make_energy_model(st.grad, paper(), make_linear_reaction(0.0), Field(st.grid));
    const auto ray = ray_search(m, st.eig.phi, 1e4, 100);
    EXPECT_FALSE(ray.t_star.has_value());
    for (std::size_t k = 1; k < ray.curve.size(); ++k) EXPECT_GT(ray.curve[k].second, ray.curve[k - 1].second);
}

TEST(RaySearch, QuadraticNearOrigin) {
    const auto st = make_setup(32);
    const auto m = make_energy_model(st.grad, paper(), make_cubic_saturating_reaction(3.0), Field(st.grid));
    const auto ray = ray_search(m, st.eig.phi, 1.0, 61);
    // Samples span t in [1e-6, 1]; fit on the first decade.
    const auto& a = ray.curve.front();
    const auto& b = ray.curve[10];
    EXPECT_NEAR(std::log(b.second / a.second) / std::log(b.first / a.first), 2.0, 1e-3);
}

TEST(RaySearch, RejectsBadDirection) {
    const auto st = make_setup(16);
    const auto m = make_energy_model(st.grad, paper(), make_linear_reaction(1.0), Field(st.grid));
    EXPECT_THROW(ray_search(m, Field(st.grid), 10.0, 10), ArgumentError);
    EXPECT_THROW(ray_search(m, -1.0 * st.eig.phi, 10.0, 10), ArgumentError);
}

TEST(MountainPass, FindsSaddleWithMorseIndexOne) {
    const auto st = make_setup(64);
    const auto m = make_energy_model(st.grad, paper(), make_cubic_saturating_reaction(2.0 * st.eig.lambda), Field(st.grid));
    const SolverOptions opts;
    const auto low = minimize_cone(m, opts, 0.1 * st.eig.phi);
    ASSERT_TRUE(low.converged);
    EXPECT_EQ(low.classification, Classification::trivial);
    const auto ray = ray_search(m, st.eig.phi, 1e4, 200, low.energy);
    ASSERT_TRUE(ray.t_star.has_value());
    const auto rep = mountain_pass(m, low.solution, *ray.t_star * st.eig.phi, opts);
    ASSERT_TRUE(rep.converged) << rep.message;
    EXPECT_EQ(rep.classification, Classification::mountain_pass);
    EXPECT_LE(rep.kkt, opts.tol_g);
    EXPECT_GT(rep.energy, 0.0);
    EXPECT_TRUE(rep.barrier_respected);
    EXPECT_GE(rep.solution.values().minCoeff(), 0.0);
    for (double c : rep.energy_history) EXPECT_GE(c, std::max(low.energy, energy(m, *ray.t_star * st.eig.phi)));

    // Morse index on the free nodes.
    const Eigen::MatrixXd hess = energy_hessian(m, rep.solution);
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < hess.rows(); ++i) {
        if (rep.solution.values()[i] > opts.tol_active) free.push_back(i);
    }
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(free.size()), static_cast<Eigen::Index>(free.size()));
    for (std::size_t r = 0; r < free.size(); ++r) {
        for (std::size_t c = 0; c < free.size(); ++c) sub(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = hess(free[r], free[c]);
    }
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (sub + sub.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
    EXPECT_EQ((ev.array() < 0.0).count(), 1);
}

TEST(MountainPass, SphereWitnessIsPositive) {
    const auto st = make_setup(48);
    const auto m = make_energy_model(st.grad, paper(), make_cubic_saturating_reaction(2.0 * st.eig.lambda), Field(st.grid));
    const auto ray = ray_search(m, st.eig.phi, 1e4, 200);
    ASSERT_TRUE(ray.t_star.has_value());
    const Field far = *ray.t_star * st.eig.phi;
    const double r = 0.1 * hs_norm(*st.grad, far);
    const auto rep = mountain_pass(m, Field(st.grid), far, SolverOptions{}, r);
    ASSERT_TRUE(rep.converged);
    ASSERT_TRUE(rep.sphere_level.has_value());
    EXPECT_GT(*rep.sphere_level, 0.0);
    EXPECT_GE(rep.level, 0.0);
}

TEST(MountainPass, GeometryViolationThrows) {
    const auto st = make_setup(32);
    const auto m = make_energy_model(st.grad, paper(), make_cubic_saturating_reaction(0.5 * st.eig.lambda), Field(st.grid));
    EXPECT_THROW(mountain_pass(m, Field(st.grid), 5.0 * st.eig.phi, SolverOptions{}), GeometryError);
    EXPECT_THROW(mountain_pass(m, -1.0 * st.eig.phi, Field(st.grid), SolverOptions{}), ArgumentError);
}

TEST(MountainPass, ResonantCaseFails) {
    // gamma = 1 and f(u) = lambda u with lambda the first eigenvalue of the energy's own operator:
    // J vanishes along phi1, so no path has a barrier; with a small h > 0 there is no critical point at all.
    const auto st = make_setup(32);
    const Eigen::MatrixXd a = composed_laplacian_table(*st.grad);
    const auto eig = first_eigenpair(a, st.grid);
    const auto coeff = make_constant_coefficient(1.0);
    const auto resonant = make_linear_reaction(eig.lambda);
    const auto flat = make_energy_model(st.grad, coeff, resonant, Field(st.grid));
    const Field far = 10.0 * eig.phi;
    EXPECT_NEAR(energy(flat, far), 0.0, 1e-10);
    if (energy(flat, far) < 0.0) {
        const auto rep = mountain_pass(flat, Field(st.grid), far, SolverOptions{});
        EXPECT_EQ(rep.classification, Classification::failed) << rep.message;
        EXPECT_FALSE(rep.barrier_respected && rep.energy > 1e-10);
    } else {
        EXPECT_THROW(mountain_pass(flat, Field(st.grid), far, SolverOptions{}), GeometryError);
    }

    const auto tilted = make_energy_model(st.grad, coeff, resonant, 0.01 * eig.phi);
    SolverOptions opts;
    opts.max_iterations = 300;
    const auto rep = mountain_pass(tilted, Field(st.grid), far, opts);
    EXPECT_FALSE(rep.converged);
    EXPECT_EQ(rep.classification, Classification::failed);
}
