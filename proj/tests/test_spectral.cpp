#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "fracvar/spectral.hpp"

using namespace fracvar;

namespace {

NonlocalOperator interval_laplacian(double a, double b, int n, double s) {
    return assemble_laplacian(build_grid(DomainSpec::interval(a, b, n)), s);
}

}  // namespace

TEST(Eigenpair, MatchesDenseEigensolveAndReferenceValue) {
    const auto lap = interval_laplacian(-1.0, 1.0, 256, 0.5);
    const auto eig = first_eigenpair(lap);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap.table(), Eigen::EigenvaluesOnly);
    EXPECT_NEAR(eig.lambda, es.eigenvalues()(0), 1e-10 * eig.lambda);
    // Reference value for the half-Laplacian on (-1,1): 1.1577738.
    EXPECT_NEAR(eig.lambda / 1.1577738, 1.0, 0.02);
    EXPECT_LE(eig.residual, 1e-10);
}

TEST(Eigenpair, NearlyLocalOrderApproachesClassicalValue) {
    const auto eig = first_eigenpair(interval_laplacian(0.0, 1.0, 512, 0.99));
    EXPECT_NEAR(eig.lambda / (std::numbers::pi * std::numbers::pi), 1.0, 0.05);
}

TEST(Eigenpair, ScalesWithDomainLength) {
    // Dilating Omega by L multiplies the eigenvalue by L^{-2s}; the grid is dilated with it.
    for (double s : {0.3, 0.7}) {
        const double l1 = first_eigenpair(interval_laplacian(0.0, 1.0, 64, s)).lambda;
        const double l3 = first_eigenpair(interval_laplacian(0.0, 3.0, 64, s)).lambda;
        EXPECT_NEAR(l3 / l1, std::pow(3.0, -2.0 * s), 1e-9) << "s=" << s;
        EXPECT_GT(l1, first_eigenpair(interval_laplacian(0.0, 2.0, 128, s)).lambda);
    }
}

TEST(Eigenpair, NormalisedNonNegativeAndRayleighExact) {
    for (const auto& lap : {interval_laplacian(0.0, 1.0, 96, 0.4),
                            assemble_laplacian(build_grid(DomainSpec::rectangle({0.0, 0.0}, {1.0, 1.0}, {12, 12})), 0.6)}) {
        const auto eig = first_eigenpair(lap);
        EXPECT_NEAR(l2_norm(eig.phi), 1.0, 1e-12);
        EXPECT_GE(eig.phi.values().minCoeff(), 0.0);
        EXPECT_NEAR(rayleigh_quotient(lap, eig.phi), eig.lambda, 1e-10 * eig.lambda);
        EXPECT_GT(eig.lambda, 0.0);
    }
}

TEST(Eigenpair, PerronPropertyBeforeClamping) {
    const auto lap = interval_laplacian(0.0, 1.0, 128, 0.5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap.table());
    Eigen::VectorXd v = es.eigenvectors().col(0);
    if (v.sum() < 0.0) v = -v;
    EXPECT_GE(v.minCoeff(), -1e-12 * v.cwiseAbs().maxCoeff());
}

TEST(Eigenpair, FieldCallbackRoundTrip) {
    const auto lap = interval_laplacian(0.0, 1.0, 64, 0.5);
    const auto eig = first_eigenpair(lap);
    const Grid& g = lap.grid();
    const Field sampled = field_from_function(lap.grid_ptr(), [&](const Point& p) { return eig.phi[g.locate(p)]; });
    EXPECT_EQ((sampled.values() - eig.phi.values()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Eigenpair, RejectsIndefiniteTableAndBadOptions) {
    const auto g = build_grid(DomainSpec::interval(0.0, 1.0, 8));
    Eigen::MatrixXd t = Eigen::MatrixXd::Identity(8, 8);
    t(3, 3) = -1.0;
    EXPECT_THROW(first_eigenpair(t, g), ConvergenceError);
    EXPECT_THROW(first_eigenpair(Eigen::MatrixXd::Identity(7, 7), g), ArgumentError);
    EXPECT_THROW(first_eigenpair(interval_laplacian(0.0, 1.0, 8, 0.5), EigenOptions{0.0, 10}), ArgumentError);
    EXPECT_THROW(first_eigenpair(assemble_gradient(g, 0.5)), ArgumentError);
    // An iteration cap of 1 cannot reach 1e-14 from the constant start.
    EXPECT_THROW(first_eigenpair(interval_laplacian(0.0, 1.0, 32, 0.5), EigenOptions{1e-14, 1}), ConvergenceError);
}

TEST(Rayleigh, BoundedBelowByFirstEigenvalue) {
    const auto lap = interval_laplacian(0.0, 1.0, 64, 0.5);
    const auto eig = first_eigenpair(lap);
    std::mt19937 rng(99);
    std::normal_distribution<double> n01;
    for (int k = 0; k < 50; ++k) {
        Field u(lap.grid_ptr());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = n01(rng);
        EXPECT_GE(rayleigh_quotient(lap, u), eig.lambda - 1e-8);
    }
    EXPECT_THROW(rayleigh_quotient(lap, Field(lap.grid_ptr())), ArgumentError);
}

TEST(Rayleigh, PerturbationLiesBetweenFirstTwoEigenvalues) {
    const auto lap = interval_laplacian(0.0, 1.0, 64, 0.5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap.table());
    const Field u(lap.grid_ptr(), es.eigenvectors().col(0) + 0.1 * es.eigenvectors().col(1));
    const double q = rayleigh_quotient(lap, u);
    EXPECT_GT(q, es.eigenvalues()(0));
    EXPECT_LT(q, es.eigenvalues()(1));
}

TEST(Eigenpair, CsvExport) {
    const auto eig = first_eigenpair(interval_laplacian(0.0, 1.0, 8, 0.5));
    const auto path = (std::filesystem::temp_directory_path() / "fracvar_test_eig.csv").string();
    write_eigenpair_csv(path, eig);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line.rfind("# lambda1=", 0), 0u);
    EXPECT_NEAR(std::stod(line.substr(10)), eig.lambda, 1e-15 * eig.lambda);
    std::getline(is, line);
    EXPECT_EQ(line, "x,value");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 8);
    std::filesystem::remove(path);
}
