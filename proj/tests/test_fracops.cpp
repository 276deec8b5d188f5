#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "fracvar/fracops.hpp"

using namespace fracvar;

namespace {

using GK = boost::math::quadrature::gauss_kronrod<double, 61>;

// int_0^40 f; tanh-sinh absorbs the algebraic endpoint behaviour at 0.
double fourier_integral(const std::function<double(double)>& f) {
    boost::math::quadrature::tanh_sinh<double> ts;
    double acc = ts.integrate(f, 0.0, 1.0);
    for (int k = 1; k < 40; ++k) acc += GK::integrate(f, k, k + 1.0, 5);
    return acc;
}

// grad^s of exp(-x^2/2) via its Fourier symbol i xi |xi|^{s-1}.
double gaussian_gradient(double s, double x) {
    return -std::sqrt(2.0 / std::numbers::pi) *
           fourier_integral([&](double xi) { return std::pow(xi, s) * std::sin(xi * x) * std::exp(-0.5 * xi * xi); });
}

// (-Delta)^s of exp(-x^2/2) via its Fourier symbol |xi|^{2s}.
double gaussian_laplacian(double s, double x) {
    return std::sqrt(2.0 / std::numbers::pi) *
           fourier_integral([&](double xi) { return std::pow(xi, 2.0 * s) * std::cos(xi * x) * std::exp(-0.5 * xi * xi); });
}

// grad^s of exp(-x^2/2) straight from the singular integral, pairing y = x + r with y = x - r.
// r = t^q with q = 1/(1-s) removes the r^{-s} endpoint singularity.
double gaussian_gradient_direct(double s, double x) {
    const double mu = normalizing_constants(1, s).mu;
    const double q = 1.0 / (1.0 - s);
    const double ux = std::exp(-0.5 * x * x);
    auto u = [](double y) { return std::exp(-0.5 * y * y); };
    auto integrand = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double r = std::pow(t, q);
        const double odd = r < 1e-3 ? ux * (-2.0 * x * r + (3.0 * x - x * x * x) * r * r * r / 3.0) : u(x + r) - u(x - r);
        return odd * q * std::pow(t, -1.0 - q * s);
    };
    const double top = std::pow(40.0, 1.0 - s);
    double acc = 0.0;
    for (int k = 0; k < 200; ++k) acc += GK::integrate(integrand, top * k / 200.0, top * (k + 1) / 200.0, 5);
    return mu * acc;
}

GridPtr unit_interval(int n) { return build_grid(DomainSpec::interval(0.0, 1.0, n)); }

Field gaussian(const GridPtr& g, double c, double sigma) {
    return field_from_function(g, [=](const Point& p) { return std::exp(-0.5 * std::pow((p[0] - c) / sigma, 2)); });
}

}  // namespace

TEST(Constants, HalfOrderLaplacianIsOneOverPi) {
    EXPECT_NEAR(normalizing_constants(1, 0.5).C, 1.0 / std::numbers::pi, 1e-15);
}

TEST(Constants, MatchAlternativeGammaForm) {
    for (int d : {1, 2}) {
        for (double s : {0.1, 0.3, 0.5, 0.75, 0.99}) {
            const double alt = s * std::tgamma(0.5 * d + s) * std::pow(4.0, s) /
                               (std::pow(std::numbers::pi, 0.5 * d) * std::tgamma(1.0 - s));
            EXPECT_NEAR(normalizing_constants(d, s).C / alt, 1.0, 1e-13) << "d=" << d << " s=" << s;
        }
    }
}

TEST(Constants, GradientConstantMatchesFourierSymbol) {
    // The singular integral with mu must reproduce the Fourier multiplier.
    for (double s : {0.25, 0.5, 0.8}) {
        for (double x : {0.3, 1.0, 2.2}) {
            const double ref = gaussian_gradient(s, x);
            EXPECT_NEAR(gaussian_gradient_direct(s, x), ref, 1e-10) << "s=" << s << " x=" << x;
        }
    }
}

TEST(Constants, RejectOutOfRangeOrder) {
    for (double s : {0.0, 1.0, -0.2, 1.5, std::nan("")}) EXPECT_THROW(normalizing_constants(1, s), ArgumentError);
    EXPECT_THROW(normalizing_constants(3, 0.5), ArgumentError);
    EXPECT_THROW(assemble_gradient(unit_interval(16), 1.0), ArgumentError);
    EXPECT_THROW(assemble_laplacian(unit_interval(16), 0.0), ArgumentError);
}

TEST(Gradient, MatchesFourierOracleOnGaussian) {
    const double s = 0.5, c = 0.5, sigma = 0.05;
    const auto g = unit_interval(512);
    const auto grad = assemble_gradient(g, s);
    const VectorField v = apply_gradient(grad, gaussian(g, c, sigma));
    double err = 0.0, ref_max = 0.0;
    for (std::size_t e = 0; e < v.size(); ++e) {
        const double x = grad.lattice().point(e)[0];
        const double ref = std::pow(sigma, -s) * gaussian_gradient(s, (x - c) / sigma);
        err = std::max(err, std::abs(v.values()(static_cast<Eigen::Index>(e), 0) - ref));
        ref_max = std::max(ref_max, std::abs(ref));
    }
    EXPECT_LT(err / ref_max, 5e-4);
}

TEST(Gradient, IsOddUnderReflection) {
    const auto g = unit_interval(64);
    const auto grad = assemble_gradient(g, 0.4);
    const Field u = field_from_function(g, [](const Point& p) { return p[0] * (1.0 - p[0]); });
    const VectorField v = apply_gradient(grad, u);
    const auto m = static_cast<Eigen::Index>(v.size());
    for (Eigen::Index e = 0; e < m; ++e) EXPECT_NEAR(v.values()(e, 0), -v.values()(m - 1 - e, 0), 1e-12);
}

TEST(Gradient, DualityIsExact) {
    for (int d : {1, 2}) {
        const auto g = d == 1 ? unit_interval(48) : build_grid(DomainSpec::rectangle({0.0, 0.0}, {1.0, 1.0}, {10, 10}));
        const auto grad = assemble_gradient(g, 0.6);
        std::mt19937 rng(7);
        std::normal_distribution<double> n01;
        Field u(g);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = n01(rng);
        VectorField phi(grad.lattice_ptr());
        for (Eigen::Index i = 0; i < phi.values().size(); ++i) phi.values().data()[i] = n01(rng);
        const double lhs = l2_inner(u, apply_divergence(grad, phi));
        const double rhs = -l2_inner(phi, apply_gradient(grad, u));
        EXPECT_NEAR(lhs, rhs, 1e-12 * (std::abs(lhs) + 1.0)) << "d=" << d;
    }
}

static double laplacian_error(double s, int n) {
    const double c = 0.5, sigma = 0.05;
    const auto g = unit_interval(n);
    const Field w = apply_laplacian(assemble_laplacian(g, s), gaussian(g, c, sigma));
    double err = 0.0, ref_max = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double ref = std::pow(sigma, -2.0 * s) * gaussian_laplacian(s, (g->node(i)[0] - c) / sigma);
        err = std::max(err, std::abs(w[i] - ref));
        ref_max = std::max(ref_max, std::abs(ref));
    }
    return err / ref_max;
}

TEST(Laplacian, MatchesFourierOracleOnGaussian) {
    // Piecewise-linear far field with an excluded near box: first-order-in-h^{2-2s} accuracy.
    const std::vector<std::pair<double, double>> bound{{0.3, 2e-3}, {0.5, 8e-3}, {0.8, 4e-2}};
    for (const auto& [s, tol] : bound) {
        const double coarse = laplacian_error(s, 256);
        const double fine = laplacian_error(s, 512);
        EXPECT_LT(fine, tol) << "s=" << s;
        EXPECT_GT(std::log2(coarse / fine), 2.0 - 2.0 * s - 0.15) << "s=" << s;
    }
}

TEST(Laplacian, FourierOracleClosedFormAtCentre) {
    // (-Delta)^s exp(-x^2/2) at 0 equals 2^s Gamma(s + 1/2) / sqrt(pi).
    for (double s : {0.2, 0.5, 0.9}) {
        EXPECT_NEAR(gaussian_laplacian(s, 0.0), std::pow(2.0, s) * std::tgamma(s + 0.5) / std::sqrt(std::numbers::pi), 1e-10);
    }
}

TEST(Laplacian, TableIsSymmetricWithNonPositiveOffDiagonal) {
    for (const auto& g : {unit_interval(40), build_grid(DomainSpec::rectangle({0.0, 0.0}, {1.0, 1.0}, {8, 8}))}) {
        const auto lap = assemble_laplacian(g, 0.7);
        const auto& t = lap.table();
        EXPECT_EQ((t - t.transpose()).cwiseAbs().maxCoeff(), 0.0);
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
                if (i != j) {
                    EXPECT_LE(t(i, j), 0.0);
                }
            }
            // Exterior is zero, so every row sum (the operator on the indicator) is positive.
            EXPECT_GT(t.row(i).sum(), 0.0);
        }
    }
}

TEST(Laplacian, ZeroFieldMapsToZero) {
    const auto g = unit_interval(32);
    EXPECT_EQ(l2_norm(apply_laplacian(assemble_laplacian(g, 0.5), Field(g))), 0.0);
    const auto grad = assemble_gradient(g, 0.5);
    EXPECT_EQ(apply_gradient(grad, Field(g)).values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Composition, ResidualShrinksUnderRefinement) {
    double prev = 1.0;
    for (int n : {64, 128, 256}) {
        const auto g = unit_interval(n);
        const auto u = field_from_function(g, [](const Point& p) {
            const double r = 2.0 * p[0] - 1.0;
            return std::abs(r) < 1.0 ? std::exp(-1.0 / (1.0 - r * r)) : 0.0;
        });
        const double res = composition_residual(assemble_gradient(g, 0.5), assemble_laplacian(g, 0.5), u);
        EXPECT_LT(res, prev) << "n=" << n;
        prev = res;
    }
    EXPECT_LT(prev, 0.02);
}

TEST(Composition, TableMatchesAppliedOperators) {
    const auto g = unit_interval(24);
    const auto grad = assemble_gradient(g, 0.5);
    const Field u = field_from_function(g, [](const Point& p) { return std::sin(3.0 * p[0]); });
    Field applied = -1.0 * apply_divergence(grad, apply_gradient(grad, u));
    applied.values().array() += exterior_flux(grad, u);
    const Eigen::VectorXd tabled = composed_laplacian_table(grad) * u.values();
    EXPECT_LT((applied.values() - tabled).cwiseAbs().maxCoeff(), 1e-10 * tabled.cwiseAbs().maxCoeff());
}

TEST(Operators, KindAndGridMismatchesThrow) {
    const auto g = unit_interval(16);
    const auto grad = assemble_gradient(g, 0.5);
    const auto lap = assemble_laplacian(g, 0.5);
    EXPECT_THROW(apply_gradient(lap, Field(g)), ArgumentError);
    EXPECT_THROW(apply_laplacian(grad, Field(g)), ArgumentError);
    EXPECT_THROW(apply_laplacian(lap, Field(unit_interval(32))), ArgumentError);
    EXPECT_THROW(composition_residual(grad, assemble_laplacian(g, 0.4), Field(g)), ArgumentError);
    EXPECT_THROW(assemble_laplacian(build_grid(DomainSpec::rectangle({0.0, 0.0}, {2.0, 1.0}, {8, 8})), 0.5), ArgumentError);
    QuadratureParams q;
    q.tail_radius = 0.5;
    EXPECT_THROW(assemble_laplacian(g, 0.5, q), ArgumentError);
}

TEST(Operators, BinaryDumpHeader) {
    const auto g = unit_interval(8);
    const auto grad = assemble_gradient(g, 0.25);
    const auto path = (std::filesystem::temp_directory_path() / "fracvar_test_op.fvop").string();
    write_operator(path, grad);
    std::ifstream is(path, std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    EXPECT_EQ(std::string(magic, 4), "FVOP");
    EXPECT_EQ(detail::read_le<std::uint32_t>(is, "d"), 1u);
    EXPECT_EQ(detail::read_le<double>(is, "s"), 0.25);
    EXPECT_EQ(detail::read_le<std::uint32_t>(is, "N"), 8u);
    const auto rows = detail::read_le<std::uint32_t>(is, "rows");
    EXPECT_EQ(rows, grad.lattice().size());
    EXPECT_EQ(detail::read_le<std::uint32_t>(is, "components"), 1u);
    EXPECT_EQ(detail::read_le<double>(is, "T00"), grad.table()(0, 0));
    EXPECT_EQ(std::filesystem::file_size(path), 4 + 4 + 8 + 4 + 4 + 4 + 8 * rows * 8);
    std::filesystem::remove(path);
}

TEST(Gradient, GaussianBumpMiddleHalfL2) {
    // u = exp(-40 (x - 1/2)^2), s = 1/2, n = 256; relative L2 on the middle half.
    const double sigma = 1.0 / std::sqrt(80.0);
    const auto g = unit_interval(256);
    const auto grad = assemble_gradient(g, 0.5);
    const VectorField v = apply_gradient(grad, gaussian(g, 0.5, sigma));
    double num = 0.0, den = 0.0;
    for (std::size_t e = 0; e < v.size(); ++e) {
        const double x = grad.lattice().point(e)[0];
        if (x < 0.25 || x > 0.75) continue;
        const double ref = std::pow(sigma, -0.5) * gaussian_gradient(0.5, (x - 0.5) / sigma);
        num += std::pow(v.values()(static_cast<Eigen::Index>(e), 0) - ref, 2);
        den += ref * ref;
    }
    EXPECT_LT(std::sqrt(num / den), 0.03);
}

TEST(Gradient, EvenBumpVanishesAtCentre) {
    const auto g = unit_interval(64);
    const auto grad = assemble_gradient(g, 0.5);
    const VectorField v = apply_gradient(grad, gaussian(g, 0.5, 0.1));
    bool found = false;
    for (std::size_t e = 0; e < v.size(); ++e) {
        if (std::abs(grad.lattice().point(e)[0] - 0.5) < 1e-14) {
            found = true;
            EXPECT_LE(std::abs(v.values()(static_cast<Eigen::Index>(e), 0)), 1e-10);
        }
    }
    EXPECT_TRUE(found);
}

TEST(Gradient, Linearity) {
    const auto g = build_grid(DomainSpec::rectangle({0.0, 0.0}, {1.0, 1.0}, {8, 8}));
    const auto grad = assemble_gradient(g, 0.3);
    const Field u1 = field_from_function(g, [](const Point& p) { return p[0] * p[1]; });
    const Field u2 = field_from_function(g, [](const Point& p) { return std::cos(p[0] - 2.0 * p[1]); });
    const double a = -1.7;
    const Eigen::MatrixXd lhs = apply_gradient(grad, u1 + a * u2).values();
    const Eigen::MatrixXd rhs = apply_gradient(grad, u1).values() + a * apply_gradient(grad, u2).values();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * rhs.cwiseAbs().maxCoeff());
}

TEST(Laplacian, PositiveDefiniteAndRayleighBound) {
    const auto g = unit_interval(64);
    const auto lap = assemble_laplacian(g, 0.5);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap.table());
    const double lmin = es.eigenvalues()(0);
    EXPECT_GT(lmin, 0.0);
    std::mt19937 rng(3);
    std::normal_distribution<double> n01;
    for (int k = 0; k < 10; ++k) {
        Field u(g);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = n01(rng);
        EXPECT_GE(l2_inner(u, apply_laplacian(lap, u)), lmin * l2_inner(u, u) * (1.0 - 1e-12));
    }
    const Field phi(g, es.eigenvectors().col(0));
    EXPECT_NEAR(l2_inner(phi, apply_laplacian(lap, phi)), lmin * l2_inner(phi, phi), 1e-10 * lmin * l2_inner(phi, phi));
}

TEST(Laplacian, ApproachesMinusSecondDerivativeAsOrderTendsToOne) {
    const double sigma = 0.1;
    const auto g = unit_interval(512);
    const Field u = gaussian(g, 0.5, sigma);
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {0.9, 0.95, 0.99}) {
        EXPECT_TRUE(std::isfinite(normalizing_constants(1, s).C));
        const Field w = apply_laplacian(assemble_laplacian(g, s), u);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double z = (g->node(i)[0] - 0.5) / sigma;
            const double ref = (1.0 - z * z) * std::exp(-0.5 * z * z) / (sigma * sigma);
            num += std::pow(w[i] - ref, 2);
            den += ref * ref;
        }
        const double rel = std::sqrt(num / den);
        EXPECT_LT(rel, prev) << "s=" << s;
        prev = rel;
    }
    EXPECT_LT(prev, 0.05);
}

TEST(Divergence, ZeroFieldMapsToZero) {
    const auto g = unit_interval(16);
    const auto grad = assemble_gradient(g, 0.5);
    EXPECT_EQ(l2_norm(apply_divergence(grad, VectorField(grad.lattice_ptr()))), 0.0);
}

TEST(Composition, ZeroFieldHasZeroResidual) {
    const auto g = unit_interval(16);
    EXPECT_EQ(composition_residual(assemble_gradient(g, 0.5), assemble_laplacian(g, 0.5), Field(g)), 0.0);
}
