#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

#include <Eigen/Dense>

#include "fracvar/error.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"

namespace fracvar {

struct EigenPair {
    double lambda = 0.0;
    Field phi;              // ||phi||_{L2} = 1, phi >= 0
    double residual = 0.0;  // ||A phi - lambda phi||_{L2}
    int iterations = 0;
};

struct EigenOptions {
    double tol = 1e-10;
    int max_iterations = 10000;
};

/// Smallest eigenpair of a symmetric positive definite nodal table by inverse power iteration.
inline EigenPair first_eigenpair(const Eigen::MatrixXd& table, const GridPtr& grid, const EigenOptions& opts = {}) {
    const auto n = static_cast<Eigen::Index>(grid->size());
    if (table.rows() != n || table.cols() != n) throw ArgumentError("first_eigenpair: table does not match grid");
    if (!(opts.tol > 0.0) || opts.max_iterations < 1) throw ArgumentError("first_eigenpair: invalid options");
    const Eigen::LLT<Eigen::MatrixXd> llt(table);
    if (llt.info() != Eigen::Success) throw ConvergenceError("first_eigenpair: table is not positive definite");

    const double w = grid->weight();
    auto norm = [w](const Eigen::VectorXd& v) { return std::sqrt(w * v.squaredNorm()); };

    Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
    v /= norm(v);
    EigenPair out;
    for (int it = 1; it <= opts.max_iterations; ++it) {
        Eigen::VectorXd next = llt.solve(v);
        next /= norm(next);
        const Eigen::VectorXd av = table * next;
        const double lambda = next.dot(av) / next.squaredNorm();
        const double res = norm(av - lambda * next);
        v = std::move(next);
        if (res <= opts.tol) {
            out.lambda = lambda;
            out.residual = res;
            out.iterations = it;
            break;
        }
        if (it == opts.max_iterations) {
            throw ConvergenceError("first_eigenpair: no convergence in " + std::to_string(it) + " iterations (residual " +
                                   std::to_string(res) + ")");
        }
    }
    if (v.sum() < 0.0) v = -v;
    const double scale = v.cwiseAbs().maxCoeff();
    if (v.minCoeff() < -1e-12 * scale) {
        throw ConvergenceError("first_eigenpair: eigenvector changes sign (min " + std::to_string(v.minCoeff()) + ")");
    }
    v = v.cwiseMax(0.0);
    out.phi = Field(grid, std::move(v));
    return out;
}

inline EigenPair first_eigenpair(const NonlocalOperator& lap, const EigenOptions& opts = {}) {
    require_kind(lap, OperatorKind::laplacian, "first_eigenpair");
    return first_eigenpair(lap.table(), lap.grid_ptr(), opts);
}

inline EigenPair first_eigenpair(const NonlocalOperator& lap, double tol) { return first_eigenpair(lap, EigenOptions{tol, 10000}); }

/// <u, (-Delta)^s u> / ||u||^2.
inline double rayleigh_quotient(const NonlocalOperator& lap, const Field& u) {
    require_kind(lap, OperatorKind::laplacian, "rayleigh_quotient");
    require_same_grid(lap.grid(), u.grid(), "rayleigh_quotient");
    const double uu = u.values().squaredNorm();
    if (uu == 0.0) throw ArgumentError("rayleigh_quotient: zero field");
    return u.values().dot(lap.table() * u.values()) / uu;
}

/// Columns x[,y],value; lambda in a leading comment line.
inline void write_eigenpair_csv(const std::string& path, const EigenPair& pair) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    const Grid& g = pair.phi.grid();
    os << std::setprecision(17);
    os << "# lambda1=" << pair.lambda << "\n";
    os << (g.dimension() == 1 ? "x,value\n" : "x,y,value\n");
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point p = g.node(i);
        os << p[0] << ',';
        if (g.dimension() == 2) os << p[1] << ',';
        os << pair.phi[i] << '\n';
    }
    if (!os) throw Error("write failed: " + path);
}

}  // namespace fracvar
