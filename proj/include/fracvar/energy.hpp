#pragma once

#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "fracvar/coeffs.hpp"
#include "fracvar/error.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"

namespace fracvar {

using GradientPtr = std::shared_ptr<const NonlocalOperator>;

/// J(u) = int Gamma(|grad^s u|^2 / 2) - int F(u) - int h u.
///
/// The first integral runs over the dual lattice of the gradient operator (Omega plus its
/// exterior collar); the field beyond the collar enters through the monopole term
/// gamma(0) * tail * (int u)^2 / 2.
struct EnergyModel {
    GradientPtr grad;
    CoefficientModel coeff;
    ReactionModel reaction;
    Field h;

    const Grid& grid() const { return grad->grid(); }
};

inline EnergyModel make_energy_model(GradientPtr grad, CoefficientModel coeff, ReactionModel reaction, Field h,
                                     bool paper_regime = true) {
    if (!grad) throw ArgumentError("energy model needs a gradient operator");
    require_kind(*grad, OperatorKind::gradient, "make_energy_model");
    require_same_grid(grad->grid(), h.grid(), "make_energy_model");
    if (paper_regime && h.values().minCoeff() < 0.0) throw ArgumentError("forcing h must be nonnegative");
    return {std::move(grad), coeff, reaction, std::move(h)};
}

/// ||u||_{H^s_0}: the L2 norm of grad^s u over the lattice plus the far-field monopole.
inline double hs_norm(const NonlocalOperator& grad, const Field& u) {
    const VectorField g = apply_gradient(grad, u);
    const double mass = u.grid().weight() * u.values().sum();
    return std::sqrt(l2_inner(g, g) + grad.tail() * mass * mass);
}

namespace detail {

inline double quasilinear_value(const EnergyModel& m, const VectorField& g, double mass) {
    const Eigen::VectorXd t = 0.5 * g.squared_norms();
    double acc = 0.0;
    for (Eigen::Index e = 0; e < t.size(); ++e) acc += m.coeff.Gamma(t[e]);
    return g.lattice().weight() * acc + 0.5 * m.coeff.gamma(0.0) * m.grad->tail() * mass * mass;
}

/// gamma(|grad u|^2 / 2) grad u on the lattice.
inline VectorField weighted_flux(const CoefficientModel& coeff, const VectorField& g) {
    const Eigen::VectorXd t = 0.5 * g.squared_norms();
    Eigen::MatrixXd out = g.values();
    for (Eigen::Index e = 0; e < t.size(); ++e) out.row(e) *= coeff.gamma(t[e]);
    return VectorField(g.lattice_ptr(), std::move(out));
}

inline double mass(const Field& u) { return u.grid().weight() * u.values().sum(); }

}  // namespace detail

/// Phi(u) = int Gamma(|grad^s u|^2 / 2).
inline double quasilinear_part(const EnergyModel& m, const Field& u) {
    require_same_grid(m.grid(), u.grid(), "quasilinear_part");
    return detail::quasilinear_value(m, apply_gradient(*m.grad, u), detail::mass(u));
}

inline double energy(const EnergyModel& m, const Field& u) {
    require_same_grid(m.grid(), u.grid(), "energy");
    double reaction = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) reaction += m.reaction.F(u[i]);
    const double value = quasilinear_part(m, u) - u.grid().weight() * reaction - l2_inner(m.h, u);
    if (!std::isfinite(value)) throw EvaluationError("energy is not finite");
    return value;
}

/// Nodal representer g of J'(u): J'(u)[phi] = sum_i w_i g_i phi_i.
struct EnergyGradient {
    Field representer;

    double pair(const Field& phi) const { return l2_inner(representer, phi); }
};

/// Representer of Phi'(u): -div^s(gamma grad^s u) plus the far-field term.
inline Field quasilinear_gradient(const EnergyModel& m, const Field& u) {
    require_same_grid(m.grid(), u.grid(), "quasilinear_gradient");
    const VectorField flux = detail::weighted_flux(m.coeff, apply_gradient(*m.grad, u));
    Field out = -1.0 * apply_divergence(*m.grad, flux);
    out.values().array() += m.coeff.gamma(0.0) * m.grad->tail() * detail::mass(u);
    return out;
}

inline EnergyGradient energy_gradient(const EnergyModel& m, const Field& u) {
    Field g = quasilinear_gradient(m, u);
    for (std::size_t i = 0; i < u.size(); ++i) g[i] -= m.reaction.f(u[i]) + m.h[i];
    if (!g.values().allFinite()) throw EvaluationError("energy gradient is not finite");
    return {std::move(g)};
}

/// Nodal Hessian of J at u, scaled like the representer: J''(u)[v, w] = sum_i w_i (H v)_i w_i.
inline Eigen::MatrixXd energy_hessian(const EnergyModel& m, const Field& u) {
    require_same_grid(m.grid(), u.grid(), "energy_hessian");
    const NonlocalOperator& grad = *m.grad;
    const VectorField g = apply_gradient(grad, u);
    const auto d = static_cast<int>(g.values().cols());
    const Eigen::Index rows = g.values().rows(), n = static_cast<Eigen::Index>(u.size());
    const Eigen::VectorXd t = 0.5 * g.squared_norms();
    Eigen::VectorXd gam(rows), dgam(rows);
    for (Eigen::Index e = 0; e < rows; ++e) {
        gam[e] = m.coeff.gamma(t[e]);
        dgam[e] = m.coeff.gamma_prime(t[e]);
    }
    const double w = u.grid().weight();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    // Per face the block is gamma I + gamma' g g^T, with eigenvalues gamma and gamma + gamma' |g|^2.
    // When both are nonnegative it has the symmetric root R = sqrt(gamma) I + (sqrt(mu) - sqrt(gamma)) e e^T
    // and the Hessian is sum_a B_a^T B_a, B_a = sum_b diag(R_ab) G_b.
    const Eigen::VectorXd norms2 = g.squared_norms();
    const Eigen::VectorXd mu = gam + dgam.cwiseProduct(norms2);
    if (gam.minCoeff() >= 0.0 && mu.minCoeff() >= 0.0) {
        const Eigen::VectorXd root = gam.cwiseSqrt();
        Eigen::VectorXd bend(rows);
        for (Eigen::Index e = 0; e < rows; ++e) bend[e] = norms2[e] > 0.0 ? (std::sqrt(mu[e]) - root[e]) / norms2[e] : 0.0;
        for (int a = 0; a < d; ++a) {
            Eigen::MatrixXd z = root.asDiagonal() * grad.table(a);
            for (int b = 0; b < d; ++b) {
                const Eigen::VectorXd r = bend.cwiseProduct(g.values().col(a)).cwiseProduct(g.values().col(b));
                z.noalias() += r.asDiagonal() * grad.table(b);
            }
            out.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose());
        }
        out = out.selfadjointView<Eigen::Lower>();
    } else {
        for (int a = 0; a < d; ++a) {
            Eigen::MatrixXd z = Eigen::MatrixXd::Zero(rows, n);
            for (int b = 0; b < d; ++b) {
                Eigen::VectorXd diag = dgam.cwiseProduct(g.values().col(a)).cwiseProduct(g.values().col(b));
                if (a == b) diag += gam;
                z.noalias() += diag.asDiagonal() * grad.table(b);
            }
            out.noalias() += grad.table(a).transpose() * z;
        }
    }
    out *= g.lattice().weight() / w;
    out.array() += m.coeff.gamma(0.0) * grad.tail() * w;
    for (Eigen::Index i = 0; i < n; ++i) out(i, i) -= m.reaction.f_prime(u.values()[i]);
    return out;
}

/// J'(u)[phi] by direct quadrature of the weighted pairing, independent of the representer.
inline double directional_derivative(const EnergyModel& m, const Field& u, const Field& phi) {
    const VectorField gu = apply_gradient(*m.grad, u);
    const VectorField gp = apply_gradient(*m.grad, phi);
    const Eigen::VectorXd t = 0.5 * gu.squared_norms();
    double acc = 0.0;
    for (Eigen::Index e = 0; e < t.size(); ++e) acc += m.coeff.gamma(t[e]) * gu.values().row(e).dot(gp.values().row(e));
    double value = gu.lattice().weight() * acc + m.coeff.gamma(0.0) * m.grad->tail() * detail::mass(u) * detail::mass(phi);
    double reaction = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) reaction += (m.reaction.f(u[i]) + m.h[i]) * phi[i];
    return value - u.grid().weight() * reaction;
}

/// Phi(u1) - Phi(u2) - Phi'(u2)[u1 - u2]; nonnegative whenever t -> Gamma(t^2) is convex.
inline double convexity_gap(const EnergyModel& m, const Field& u1, const Field& u2) {
    const Field diff = u1 - u2;
    return quasilinear_part(m, u1) - quasilinear_part(m, u2) - l2_inner(quasilinear_gradient(m, u2), diff);
}

/// int gamma(|grad^s u_base|^2 / (2 t^2)) <grad^s v, grad^s w> over the lattice.
/// With v_n = t_n u_n this is the quasilinear pairing of the sequence u_n = v_n / t_n.
inline double weighted_form(const EnergyModel& m, double t, const Field& u_base, const Field& v, const Field& w) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ArgumentError("weighted_form: scale t must be positive");
    const VectorField gb = apply_gradient(*m.grad, u_base);
    const VectorField gv = apply_gradient(*m.grad, v);
    const VectorField gw = apply_gradient(*m.grad, w);
    const Eigen::VectorXd tau = gb.squared_norms() / (2.0 * t * t);
    double acc = 0.0;
    for (Eigen::Index e = 0; e < tau.size(); ++e) acc += m.coeff.gamma(tau[e]) * gv.values().row(e).dot(gw.values().row(e));
    return gv.lattice().weight() * acc;
}

/// <beta(z1) - beta(z2), z1 - z2> with beta(z) = gamma(|z|^2 / 2) z.
inline double monotonicity_pairing(const CoefficientModel& coeff, const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) {
    if (z1.size() != z2.size()) throw ArgumentError("monotonicity_pairing: dimension mismatch");
    if (!z1.allFinite() || !z2.allFinite()) throw ArgumentError("monotonicity_pairing: non-finite vector");
    const Eigen::VectorXd b1 = coeff.gamma(0.5 * z1.squaredNorm()) * z1;
    const Eigen::VectorXd b2 = coeff.gamma(0.5 * z2.squaredNorm()) * z2;
    return (b1 - b2).dot(z1 - z2);
}

}  // namespace fracvar
